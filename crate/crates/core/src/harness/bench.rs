//! Seeded, parallel ablation sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    run_episode_with, EnvironmentSpec, EpisodeConfig, EpisodeResult, FailureCause, HarnessError,
};
use crate::feedback::FeedbackConfig;
use crate::kitchen::Disturbance;
use crate::planner::Planner;

/// Cartesian product of tasks, feedback configurations and disturbance
/// levels applied to a template episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub tasks: Vec<String>,
    pub feedback: Vec<FeedbackConfig>,
    #[serde(default = "zero_disturbance")]
    pub disturbance: Vec<f64>,
    pub template: EpisodeConfig,
}

fn zero_disturbance() -> Vec<f64> {
    vec![0.0]
}

impl Sweep {
    pub fn expand(&self) -> Vec<EpisodeConfig> {
        let mut out = Vec::new();
        for task in &self.tasks {
            for fb in &self.feedback {
                for &d in &self.disturbance {
                    let mut cfg = self.template.clone();
                    cfg.feedback = fb.clone();
                    match &mut cfg.environment {
                        EnvironmentSpec::Tabletop { task: t, noise, .. } => {
                            *t = task.clone();
                            noise.disturbance_prob = d;
                        }
                        EnvironmentSpec::Kitchen { task: t, scenario } => {
                            *t = task.clone();
                            scenario.outcome.disturbance = if d > 0.0 {
                                Disturbance::KnockFromGripper(d)
                            } else {
                                Disturbance::None
                            };
                        }
                    }
                    cfg.label = Some(format!("{task}/{}/d={d}", fb.label()));
                    out.push(cfg);
                }
            }
        }
        out
    }
}

fn default_episodes() -> usize {
    10
}

/// Benchmark file (TOML): explicit `[[cells]]` and/or a `[sweep]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes_per_cell: usize,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub cells: Vec<EpisodeConfig>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

impl BenchmarkSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn all_cells(&self) -> Vec<EpisodeConfig> {
        let mut cells = self.cells.clone();
        if let Some(s) = &self.sweep {
            cells.extend(s.expand());
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    pub task: String,
    pub feedback: String,
    pub disturbance: f64,
    pub dialect: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    /// Causes of failed episodes only.
    pub failure_causes: BTreeMap<FailureCause, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub base_seed: u64,
    pub episodes_per_cell: usize,
    pub cells: Vec<CellReport>,
}

/// One line of the per-episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLine {
    pub cell: usize,
    pub label: String,
    pub seed: u64,
    pub success: bool,
    pub steps_taken: usize,
    pub failure_cause: FailureCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub report: BenchmarkReport,
    pub episodes: Vec<EpisodeLine>,
}

impl BenchmarkOutcome {
    pub fn episodes_jsonl(&self) -> String {
        self.episodes
            .iter()
            .map(|e| serde_json::to_string(e).expect("episode line serializes") + "\n")
            .collect()
    }
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let w = self
            .cells
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(
            s,
            "{:<w$}  {:>8}  {:>7}  {:>6}  causes",
            "cell", "success", "rate", "steps"
        );
        for c in &self.cells {
            let causes: Vec<String> = c
                .failure_causes
                .iter()
                .map(|(k, v)| format!("{}={v}", k.name()))
                .collect();
            let _ = writeln!(
                s,
                "{:<w$}  {:>8}  {:>7.3}  {:>6.2}  {}",
                c.label,
                format!("{}/{}", c.successes, c.episodes),
                c.success_rate,
                c.mean_steps,
                causes.join(" ")
            );
        }
        s
    }
}

fn cell_label(cfg: &EpisodeConfig) -> String {
    cfg.label.clone().unwrap_or_else(|| {
        format!(
            "{}/{}/d={}",
            cfg.environment.task_label(),
            cfg.feedback.label(),
            cfg.environment.disturbance_level()
        )
    })
}

/// Runs `episodes_per_cell` episodes of every cell. Episode `k` of each cell
/// uses seed `base_seed + k`, so cells are paired on the same initial scenes.
/// Results are identical at any parallelism.
pub fn run_benchmark(
    cells: &[EpisodeConfig],
    episodes_per_cell: usize,
    base_seed: u64,
    parallelism: Option<usize>,
) -> Result<BenchmarkOutcome, HarnessError> {
    for c in cells {
        c.validate()?;
    }
    let planners: Vec<Box<dyn Planner>> = cells
        .iter()
        .map(|c| c.planner.build())
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|i| (0..episodes_per_cell as u64).map(move |k| (i, base_seed.wrapping_add(k))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let results: Vec<Result<EpisodeResult, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let cfg = EpisodeConfig {
                    seed,
                    ..cells[i].clone()
                };
                run_episode_with(&cfg, planners[i].as_ref())
            })
            .collect()
    });

    let mut episodes = Vec::with_capacity(jobs.len());
    for (&(i, seed), r) in jobs.iter().zip(results) {
        let r = r?;
        tracing::debug!(cell = i, seed, success = r.success, "episode finished");
        episodes.push(EpisodeLine {
            cell: i,
            label: cell_label(&cells[i]),
            seed,
            success: r.success,
            steps_taken: r.steps_taken,
            failure_cause: r.failure_cause,
        });
    }

    let reports = cells
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let mine: Vec<&EpisodeLine> = episodes.iter().filter(|e| e.cell == i).collect();
            let n = mine.len();
            let successes = mine.iter().filter(|e| e.success).count();
            let mut failure_causes = BTreeMap::new();
            for e in mine
                .iter()
                .filter(|e| e.failure_cause != FailureCause::None)
            {
                *failure_causes.entry(e.failure_cause).or_insert(0) += 1;
            }
            let ratio = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
            CellReport {
                label: cell_label(cfg),
                task: cfg.environment.task_label().to_string(),
                feedback: cfg.feedback.label(),
                disturbance: cfg.environment.disturbance_level(),
                dialect: cfg.dialect.id().to_string(),
                episodes: n,
                successes,
                success_rate: ratio(successes as f64),
                mean_steps: ratio(mine.iter().map(|e| e.steps_taken as f64).sum()),
                failure_causes,
            }
        })
        .collect();

    Ok(BenchmarkOutcome {
        report: BenchmarkReport {
            base_seed,
            episodes_per_cell,
            cells: reports,
        },
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::FeedbackSource::*;
    use crate::tabletop::NoiseConfig;

    fn cells() -> Vec<EpisodeConfig> {
        vec![
            EpisodeConfig::tabletop(
                "stack-all",
                FeedbackConfig::new(&[Object]),
                NoiseConfig::default(),
                0,
            ),
            EpisodeConfig::tabletop(
                "stack-all",
                FeedbackConfig::new(&[Object, Scene]),
                NoiseConfig::default(),
                0,
            ),
        ]
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let a = run_benchmark(&cells(), 6, 100, Some(1)).unwrap();
        let b = run_benchmark(&cells(), 6, 100, Some(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.episodes.len(), 12);
    }

    #[test]
    fn histogram_excludes_successes() {
        let out = run_benchmark(&cells(), 5, 7, None).unwrap();
        for c in &out.report.cells {
            let failed: usize = c.failure_causes.values().sum();
            assert_eq!(failed + c.successes, c.episodes);
            assert!(!c.failure_causes.contains_key(&FailureCause::None));
        }
    }

    #[test]
    fn sweep_expands_product() {
        let spec = BenchmarkSpec::from_toml(
            r#"
base_seed = 3
episodes_per_cell = 2

[sweep]
tasks = ["stack-all", "matching-bowls"]
disturbance = [0.0, 0.2]
feedback = [{ enabled = [] }, { enabled = ["object", "success"] }]

[sweep.template]
dialect = "sim_tabletop"
feedback = { enabled = [] }
environment = { kind = "tabletop", task = "stack-all" }
"#,
        )
        .unwrap();
        let cells = spec.all_cells();
        assert_eq!(cells.len(), 8);
        assert!(cells
            .iter()
            .any(|c| c.label.as_deref() == Some("matching-bowls/Object+Success/d=0.2")));
    }
}
