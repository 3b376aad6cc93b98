use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use embodied_loop::feedback::{
    FeedbackConfig, FeedbackSource, HumanFixture, InteractiveHuman, ObjectMode,
};
use embodied_loop::golden::LISTINGS;
use embodied_loop::harness::{
    replay_listing, run_benchmark, run_episode, run_episode_interactive, BenchmarkSpec,
    EnvironmentSpec, EpisodeConfig, EpisodeResult, FewShot, HarnessError, PlannerSpec,
    DEFAULT_MAX_STEPS,
};
use embodied_loop::kitchen::{Disturbance, KitchenScenario};
use embodied_loop::monologue::{parse_document, render_document, render_transcript, Dialect};
use embodied_loop::planner::{Decode, OraclePolicy};
use embodied_loop::tabletop::NoiseConfig;

/// Closed-loop language planning over simulated tabletop and kitchen worlds.
#[derive(Parser)]
#[command(name = "eloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode and print its transcript.
    Run(RunArgs),
    /// Run a benchmark sweep from a TOML file.
    Bench(BenchArgs),
    /// Validate a listing, check it re-renders byte-exactly and replay its episodes.
    Replay(ReplayArgs),
    /// Kitchen episode in the active dialect; questions are answered at the terminal.
    Interactive(InteractiveArgs),
    /// Verify the bundled reference listings.
    Golden {
        /// Print a listing instead of verifying.
        #[arg(long)]
        print: Option<Dialect>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerKind {
    Oracle,
    Llm,
}

#[derive(Args)]
struct PlannerArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    planner: PlannerKind,
    /// Oracle: do not repeat an action reported as failed.
    #[arg(long)]
    no_retry: bool,
    /// Oracle: ask the human when the goal admits several objects.
    #[arg(long)]
    ask: bool,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 256)]
    max_tokens: u32,
}

impl PlannerArgs {
    fn spec(&self) -> PlannerSpec {
        match self.planner {
            PlannerKind::Oracle => PlannerSpec::Oracle {
                policy: OraclePolicy {
                    retry_on_failure: !self.no_retry,
                    ask_when_ambiguous: self.ask,
                    ..OraclePolicy::default()
                },
            },
            PlannerKind::Llm => PlannerSpec::Llm {
                decode: Decode {
                    temperature: self.temperature,
                    max_tokens: self.max_tokens,
                },
                client: None,
            },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Full episode configuration (TOML); other flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task id ("stack-all", "pick-soda") or instruction sentence.
    #[arg(long, default_value = "stack-all")]
    task: String,
    #[arg(long, default_value = "sim_tabletop")]
    dialect: Dialect,
    /// Comma-separated sources: object, success, scene, human; or "none".
    #[arg(long, default_value = "object,success")]
    feedback: String,
    /// Emit object feedback before every turn rather than once.
    #[arg(long)]
    every_step: bool,
    /// Report covered blocks as occluded (real tabletop).
    #[arg(long)]
    occlusion: bool,
    /// Place noise standard deviation in meters (tabletop).
    #[arg(long, default_value_t = 0.02)]
    place_sigma: f64,
    /// Disturbance probability per step.
    #[arg(long, default_value_t = 0.0)]
    disturbance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Scripted human answers (TOML).
    #[arg(long)]
    human: Option<PathBuf>,
    /// Few-shot prefix file; defaults to the bundled listing.
    #[arg(long)]
    few_shot: Option<PathBuf>,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Write the episode result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the result as JSON instead of the transcript.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    spec: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Directory for report.json, report.txt and episodes.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplayArgs {
    file: PathBuf,
    #[arg(long)]
    dialect: Dialect,
    /// Only replay this episode.
    #[arg(long)]
    episode: Option<usize>,
}

#[derive(Args)]
struct InteractiveArgs {
    #[arg(long, default_value = "pick-snack")]
    task: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenario file (TOML) for the kitchen.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    planner: PlannerArgs,
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn parse_feedback(s: &str) -> Result<FeedbackConfig, HarnessError> {
    let mut sources = Vec::new();
    for part in s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty() && *p != "none")
    {
        sources.push(match part.to_ascii_lowercase().as_str() {
            "object" => FeedbackSource::Object,
            "success" => FeedbackSource::Success,
            "scene" => FeedbackSource::Scene,
            "human" => FeedbackSource::Human,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown feedback source {other:?}"
                )))
            }
        });
    }
    Ok(FeedbackConfig::new(&sources))
}

fn run_config(a: &RunArgs) -> Result<EpisodeConfig, HarnessError> {
    if let Some(p) = &a.config {
        return toml::from_str(&read(p)?).map_err(|e| HarnessError::Config(e.to_string()));
    }
    let mut feedback = parse_feedback(&a.feedback)?;
    feedback.occlusion = a.occlusion;
    if a.every_step {
        feedback.object_mode = ObjectMode::EveryStep;
    }
    let environment = if a.dialect.is_kitchen() {
        let mut scenario = KitchenScenario::default();
        if a.disturbance > 0.0 {
            scenario.outcome.disturbance = Disturbance::KnockFromGripper(a.disturbance);
        }
        EnvironmentSpec::Kitchen {
            task: a.task.clone(),
            scenario,
        }
    } else {
        let noise = NoiseConfig {
            place_sigma: a.place_sigma,
            disturbance_prob: a.disturbance,
            ..NoiseConfig::default()
        };
        EnvironmentSpec::Tabletop {
            task: a.task.clone(),
            blocks: None,
            bowls: None,
            noise,
            partial_tower: false,
        }
    };
    let human = a
        .human
        .as_deref()
        .map(|p| {
            HumanFixture::from_toml(&read(p)?).map_err(|e| HarnessError::Config(e.to_string()))
        })
        .transpose()?;
    Ok(EpisodeConfig {
        label: None,
        environment,
        dialect: a.dialect,
        feedback,
        planner: a.planner.spec(),
        max_steps: a.max_steps,
        seed: a.seed,
        few_shot: a.few_shot.clone().map(FewShot::File).unwrap_or_default(),
        human,
    })
}

fn summary(r: &EpisodeResult) -> String {
    format!(
        "success={} steps={} cause={} seed={}",
        r.success,
        r.steps_taken,
        r.failure_cause.name(),
        r.seed
    )
}

fn print_episode(r: &EpisodeResult) -> Result<(), HarnessError> {
    print!("{}", render_transcript(&r.transcript)?.text);
    println!("\n--\n{}", summary(r));
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<ExitCode, HarnessError> {
    let cfg = run_config(&a)?;
    let r = run_episode(&cfg)?;
    let json = serde_json::to_string_pretty(&r).expect("result serializes");
    if let Some(p) = &a.out {
        write(p, &json)?;
    }
    if a.json {
        println!("{json}");
    } else {
        print_episode(&r)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode, HarnessError> {
    let spec = BenchmarkSpec::from_toml(&read(&a.spec)?)?;
    if spec.episodes_per_cell == 0 {
        return Err(HarnessError::Config(
            "episodes_per_cell must be at least 1".into(),
        ));
    }
    let cells = spec.all_cells();
    if cells.is_empty() {
        return Err(HarnessError::Config("benchmark has no cells".into()));
    }
    let out = run_benchmark(
        &cells,
        spec.episodes_per_cell,
        spec.base_seed,
        a.parallelism.or(spec.parallelism),
    )?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        write(&dir.join("report.json"), &out.report.to_json())?;
        write(&dir.join("report.txt"), &out.report.to_table())?;
        write(&dir.join("episodes.jsonl"), &out.episodes_jsonl())?;
    }
    if a.json {
        println!("{}", out.report.to_json());
    } else {
        print!("{}", out.report.to_table());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode, HarnessError> {
    let text = read(&a.file)?;
    let doc = parse_document(a.dialect, &text)?;
    let mut ok = true;
    for (k, ep) in doc.episodes.iter().enumerate() {
        if let Err(e) = ep.validate() {
            println!("episode {k}: invalid: {e}");
            ok = false;
        }
    }
    let rendered = render_document(&doc)?;
    if rendered == text {
        println!(
            "re-render: byte-exact ({} bytes, {} episodes)",
            text.len(),
            doc.episodes.len()
        );
    } else {
        let at = rendered
            .bytes()
            .zip(text.bytes())
            .position(|(x, y)| x != y)
            .unwrap_or(rendered.len().min(text.len()));
        println!("re-render: differs at byte {at}");
        ok = false;
    }
    let picked: Vec<usize> = match a.episode {
        Some(k) => vec![k],
        None => (0..doc.episodes.len())
            .filter(|&k| !doc.episodes[k].planner_turns().is_empty())
            .collect(),
    };
    for k in picked {
        let r = replay_listing(&doc, k)?;
        println!("episode {k}: {}", summary(&r));
        ok &= r.success;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_interactive(a: InteractiveArgs) -> Result<ExitCode, HarnessError> {
    let scenario = match &a.scenario {
        Some(p) => KitchenScenario::from_toml(&read(p)?)
            .map_err(|e| HarnessError::Config(e.to_string()))?,
        None => KitchenScenario::default(),
    };
    let mut cfg = EpisodeConfig::kitchen(
        &a.task,
        scenario,
        FeedbackConfig::new(&[FeedbackSource::Success, FeedbackSource::Human]),
        a.seed,
    );
    cfg.dialect = Dialect::KitchenActive;
    cfg.few_shot = FewShot::Golden;
    cfg.planner = a.planner.spec();
    let planner = cfg.planner.build()?;
    let human = InteractiveHuman::new(BufReader::new(io::stdin()), io::stderr());
    let r = run_episode_interactive(&cfg, planner.as_ref(), Box::new(human))?;
    print_episode(&r)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_golden(print: Option<Dialect>) -> Result<ExitCode, HarnessError> {
    if let Some(d) = print {
        let l = LISTINGS
            .iter()
            .find(|l| l.dialect == d)
            .expect("one listing per dialect");
        print!("{}", l.text);
        return Ok(ExitCode::SUCCESS);
    }
    let mut ok = true;
    for l in LISTINGS {
        let verdict = match l.roundtrip_mismatch() {
            Ok(None) => {
                let doc = l.document()?;
                let bad: Vec<usize> = (0..doc.episodes.len())
                    .filter(|&k| !doc.episodes[k].planner_turns().is_empty())
                    .filter(|&k| !replay_listing(&doc, k).is_ok_and(|r| r.success))
                    .collect();
                if bad.is_empty() {
                    format!("ok ({} episodes)", doc.episodes.len())
                } else {
                    format!("replay failed for episodes {bad:?}")
                }
            }
            Ok(Some(at)) => format!("re-render differs at byte {at}"),
            Err(e) => format!("parse error: {e}"),
        };
        ok &= verdict.starts_with("ok");
        println!("{:<16} {verdict}", l.name);
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Interactive(a) => cmd_interactive(a),
        Command::Golden { print } => cmd_golden(print),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
