//! Episode runner and failure attribution.

mod bench;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{
    run_benchmark, BenchmarkOutcome, BenchmarkReport, BenchmarkSpec, CellReport, Sweep,
};

use crate::client::{ClientConfig, ClientError, CompletionClient};
use crate::env::{EnvError, Environment, KitchenEnv, ScriptedEnv, TabletopEnv};
use crate::feedback::{FeedbackConfig, HumanChannel, HumanFixture};
use crate::golden::GoldenListing;
use crate::kitchen::{Disturbance, KitchenScenario};
use crate::monologue::{
    parse_completion, render_prompt, Dialect, Document, MonologueError, ParsedAction, Transcript,
};
use crate::planner::{
    Decode, LlmPlanner, OraclePlanner, OraclePolicy, Planner, PlannerError, PlannerQuery,
};
use crate::tabletop::{
    init_episode, init_partial_tower, sample_episode, NoiseConfig, TabletopTask, TaskFamily,
};

pub const DEFAULT_MAX_STEPS: usize = 15;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Monologue(#[from] MonologueError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Tabletop {
        /// A task family id ("stack-all") or an instruction sentence.
        task: String,
        #[serde(default)]
        blocks: Option<usize>,
        #[serde(default)]
        bowls: Option<usize>,
        #[serde(default)]
        noise: NoiseConfig,
        /// Start from three blocks with two already stacked.
        #[serde(default)]
        partial_tower: bool,
    },
    Kitchen {
        /// Task id ("pick-soda") or registered instruction.
        task: String,
        #[serde(default)]
        scenario: KitchenScenario,
    },
}

impl EnvironmentSpec {
    pub fn task_label(&self) -> &str {
        match self {
            EnvironmentSpec::Tabletop { task, .. } | EnvironmentSpec::Kitchen { task, .. } => task,
        }
    }

    pub fn disturbance_level(&self) -> f64 {
        match self {
            EnvironmentSpec::Tabletop { noise, .. } => noise.disturbance_prob,
            EnvironmentSpec::Kitchen { scenario, .. } => match scenario.outcome.disturbance {
                Disturbance::KnockFromGripper(p) => p,
                Disturbance::None => 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerSpec {
    Oracle {
        #[serde(default)]
        policy: OraclePolicy,
    },
    /// Completion service configured from the environment.
    Llm {
        #[serde(default)]
        decode: Decode,
        #[serde(default)]
        client: Option<ClientConfig>,
    },
}

impl Default for PlannerSpec {
    fn default() -> Self {
        PlannerSpec::Oracle {
            policy: OraclePolicy::default(),
        }
    }
}

impl PlannerSpec {
    pub fn decode(&self) -> Decode {
        match self {
            PlannerSpec::Llm { decode, .. } => *decode,
            PlannerSpec::Oracle { .. } => Decode::default(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Planner>, HarnessError> {
        Ok(match self {
            PlannerSpec::Oracle { policy } => Box::new(OraclePlanner::new(*policy)),
            PlannerSpec::Llm { client, .. } => {
                let mut cfg = client.clone().unwrap_or_default();
                let env = ClientConfig::from_env();
                cfg.endpoint = cfg.endpoint.or(env.endpoint);
                cfg.api_key = env.api_key;
                cfg.model = cfg.model.or(env.model);
                Box::new(LlmPlanner::new(Arc::new(CompletionClient::http(cfg)?)))
            }
        })
    }
}

/// Text placed before the live episode in every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FewShot {
    None,
    /// The bundled listing for the episode's dialect.
    #[default]
    Golden,
    File(PathBuf),
}

impl FewShot {
    pub fn resolve(&self, dialect: Dialect) -> Result<String, HarnessError> {
        match self {
            FewShot::None => Ok(String::new()),
            FewShot::Golden => Ok(GoldenListing::by_dialect(dialect).text.to_string()),
            FewShot::File(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Io {
                path: p.clone(),
                message: e.to_string(),
            }),
        }
    }
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub environment: EnvironmentSpec,
    pub dialect: Dialect,
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub planner: PlannerSpec,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub few_shot: FewShot,
    /// Scripted answers for planner questions.
    #[serde(default)]
    pub human: Option<HumanFixture>,
}

impl EpisodeConfig {
    /// A sim-tabletop oracle episode for `task` with the given feedback.
    pub fn tabletop(task: &str, feedback: FeedbackConfig, noise: NoiseConfig, seed: u64) -> Self {
        Self {
            label: None,
            environment: EnvironmentSpec::Tabletop {
                task: task.to_string(),
                blocks: None,
                bowls: None,
                noise,
                partial_tower: false,
            },
            dialect: Dialect::SimTabletop,
            feedback,
            planner: PlannerSpec::default(),
            max_steps: DEFAULT_MAX_STEPS,
            seed,
            few_shot: FewShot::None,
            human: None,
        }
    }

    pub fn kitchen(
        task: &str,
        scenario: KitchenScenario,
        feedback: FeedbackConfig,
        seed: u64,
    ) -> Self {
        Self {
            label: None,
            environment: EnvironmentSpec::Kitchen {
                task: task.to_string(),
                scenario,
            },
            dialect: Dialect::Kitchen,
            feedback,
            planner: PlannerSpec::default(),
            max_steps: DEFAULT_MAX_STEPS,
            seed,
            few_shot: FewShot::None,
            human: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.max_steps == 0 {
            return Err(HarnessError::Config("max_steps must be at least 1".into()));
        }
        self.feedback
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match (&self.environment, self.dialect.is_kitchen()) {
            (EnvironmentSpec::Tabletop { .. }, true) | (EnvironmentSpec::Kitchen { .. }, false) => {
                Err(HarnessError::Config(format!(
                    "dialect {} does not fit the environment",
                    self.dialect
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn build_environment(&self) -> Result<Box<dyn Environment>, HarnessError> {
        let human = self
            .human
            .clone()
            .map(|h| Box::new(h) as Box<dyn HumanChannel>);
        self.build_environment_with(human)
    }

    /// Like [`build_environment`](Self::build_environment) with an explicit
    /// human channel in place of the configured fixture.
    pub fn build_environment_with(
        &self,
        human: Option<Box<dyn HumanChannel>>,
    ) -> Result<Box<dyn Environment>, HarnessError> {
        self.validate()?;
        let setup = |e: EnvError| HarnessError::Config(e.to_string());
        match &self.environment {
            EnvironmentSpec::Tabletop {
                task,
                blocks,
                bowls,
                noise,
                partial_tower,
            } => {
                let world = |e: crate::tabletop::WorldError| HarnessError::Config(e.to_string());
                let (task, state) = if *partial_tower {
                    let t = TabletopTask::parse_instruction(task)
                        .or_else(|| {
                            (task.parse::<TaskFamily>().ok() == Some(TaskFamily::StackAll))
                                .then_some(TabletopTask::StackAll)
                        })
                        .ok_or_else(|| {
                            HarnessError::Config("a partial tower needs a stacking task".into())
                        })?;
                    (t, init_partial_tower(self.seed).map_err(world)?)
                } else if let Ok(family) = task.parse::<TaskFamily>() {
                    let (nb, nw) = family.default_counts();
                    sample_episode(family, blocks.unwrap_or(nb), bowls.unwrap_or(nw), self.seed)
                        .map_err(world)?
                } else {
                    let t = TabletopTask::parse_instruction(task).ok_or_else(|| {
                        HarnessError::Config(format!("unknown tabletop task {task:?}"))
                    })?;
                    let (nb, nw) = t.family().default_counts();
                    let state =
                        init_episode(&t, blocks.unwrap_or(nb), bowls.unwrap_or(nw), self.seed)
                            .map_err(world)?;
                    (t, state)
                };
                Ok(Box::new(
                    TabletopEnv::new(
                        self.dialect,
                        task,
                        state,
                        *noise,
                        self.feedback.clone(),
                        self.seed,
                    )
                    .map_err(setup)?,
                ))
            }
            EnvironmentSpec::Kitchen { task, scenario } => Ok(Box::new(
                KitchenEnv::new(
                    self.dialect,
                    task,
                    scenario,
                    self.feedback.clone(),
                    self.seed,
                    human,
                )
                .map_err(setup)?,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    None,
    MaxSteps,
    PlanningFailure,
    ControlFailure,
    SuccessDetectionError,
    Infeasible,
    MissingFixture,
}

impl FailureCause {
    pub fn name(self) -> &'static str {
        match self {
            FailureCause::None => "none",
            FailureCause::MaxSteps => "max_steps",
            FailureCause::PlanningFailure => "planning_failure",
            FailureCause::ControlFailure => "control_failure",
            FailureCause::SuccessDetectionError => "success_detection_error",
            FailureCause::Infeasible => "infeasible",
            FailureCause::MissingFixture => "missing_fixture",
        }
    }
}

/// How the loop ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Done,
    StepCap,
    /// Stopped by an error that already names its cause.
    Aborted {
        cause: FailureCause,
        message: String,
    },
}

/// Ground-truth record of one planner turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub completion: String,
    pub action: Option<ParsedAction>,
    /// The completion could not be parsed or named something absent.
    pub planning_error: bool,
    pub truth: Option<bool>,
    pub reported: Option<bool>,
    pub disturbed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps_taken: usize,
    pub failure_cause: FailureCause,
    pub transcript: Transcript,
    pub seed: u64,
    pub termination: Termination,
    pub trace: Vec<StepRecord>,
}

/// Classifies an unsuccessful episode from its trace, in priority order:
/// planning errors, detector verdicts that contradict ground truth, control
/// misses, then the step cap. A premature stop with none of these is a
/// planning failure.
pub fn attribute_failure(result: &EpisodeResult) -> FailureCause {
    if result.success {
        return FailureCause::None;
    }
    if let Termination::Aborted { cause, .. } = &result.termination {
        return *cause;
    }
    let t = &result.trace;
    if t.iter().any(|s| s.planning_error) {
        return FailureCause::PlanningFailure;
    }
    if t.iter()
        .any(|s| matches!((s.reported, s.truth), (Some(r), Some(g)) if r != g))
    {
        return FailureCause::SuccessDetectionError;
    }
    if t.iter().any(|s| s.truth == Some(false)) {
        return FailureCause::ControlFailure;
    }
    match result.termination {
        Termination::StepCap => FailureCause::MaxSteps,
        _ => FailureCause::PlanningFailure,
    }
}

/// Loop parameters independent of how the environment and planner were built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub max_steps: usize,
    pub seed: u64,
    pub decode: Decode,
}

/// Runs the closed loop until the planner stops, an error ends the episode or
/// the step cap is reached.
pub fn run_loop(
    env: &mut dyn Environment,
    planner: &dyn Planner,
    few_shot: &str,
    s: LoopSettings,
) -> EpisodeResult {
    let dialect = env.dialect();
    let mut t = Transcript::new(dialect);
    t.entries.extend(env.initial_entries());
    let mut trace: Vec<StepRecord> = Vec::new();
    let mut reprompted = false;
    let abort = |cause, message: String| Termination::Aborted { cause, message };

    let termination = loop {
        if trace.len() >= s.max_steps {
            break Termination::StepCap;
        }
        let prompt = match render_prompt(few_shot, &t) {
            Ok(p) => p,
            Err(e) => break abort(FailureCause::PlanningFailure, e.to_string()),
        };
        let query = PlannerQuery {
            prompt,
            stop_sequences: dialect.stop_sequences(),
            decode: s.decode,
            transcript: &t,
            kitchen: env.kitchen_knowledge(),
        };
        let completion = match planner.next_completion(&query) {
            Ok(c) => c,
            Err(PlannerError::NoFeasibleAction(m)) => break abort(FailureCause::Infeasible, m),
            Err(e @ PlannerError::Backend(_)) => {
                break abort(FailureCause::PlanningFailure, e.to_string())
            }
        };
        let mut record = StepRecord {
            completion: completion.clone(),
            action: None,
            planning_error: false,
            truth: None,
            reported: None,
            disturbed: None,
        };
        let parsed = match parse_completion(dialect, &completion) {
            Ok(c) => c,
            Err(e) => {
                record.planning_error = true;
                trace.push(record);
                if reprompted {
                    break abort(FailureCause::PlanningFailure, e.to_string());
                }
                reprompted = true;
                continue;
            }
        };
        reprompted = false;
        record.action = Some(parsed.action.clone());
        t.entries.extend(parsed.entries);
        if parsed.action == ParsedAction::Done {
            trace.push(record);
            break Termination::Done;
        }
        match env.step(&parsed.action, &t) {
            Ok(report) => {
                record.truth = report.truth;
                record.reported = report.reported;
                record.disturbed = report.disturbed;
                t.entries.extend(report.entries);
                trace.push(record);
            }
            Err(e) => {
                let cause = match e {
                    EnvError::MissingFixture(_) => FailureCause::MissingFixture,
                    _ => FailureCause::PlanningFailure,
                };
                record.planning_error = cause == FailureCause::PlanningFailure;
                trace.push(record);
                break abort(cause, e.to_string());
            }
        }
    };

    let success = termination == Termination::Done && env.goal_satisfied(&t).unwrap_or(false);
    let mut result = EpisodeResult {
        success,
        steps_taken: trace.len(),
        failure_cause: FailureCause::None,
        transcript: t,
        seed: s.seed,
        termination,
        trace,
    };
    result.failure_cause = attribute_failure(&result);
    result
}

/// Runs one configured episode with the given planner.
pub fn run_episode_with(
    config: &EpisodeConfig,
    planner: &dyn Planner,
) -> Result<EpisodeResult, HarnessError> {
    let mut env = config.build_environment()?;
    let few_shot = config.few_shot.resolve(config.dialect)?;
    let settings = LoopSettings {
        max_steps: config.max_steps,
        seed: config.seed,
        decode: config.planner.decode(),
    };
    Ok(run_loop(env.as_mut(), planner, &few_shot, settings))
}

/// Runs one episode with an explicit human channel, e.g. an operator terminal.
pub fn run_episode_interactive(
    config: &EpisodeConfig,
    planner: &dyn Planner,
    human: Box<dyn HumanChannel>,
) -> Result<EpisodeResult, HarnessError> {
    let mut env = config.build_environment_with(Some(human))?;
    let few_shot = config.few_shot.resolve(config.dialect)?;
    let settings = LoopSettings {
        max_steps: config.max_steps,
        seed: config.seed,
        decode: config.planner.decode(),
    };
    Ok(run_loop(env.as_mut(), planner, &few_shot, settings))
}

/// Runs one configured episode, building the planner from the config.
pub fn run_episode(config: &EpisodeConfig) -> Result<EpisodeResult, HarnessError> {
    let planner = config.planner.build()?;
    run_episode_with(config, planner.as_ref())
}

/// Replays episode `index` of a listing: the planner is a mock serving the
/// recorded completions and the environment feeds back the recorded entries.
pub fn replay_listing(doc: &Document, index: usize) -> Result<EpisodeResult, HarnessError> {
    let recorded = doc
        .episodes
        .get(index)
        .ok_or_else(|| HarnessError::Config(format!("listing has no episode {index}")))?
        .clone();
    let mock = crate::client::mock_from_listing(doc, index)?;
    let client = CompletionClient::new(
        ClientConfig {
            retries: 0,
            ..ClientConfig::default()
        },
        Arc::new(mock),
    )?;
    let planner = LlmPlanner::new(Arc::new(client));
    let few_shot = doc.few_shot_before(index)?;
    let mut env = ScriptedEnv::new(recorded, true);
    let settings = LoopSettings {
        max_steps: env.turn_count().max(DEFAULT_MAX_STEPS),
        seed: index as u64,
        decode: Decode::default(),
    };
    Ok(run_loop(&mut env, &planner, &few_shot, settings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ScriptedBackend;
    use crate::feedback::FeedbackSource::*;
    use crate::kitchen::ForcedFailure;
    use crate::monologue::Entry;

    fn scripted(texts: &[&str]) -> LlmPlanner {
        let backend = ScriptedBackend::new(texts.iter().map(|s| Ok(s.to_string())).collect());
        let client = CompletionClient::new(
            ClientConfig {
                retries: 0,
                ..ClientConfig::default()
            },
            Arc::new(backend),
        )
        .unwrap();
        LlmPlanner::new(Arc::new(client))
    }

    #[test]
    fn oracle_stacks_noiselessly() {
        for seed in 0..5 {
            let cfg = EpisodeConfig::tabletop(
                "stack-all",
                FeedbackConfig::new(&[Object, Scene]),
                NoiseConfig::noiseless(),
                seed,
            );
            let r = run_episode(&cfg).unwrap();
            assert!(r.success, "seed {seed}: {:?}", r.failure_cause);
            // goal thought rides on the first action: two actions and a stop
            assert_eq!(r.steps_taken, 3);
            assert_eq!(r.transcript.action_count(), 3);
        }
    }

    #[test]
    fn step_cap_is_respected() {
        let cfg = EpisodeConfig {
            max_steps: 4,
            ..EpisodeConfig::tabletop(
                "stack-all",
                FeedbackConfig::new(&[Object]),
                NoiseConfig::noiseless(),
                0,
            )
        };
        let names = {
            let mut env = cfg.build_environment().unwrap();
            env.initial_entries()
        };
        let Entry::SceneObjects { visible, .. } = &names[0] else {
            panic!()
        };
        let line = format!(
            "Robot action: Pick the {} and place it on the middle.",
            visible[0]
        );
        let planner = scripted(&[line.as_str(); 10]);
        let r = run_episode_with(&cfg, &planner).unwrap();
        assert_eq!(r.steps_taken, 4);
        assert_eq!(r.failure_cause, FailureCause::MaxSteps);
    }

    #[test]
    fn unparseable_twice_is_planning_failure() {
        let cfg = EpisodeConfig::tabletop(
            "stack-all",
            FeedbackConfig::new(&[Object]),
            NoiseConfig::noiseless(),
            0,
        );
        let planner = scripted(&["I am not sure.", "Still unsure."]);
        let r = run_episode_with(&cfg, &planner).unwrap();
        assert_eq!(r.steps_taken, 2);
        assert_eq!(r.failure_cause, FailureCause::PlanningFailure);
    }

    #[test]
    fn forced_pick_failure_needs_success_feedback() {
        let scenario = KitchenScenario {
            outcome: crate::kitchen::SkillOutcomeModel {
                base_success_prob: crate::kitchen::SkillKind::ALL
                    .iter()
                    .map(|k| (*k, 1.0))
                    .collect(),
                forced_failures: vec![ForcedFailure {
                    skill: "pick_up".into(),
                    attempt: 1,
                }],
                ..Default::default()
            },
            ..KitchenScenario::default()
        };
        let off = run_episode(&EpisodeConfig::kitchen(
            "pick-soda",
            scenario.clone(),
            FeedbackConfig::none(),
            0,
        ))
        .unwrap();
        assert!(!off.success);
        assert_eq!(off.failure_cause, FailureCause::ControlFailure);
        let on = run_episode(&EpisodeConfig::kitchen(
            "pick-soda",
            scenario,
            FeedbackConfig::new(&[Success]),
            0,
        ))
        .unwrap();
        assert!(on.success);
    }

    #[test]
    fn success_iff_no_cause() {
        let r = run_episode(&EpisodeConfig::tabletop(
            "matching-bowls",
            FeedbackConfig::new(&[Object, Scene]),
            NoiseConfig::noiseless(),
            3,
        ))
        .unwrap();
        assert!(r.success);
        assert_eq!(attribute_failure(&r), FailureCause::None);
    }
}
