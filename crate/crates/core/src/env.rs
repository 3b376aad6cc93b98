//! Environments the episode loop drives: the tabletop and kitchen worlds
//! wrapped with their feedback sources, and a scripted replay of a recorded
//! transcript.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{
    object_feedback, real_success_feedback, scene_feedback, success_feedback, FeedbackConfig,
    FeedbackError, FeedbackSource, HumanChannel, ObjectMode, OcclusionTracker,
};
use crate::kitchen::{
    default_tasks, execute_skill, find_task, goal_met, AttemptCounter, KitchenScenario,
    KitchenState, KitchenTask, Skill, SkillOutcomeModel,
};
use crate::monologue::{Dialect, Entry, ParsedAction, SubGoal, Transcript};
use crate::planner::{infer_goals, KitchenKnowledge};
use crate::tabletop::{
    apply_disturbance, execute_pick_place, goal_satisfied, is_on, stream_rng, NamedLocation,
    NoiseConfig, PlaceTarget, TabletopState, TabletopTask, WorldError,
};

/// Stream id for injected detector errors, apart from world noise.
const DETECTOR_STREAM: u64 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    /// The plan referenced something that does not exist or cannot be done.
    #[error("planning error: {0}")]
    Planning(String),
    #[error("no human answer: {0}")]
    MissingFixture(String),
    #[error("invalid environment setup: {0}")]
    Setup(String),
}

impl From<FeedbackError> for EnvError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::FixtureMiss { .. } | FeedbackError::Io(_) => {
                EnvError::MissingFixture(e.to_string())
            }
            FeedbackError::UnknownObjectInGoal(_) => EnvError::Planning(e.to_string()),
            FeedbackError::InvalidConfig(_) => EnvError::Setup(e.to_string()),
        }
    }
}

/// What one executed action produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Feedback entries to append to the transcript.
    pub entries: Vec<Entry>,
    /// Ground-truth outcome of the action, where the world knows it.
    pub truth: Option<bool>,
    /// The success verdict shown to the planner, if any was computed.
    pub reported: Option<bool>,
    /// Object moved by a disturbance after the action.
    pub disturbed: Option<String>,
}

pub trait Environment: Send {
    fn dialect(&self) -> Dialect;
    /// Entries preceding the first planner turn.
    fn initial_entries(&mut self) -> Vec<Entry>;
    fn step(
        &mut self,
        action: &ParsedAction,
        transcript: &Transcript,
    ) -> Result<StepReport, EnvError>;
    /// Ground-truth task success at the moment the planner stops.
    fn goal_satisfied(&self, transcript: &Transcript) -> Result<bool, EnvError>;
    fn kitchen_knowledge(&self) -> Option<&KitchenKnowledge> {
        None
    }
}

fn corrupt(feedback: &FeedbackConfig, verdict: bool, rng: &mut ChaCha8Rng) -> bool {
    match feedback.detector_error {
        Some(d) => d.corrupt(verdict, rng),
        None => verdict,
    }
}

pub struct TabletopEnv {
    dialect: Dialect,
    task: TabletopTask,
    state: TabletopState,
    noise: NoiseConfig,
    feedback: FeedbackConfig,
    rng: ChaCha8Rng,
    detector_rng: ChaCha8Rng,
    tracker: Option<OcclusionTracker>,
}

impl TabletopEnv {
    pub fn new(
        dialect: Dialect,
        task: TabletopTask,
        state: TabletopState,
        noise: NoiseConfig,
        feedback: FeedbackConfig,
        seed: u64,
    ) -> Result<Self, EnvError> {
        if dialect.is_kitchen() {
            return Err(EnvError::Setup(format!(
                "{dialect} is not a tabletop dialect"
            )));
        }
        if dialect == Dialect::RealTabletop && feedback.has(FeedbackSource::Scene) {
            return Err(EnvError::Setup(
                "the real tabletop dialect has no scene descriptions".into(),
            ));
        }
        if feedback.has(FeedbackSource::Human) {
            return Err(EnvError::Setup(
                "tabletop episodes have no human channel".into(),
            ));
        }
        feedback.validate()?;
        noise
            .validate()
            .map_err(|e| EnvError::Setup(e.to_string()))?;
        let tracker = (feedback.occlusion && dialect == Dialect::RealTabletop)
            .then(OcclusionTracker::default);
        Ok(Self {
            dialect,
            task,
            state,
            rng: noise.rng(seed),
            detector_rng: stream_rng(seed, DETECTOR_STREAM),
            noise,
            feedback,
            tracker,
        })
    }

    pub fn state(&self) -> &TabletopState {
        &self.state
    }

    pub fn task(&self) -> &TabletopTask {
        &self.task
    }

    fn scene_objects(&mut self) -> Entry {
        let (visible, occluded) = object_feedback(&self.state, self.tracker.as_mut());
        match self.dialect {
            Dialect::RealTabletop => Entry::SceneObjects { visible, occluded },
            _ => Entry::visible(visible),
        }
    }

    /// Sub-goals the scene describer reports against: the planner's latest
    /// goal thought, else the task's own decomposition.
    fn scene_goals(&self, t: &Transcript) -> Vec<SubGoal> {
        t.entries
            .iter()
            .rev()
            .find_map(|e| match e {
                Entry::RobotThought(s) if s.to_lowercase().contains("goal state is") => {
                    crate::monologue::parse_goal_state(s).ok()
                }
                _ => None,
            })
            .unwrap_or_else(|| infer_goals(&self.task, &self.state.names()))
    }

    fn resolve(
        &self,
        pick: &str,
        place: &str,
    ) -> Result<(crate::tabletop::ObjectId, PlaceTarget), EnvError> {
        let unknown = |n: &str| EnvError::Planning(format!("no {n} in the scene"));
        let pick = self
            .state
            .find_by_name(pick)
            .ok_or_else(|| unknown(pick))?
            .id;
        let target = match NamedLocation::parse(place) {
            Some(l) => PlaceTarget::Location(l),
            None => PlaceTarget::Object(
                self.state
                    .find_by_name(place)
                    .ok_or_else(|| unknown(place))?
                    .id,
            ),
        };
        Ok((pick, target))
    }
}

impl Environment for TabletopEnv {
    fn dialect(&self) -> Dialect {
        self.dialect
    }

    fn initial_entries(&mut self) -> Vec<Entry> {
        let instruction = Entry::Instruction(self.task.instruction());
        let object = self.feedback.has(FeedbackSource::Object);
        match self.dialect {
            Dialect::RealTabletop => {
                let mut out = vec![instruction, Entry::Blank(String::new())];
                if object {
                    out.push(self.scene_objects());
                }
                out
            }
            _ => {
                let mut out = Vec::new();
                if object {
                    out.push(self.scene_objects());
                }
                out.push(instruction);
                out
            }
        }
    }

    fn step(&mut self, action: &ParsedAction, t: &Transcript) -> Result<StepReport, EnvError> {
        let ParsedAction::PickPlace { pick, place } = action else {
            return Err(EnvError::Planning(format!(
                "{action:?} is not a tabletop action"
            )));
        };
        let (pick, target) = self.resolve(pick, place)?;
        let prev = self.state.clone();
        let placed = execute_pick_place(&prev, pick, target, &self.noise, &mut self.rng).map_err(
            |e| match e {
                WorldError::InvalidTarget(m) => EnvError::Planning(m),
                other => EnvError::Setup(other.to_string()),
            },
        )?;
        let radius = self.feedback.success_radius;
        let truth = is_on(&placed.state, pick, target, radius);
        let verdict = match self.dialect {
            Dialect::RealTabletop => real_success_feedback(
                &prev,
                &placed.state,
                pick,
                target,
                self.feedback.real_mode_thresholds.unwrap_or_default(),
            ),
            _ => success_feedback(&placed.state, pick, target, radius),
        };
        let reported = corrupt(&self.feedback, verdict, &mut self.detector_rng);
        let (after, moved) = apply_disturbance(&placed.state, &self.noise, &mut self.rng);
        self.state = after;

        let mut entries = Vec::new();
        let success_on = self.feedback.has(FeedbackSource::Success);
        if success_on {
            entries.push(Entry::Success(reported));
        }
        if self.dialect == Dialect::RealTabletop {
            entries.push(Entry::Blank(String::new()));
        }
        if self.feedback.has(FeedbackSource::Object)
            && self.feedback.object_mode == ObjectMode::EveryStep
        {
            entries.push(self.scene_objects());
        }
        if self.feedback.has(FeedbackSource::Scene) {
            let goals = self.scene_goals(t);
            entries.push(Entry::AchievedSubgoals(scene_feedback(
                &self.state,
                &goals,
                radius,
            )?));
        }
        Ok(StepReport {
            entries,
            truth: Some(truth),
            reported: success_on.then_some(reported),
            disturbed: moved.and_then(|id| self.state.get(id)).map(|o| o.name()),
        })
    }

    fn goal_satisfied(&self, _t: &Transcript) -> Result<bool, EnvError> {
        goal_satisfied(&self.task, &self.state).map_err(|e| EnvError::Setup(e.to_string()))
    }
}

pub struct KitchenEnv {
    dialect: Dialect,
    task: KitchenTask,
    state: KitchenState,
    model: SkillOutcomeModel,
    feedback: FeedbackConfig,
    rng: ChaCha8Rng,
    detector_rng: ChaCha8Rng,
    attempts: AttemptCounter,
    human: Option<Box<dyn HumanChannel>>,
    questions: usize,
    seed: u64,
    knowledge: KitchenKnowledge,
}

impl KitchenEnv {
    pub fn new(
        dialect: Dialect,
        task: &str,
        scenario: &KitchenScenario,
        feedback: FeedbackConfig,
        seed: u64,
        human: Option<Box<dyn HumanChannel>>,
    ) -> Result<Self, EnvError> {
        if !dialect.is_kitchen() {
            return Err(EnvError::Setup(format!(
                "{dialect} is not a kitchen dialect"
            )));
        }
        if feedback.has(FeedbackSource::Scene) {
            return Err(EnvError::Setup(
                "kitchen scene feedback is the object list; use Object".into(),
            ));
        }
        feedback.validate()?;
        scenario
            .outcome
            .validate()
            .map_err(|e| EnvError::Setup(e.to_string()))?;
        let state = scenario.initial_state();
        state.check_invariants().map_err(EnvError::Setup)?;
        let tasks = default_tasks(&scenario.categories());
        let task = find_task(&tasks, task).map_err(|e| EnvError::Setup(e.to_string()))?;
        Ok(Self {
            dialect,
            task,
            knowledge: KitchenKnowledge {
                initial: state.clone(),
                tasks,
            },
            state,
            model: scenario.outcome.clone(),
            feedback,
            rng: stream_rng(seed, 1),
            detector_rng: stream_rng(seed, DETECTOR_STREAM),
            attempts: AttemptCounter::default(),
            human,
            questions: 0,
            seed,
        })
    }

    pub fn state(&self) -> &KitchenState {
        &self.state
    }

    pub fn task(&self) -> &KitchenTask {
        &self.task
    }

    fn check_names(&self, skill: &Skill) -> Result<(), EnvError> {
        if let Some(x) = skill.object() {
            if !self.state.object_at.contains_key(x) {
                return Err(EnvError::Planning(format!("no {x} in the kitchen")));
            }
        }
        if let Skill::GoTo(l) = skill {
            if !self.state.has_location(l) {
                return Err(EnvError::Planning(format!("no location called {l}")));
            }
        }
        Ok(())
    }
}

impl Environment for KitchenEnv {
    fn dialect(&self) -> Dialect {
        self.dialect
    }

    fn initial_entries(&mut self) -> Vec<Entry> {
        vec![Entry::Instruction(self.task.instruction.clone())]
    }

    fn step(&mut self, action: &ParsedAction, _t: &Transcript) -> Result<StepReport, EnvError> {
        let mut entries = Vec::new();
        let skill = match action {
            ParsedAction::KitchenSkill(s) => Some(s),
            ParsedAction::AskHuman { skill, question } => {
                let human = self.human.as_mut().ok_or_else(|| {
                    EnvError::MissingFixture(format!("nobody to ask {question:?}"))
                })?;
                let answer = human.answer(self.seed, self.questions, question)?;
                self.questions += 1;
                entries.push(Entry::HumanAnswer(answer));
                skill.as_ref()
            }
            other => {
                return Err(EnvError::Planning(format!(
                    "{other:?} is not a kitchen skill"
                )))
            }
        };
        let Some(skill) = skill else {
            return Ok(StepReport {
                entries,
                ..StepReport::default()
            });
        };
        self.check_names(skill)?;
        let attempts = self.attempts.record(skill);
        let (next, ok) = execute_skill(
            &self.state,
            skill,
            &self.model,
            &mut self.rng,
            attempts,
            true,
        )
        .map_err(|e| EnvError::Planning(e.to_string()))?;
        let dropped = self
            .state
            .holding
            .clone()
            .filter(|h| next.holding.as_ref() != Some(h) && !ok);
        self.state = next;
        let reported = corrupt(&self.feedback, ok, &mut self.detector_rng);
        let success_on = self.feedback.has(FeedbackSource::Success);
        if success_on {
            entries.push(Entry::Success(reported));
        }
        if self.feedback.has(FeedbackSource::Object) {
            entries.push(Entry::visible(self.state.visible_objects()));
        }
        Ok(StepReport {
            entries,
            truth: Some(ok),
            reported: success_on.then_some(reported),
            disturbed: dropped,
        })
    }

    fn goal_satisfied(&self, _t: &Transcript) -> Result<bool, EnvError> {
        Ok(goal_met(&self.task.goal, &self.state))
    }

    fn kitchen_knowledge(&self) -> Option<&KitchenKnowledge> {
        Some(&self.knowledge)
    }
}

/// Feeds back the environment entries of a recorded transcript, turn by turn.
/// Succeeds when the live transcript reproduces the recording through its
/// last planner turn.
pub struct ScriptedEnv {
    recorded: Transcript,
    turns: Vec<std::ops::Range<usize>>,
    served: usize,
    expected_success: bool,
}

impl ScriptedEnv {
    pub fn new(recorded: Transcript, expected_success: bool) -> Self {
        let turns = recorded.planner_turns();
        Self {
            recorded,
            turns,
            served: 0,
            expected_success,
        }
    }

    pub fn turn_count(&self) -> usize {
        self.turns.len()
    }
}

impl Environment for ScriptedEnv {
    fn dialect(&self) -> Dialect {
        self.recorded.dialect
    }

    fn initial_entries(&mut self) -> Vec<Entry> {
        let end = self
            .turns
            .first()
            .map_or(self.recorded.entries.len(), |r| r.start);
        self.recorded.entries[..end].to_vec()
    }

    fn step(&mut self, _action: &ParsedAction, _t: &Transcript) -> Result<StepReport, EnvError> {
        let Some(turn) = self.turns.get(self.served) else {
            return Err(EnvError::Planning(
                "more actions than the recording holds".into(),
            ));
        };
        let end = self
            .turns
            .get(self.served + 1)
            .map_or(self.recorded.entries.len(), |r| r.start);
        let entries = self.recorded.entries[turn.end..end].to_vec();
        self.served += 1;
        let reported = entries.iter().find_map(|e| match e {
            Entry::Success(b) => Some(*b),
            _ => None,
        });
        Ok(StepReport {
            entries,
            truth: None,
            reported,
            disturbed: None,
        })
    }

    fn goal_satisfied(&self, t: &Transcript) -> Result<bool, EnvError> {
        let end = self.turns.last().map_or(0, |r| r.end);
        Ok(self.expected_success && t.entries.as_slice() == &self.recorded.entries[..end])
    }
}
