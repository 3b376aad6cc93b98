//! Feedback sources: object lists, success detection, task-progress scene
//! descriptions and the human question channel.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kitchen::KitchenState;
use crate::monologue::{GoalBase, SubGoal};
use crate::tabletop::{is_on, planar_distance, ObjectId, ObjectKind, PlaceTarget, TabletopState};

pub const DEFAULT_SUCCESS_RADIUS: f64 = 0.04;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("sub-goal names `{0}`, which is not in the scene")]
    UnknownObjectInGoal(String),
    #[error("no scripted answer for question {index} of episode {episode}: {question:?}")]
    FixtureMiss {
        episode: u64,
        index: usize,
        question: String,
    },
    #[error("invalid feedback configuration: {0}")]
    InvalidConfig(String),
    #[error("operator input failed: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSource {
    Object,
    Success,
    Scene,
    Human,
}

/// When Object feedback is emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectMode {
    /// Once, before the first planner turn.
    #[default]
    Initial,
    /// Before every planner turn.
    EveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealThresholds {
    pub stacking: f64,
    pub sorting: f64,
}

impl Default for RealThresholds {
    fn default() -> Self {
        Self {
            stacking: 0.03,
            sorting: 0.10,
        }
    }
}

/// Injected detector error rates, applied independently to each verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DetectorError {
    #[serde(default)]
    pub false_positive: f64,
    #[serde(default)]
    pub false_negative: f64,
}

impl DetectorError {
    /// Flips `truth` per the error rates. Draws exactly one uniform.
    pub fn corrupt(&self, truth: bool, rng: &mut impl Rng) -> bool {
        let u: f64 = rng.random();
        if truth {
            u >= self.false_negative
        } else {
            u < self.false_positive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub enabled: BTreeSet<FeedbackSource>,
    #[serde(default)]
    pub object_mode: ObjectMode,
    #[serde(default)]
    pub occlusion: bool,
    #[serde(default = "default_radius")]
    pub success_radius: f64,
    #[serde(default)]
    pub real_mode_thresholds: Option<RealThresholds>,
    #[serde(default)]
    pub detector_error: Option<DetectorError>,
}

fn default_radius() -> f64 {
    DEFAULT_SUCCESS_RADIUS
}

impl FeedbackConfig {
    pub fn new(sources: &[FeedbackSource]) -> Self {
        Self {
            enabled: sources.iter().copied().collect(),
            object_mode: ObjectMode::Initial,
            occlusion: false,
            success_radius: DEFAULT_SUCCESS_RADIUS,
            real_mode_thresholds: None,
            detector_error: None,
        }
    }

    pub fn none() -> Self {
        Self::new(&[])
    }

    pub fn has(&self, s: FeedbackSource) -> bool {
        self.enabled.contains(&s)
    }

    pub fn with_object_mode(mut self, mode: ObjectMode) -> Self {
        self.object_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        if self.has(FeedbackSource::Scene) && !self.has(FeedbackSource::Object) {
            return Err(FeedbackError::InvalidConfig(
                "Scene feedback requires Object feedback".into(),
            ));
        }
        if !(self.success_radius > 0.0) {
            return Err(FeedbackError::InvalidConfig(
                "success radius must be positive".into(),
            ));
        }
        if let Some(t) = self.real_mode_thresholds {
            if !(t.stacking > 0.0 && t.sorting > 0.0) {
                return Err(FeedbackError::InvalidConfig(
                    "thresholds must be positive".into(),
                ));
            }
        }
        if let Some(d) = self.detector_error {
            if !(0.0..=1.0).contains(&d.false_positive) || !(0.0..=1.0).contains(&d.false_negative)
            {
                return Err(FeedbackError::InvalidConfig(
                    "detector error rates must be in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Short label such as "Object+Success".
    pub fn label(&self) -> String {
        if self.enabled.is_empty() {
            return "None".to_string();
        }
        let names: Vec<&str> = self
            .enabled
            .iter()
            .map(|s| match s {
                FeedbackSource::Object => "Object",
                FeedbackSource::Success => "Success",
                FeedbackSource::Scene => "Scene",
                FeedbackSource::Human => "Human",
            })
            .collect();
        names.join("+")
    }
}

/// Tracks which blocks have been seen so covered ones can be reported as occluded.
///
/// A block with another block resting directly on it is hidden. Hidden blocks
/// that were visible at some earlier observation are occluded; never-seen
/// hidden blocks are omitted entirely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcclusionTracker {
    seen: BTreeSet<ObjectId>,
}

impl OcclusionTracker {
    pub fn observe(&mut self, state: &TabletopState) -> (Vec<String>, Vec<String>) {
        let hidden = |id: ObjectId| {
            state.get(id).is_some_and(|o| o.kind == ObjectKind::Block)
                && state
                    .supported_by(id)
                    .is_some_and(|above| above.kind == ObjectKind::Block)
        };
        let mut objects: Vec<_> = state.objects.iter().collect();
        objects.sort_by_key(|o| o.id);
        let mut visible = Vec::new();
        let mut occluded = Vec::new();
        for o in objects {
            if !hidden(o.id) {
                self.seen.insert(o.id);
                visible.push(o.name());
            } else if self.seen.contains(&o.id) {
                occluded.push(o.name());
            }
        }
        (visible, occluded)
    }
}

/// Object feedback for a tabletop state. Without a tracker every object is visible.
pub fn object_feedback(
    state: &TabletopState,
    tracker: Option<&mut OcclusionTracker>,
) -> (Vec<String>, Vec<String>) {
    match tracker {
        Some(t) => t.observe(state),
        None => {
            let mut objects: Vec<_> = state.objects.iter().collect();
            objects.sort_by_key(|o| o.id);
            (objects.iter().map(|o| o.name()).collect(), Vec::new())
        }
    }
}

/// Object feedback for the kitchen: what is visible where the robot stands.
pub fn kitchen_object_feedback(state: &KitchenState) -> Vec<String> {
    state.visible_objects()
}

/// Simulated success heuristic: the picked block lies within `radius` of the
/// target in the plane and, for object targets, sits higher than it.
pub fn success_feedback(
    curr: &TabletopState,
    pick: ObjectId,
    target: PlaceTarget,
    radius: f64,
) -> bool {
    is_on(curr, pick, target, radius)
}

/// Real-tabletop heuristic: the picked block ended within the threshold of
/// the intended place point. Block targets use the stacking threshold,
/// bowls and locations the sorting one.
pub fn real_success_feedback(
    prev: &TabletopState,
    curr: &TabletopState,
    pick: ObjectId,
    target: PlaceTarget,
    thresholds: RealThresholds,
) -> bool {
    let intended = match target {
        PlaceTarget::Location(l) => l.anchor(),
        PlaceTarget::Object(id) => match prev.get(id) {
            Some(o) => o.xy(),
            None => return false,
        },
    };
    let threshold = match target {
        PlaceTarget::Object(id) if prev.get(id).is_some_and(|o| o.is_block()) => {
            thresholds.stacking
        }
        _ => thresholds.sorting,
    };
    curr.get(pick)
        .is_some_and(|p| planar_distance(p.xy(), intended) < threshold)
}

/// Resolves a sub-goal against a tabletop state.
pub fn resolve_goal(
    state: &TabletopState,
    goal: &SubGoal,
) -> Result<(ObjectId, PlaceTarget), FeedbackError> {
    let top = state
        .find_by_name(&goal.top)
        .ok_or_else(|| FeedbackError::UnknownObjectInGoal(goal.top.clone()))?;
    let base = match &goal.base {
        GoalBase::Location(l) => PlaceTarget::Location(*l),
        GoalBase::Object(name) => PlaceTarget::Object(
            state
                .find_by_name(name)
                .ok_or_else(|| FeedbackError::UnknownObjectInGoal(name.clone()))?
                .id,
        ),
    };
    Ok((top.id, base))
}

/// The inferred sub-goals that currently hold, in inference order.
pub fn scene_feedback(
    state: &TabletopState,
    goals: &[SubGoal],
    radius: f64,
) -> Result<Vec<SubGoal>, FeedbackError> {
    let mut achieved = Vec::new();
    for g in goals {
        let (top, base) = resolve_goal(state, g)?;
        if success_feedback(state, top, base, radius) {
            achieved.push(g.clone());
        }
    }
    Ok(achieved)
}

/// Answers planner questions.
pub trait HumanChannel: Send {
    /// `index` counts questions within the episode from zero.
    fn answer(
        &mut self,
        episode: u64,
        index: usize,
        question: &str,
    ) -> Result<String, FeedbackError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureAnswer {
    #[serde(default)]
    pub episode: Option<u64>,
    #[serde(default)]
    pub index: Option<usize>,
    /// Case-insensitive substring of the question.
    #[serde(default)]
    pub matcher: Option<String>,
    pub answer: String,
}

/// Scripted answers: exact `(episode, index)` keys first, then substring matchers.
///
/// File form (TOML):
///
/// ```toml
/// [[answer]]
/// episode = 0
/// index = 0
/// answer = "Yes, you were successful"
///
/// [[answer]]
/// matcher = "preference"
/// answer = "Anything without sugar"
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HumanFixture {
    #[serde(default, rename = "answer")]
    pub answers: Vec<FixtureAnswer>,
}

impl HumanFixture {
    pub fn from_toml(text: &str) -> Result<Self, FeedbackError> {
        toml::from_str(text).map_err(|e| FeedbackError::InvalidConfig(e.to_string()))
    }

    pub fn keyed(episode: u64, answers: &[&str]) -> Self {
        Self {
            answers: answers
                .iter()
                .enumerate()
                .map(|(i, a)| FixtureAnswer {
                    episode: Some(episode),
                    index: Some(i),
                    matcher: None,
                    answer: a.to_string(),
                })
                .collect(),
        }
    }

    pub fn lookup(&self, episode: u64, index: usize, question: &str) -> Option<&str> {
        if question.trim().is_empty() {
            return None;
        }
        let episode_ok = |a: &FixtureAnswer| a.episode.is_none_or(|e| e == episode);
        if let Some(a) = self
            .answers
            .iter()
            .find(|a| a.index == Some(index) && a.episode.is_some() && episode_ok(a))
        {
            return Some(&a.answer);
        }
        let q = question.to_lowercase();
        self.answers
            .iter()
            .filter(|a| episode_ok(a))
            .find(|a| {
                a.matcher
                    .as_ref()
                    .is_some_and(|m| q.contains(&m.to_lowercase()))
            })
            .map(|a| a.answer.as_str())
    }
}

impl HumanChannel for HumanFixture {
    fn answer(
        &mut self,
        episode: u64,
        index: usize,
        question: &str,
    ) -> Result<String, FeedbackError> {
        self.lookup(episode, index, question)
            .map(str::to_string)
            .ok_or_else(|| FeedbackError::FixtureMiss {
                episode,
                index,
                question: question.to_string(),
            })
    }
}

/// Prompts an operator and reads one answer line per question.
pub struct InteractiveHuman<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> InteractiveHuman<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

impl<R: BufRead + Send, W: Write + Send> HumanChannel for InteractiveHuman<R, W> {
    fn answer(
        &mut self,
        _episode: u64,
        _index: usize,
        question: &str,
    ) -> Result<String, FeedbackError> {
        let io = |e: std::io::Error| FeedbackError::Io(e.to_string());
        write!(self.output, "Robot asks: {question}\nHuman: ").map_err(io)?;
        self.output.flush().map_err(io)?;
        let mut line = String::new();
        self.input.read_line(&mut line).map_err(io)?;
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    }
}
