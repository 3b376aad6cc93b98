//! Discrete office-kitchen world for mobile manipulation.
//!
//! State is symbolic: where the robot is, what it holds, where each object
//! lives and whether the single drawer is open. Skills are gated by symbolic
//! preconditions and may fail stochastically or by scripted force.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabletop::strip_prefix_ci;

pub const GRIPPER: &str = "gripper";
pub const DRAWER: &str = "drawer";
pub const USER: &str = "user";

pub const DEFAULT_LOCATIONS: [&str; 5] = ["counter", "table", "trash", DRAWER, USER];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KitchenError {
    #[error("skill `{0}` is not afforded in the current state")]
    UnaffordedSkill(String),
    #[error("unknown kitchen task: {0}")]
    UnknownTask(String),
    #[error("unrecognized skill: {0}")]
    UnknownSkill(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Lowercases, trims and drops a leading article. "top drawer" folds into the drawer.
pub fn canonical_name(s: &str) -> String {
    let s = s.trim().trim_end_matches('.').trim();
    let s = ["the ", "a ", "an "]
        .iter()
        .find_map(|p| strip_prefix_ci(s, p))
        .unwrap_or(s)
        .trim()
        .to_lowercase();
    if s == "top drawer" {
        DRAWER.to_string()
    } else {
        s
    }
}

fn indefinite_article(noun: &str) -> &'static str {
    match noun.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// A kitchen skill with its object or location argument.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Skill {
    Find(String),
    PickUp(String),
    GoTo(String),
    PutDown(String),
    BringToUser,
    OpenDrawer,
    CloseDrawer,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    Find,
    PickUp,
    GoTo,
    PutDown,
    BringToUser,
    OpenDrawer,
    CloseDrawer,
    Done,
}

impl SkillKind {
    pub const ALL: [SkillKind; 8] = [
        SkillKind::Find,
        SkillKind::PickUp,
        SkillKind::GoTo,
        SkillKind::PutDown,
        SkillKind::BringToUser,
        SkillKind::OpenDrawer,
        SkillKind::CloseDrawer,
        SkillKind::Done,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SkillKind::Find => "find",
            SkillKind::PickUp => "pick_up",
            SkillKind::GoTo => "go_to",
            SkillKind::PutDown => "put_down",
            SkillKind::BringToUser => "bring_to_user",
            SkillKind::OpenDrawer => "open_drawer",
            SkillKind::CloseDrawer => "close_drawer",
            SkillKind::Done => "done",
        }
    }

    pub fn is_navigation(self) -> bool {
        matches!(
            self,
            SkillKind::Find | SkillKind::GoTo | SkillKind::BringToUser
        )
    }

    pub fn default_success_prob(self) -> f64 {
        match self {
            SkillKind::Find | SkillKind::GoTo | SkillKind::BringToUser | SkillKind::Done => 1.0,
            _ => 0.9,
        }
    }
}

impl Skill {
    pub fn kind(&self) -> SkillKind {
        match self {
            Skill::Find(_) => SkillKind::Find,
            Skill::PickUp(_) => SkillKind::PickUp,
            Skill::GoTo(_) => SkillKind::GoTo,
            Skill::PutDown(_) => SkillKind::PutDown,
            Skill::BringToUser => SkillKind::BringToUser,
            Skill::OpenDrawer => SkillKind::OpenDrawer,
            Skill::CloseDrawer => SkillKind::CloseDrawer,
            Skill::Done => SkillKind::Done,
        }
    }

    /// Canonical language description, e.g. "pick up the coke".
    pub fn description(&self) -> String {
        match self {
            Skill::Find(x) => format!("find {} {x}", indefinite_article(x)),
            Skill::PickUp(x) => format!("pick up the {x}"),
            Skill::GoTo(l) => format!("go to the {l}"),
            Skill::PutDown(x) => format!("put down the {x}"),
            Skill::BringToUser => "bring it to you".to_string(),
            Skill::OpenDrawer => "open the drawer".to_string(),
            Skill::CloseDrawer => "close the drawer".to_string(),
            Skill::Done => "done.".to_string(),
        }
    }

    /// Parses a step text into a skill. Tolerates articles, a missing "the",
    /// trailing periods, "from the drawer" / "on the table" qualifiers and the
    /// "tell you I'm done." terminal.
    pub fn parse(text: &str) -> Result<Skill, KitchenError> {
        let raw = text.trim();
        let t = raw.trim_end_matches('.').trim().to_lowercase();
        let unknown = || KitchenError::UnknownSkill(raw.to_string());
        if t == "done" || t == "tell you i'm done" || t == "tell you i am done" {
            return Ok(Skill::Done);
        }
        if t == "bring it to you" {
            return Ok(Skill::BringToUser);
        }
        if t == "open the drawer" || t == "open the top drawer" {
            return Ok(Skill::OpenDrawer);
        }
        if t == "close the drawer" || t == "close the top drawer" {
            return Ok(Skill::CloseDrawer);
        }
        let arg = |rest: &str| {
            let name = canonical_name(rest);
            if name.is_empty() {
                Err(unknown())
            } else {
                Ok(name)
            }
        };
        if let Some(rest) = t.strip_prefix("find ") {
            return arg(rest).map(Skill::Find);
        }
        if let Some(rest) = t.strip_prefix("pick up ") {
            let rest = rest.strip_suffix(" from the drawer").unwrap_or(rest);
            return arg(rest).map(Skill::PickUp);
        }
        if let Some(rest) = t.strip_prefix("go to ") {
            return arg(rest).map(Skill::GoTo);
        }
        if let Some(rest) = t.strip_prefix("put down ") {
            let obj = [" on the ", " in the ", " into the "]
                .iter()
                .find_map(|sep| rest.split_once(sep).map(|(o, _)| o))
                .unwrap_or(rest);
            return arg(obj).map(Skill::PutDown);
        }
        Err(unknown())
    }

    pub fn object(&self) -> Option<&str> {
        match self {
            Skill::Find(x) | Skill::PickUp(x) | Skill::PutDown(x) => Some(x),
            _ => None,
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.description())
    }
}

impl FromStr for Skill {
    type Err = KitchenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Skill::parse(s)
    }
}

impl Serialize for Skill {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.description())
    }
}

impl<'de> Deserialize<'de> for Skill {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Skill::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KitchenState {
    pub robot_at: String,
    pub holding: Option<String>,
    /// Object name to location name, `GRIPPER`, or `DRAWER` (inside the drawer).
    pub object_at: BTreeMap<String, String>,
    pub drawer_open: bool,
    pub locations: Vec<String>,
}

impl Default for KitchenState {
    fn default() -> Self {
        let counter = [
            "sprite",
            "mountain dew",
            "sponge",
            "apple",
            "orange",
            "banana",
            "energy bar",
            "trailmix",
            "rice chips",
        ];
        let table = [
            "coke",
            "grapefruit soda",
            "water",
            "tea",
            "kettle chips",
            "multigrain chips",
        ];
        let object_at = counter
            .iter()
            .map(|o| (o.to_string(), "counter".to_string()))
            .chain(table.iter().map(|o| (o.to_string(), "table".to_string())))
            .collect();
        Self {
            robot_at: "counter".to_string(),
            holding: None,
            object_at,
            drawer_open: false,
            locations: DEFAULT_LOCATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl KitchenState {
    pub fn location_of(&self, object: &str) -> Option<&str> {
        self.object_at.get(object).map(String::as_str)
    }

    pub fn has_location(&self, loc: &str) -> bool {
        self.locations.iter().any(|l| l == loc)
    }

    /// Objects the robot can see from where it stands, in name order. Drawer
    /// contents are visible only while the drawer is open.
    pub fn visible_objects(&self) -> Vec<String> {
        if self.robot_at == DRAWER && !self.drawer_open {
            return Vec::new();
        }
        self.object_at
            .iter()
            .filter(|(_, at)| **at == self.robot_at)
            .map(|(o, _)| o.clone())
            .collect()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let in_gripper: Vec<&String> = self
            .object_at
            .iter()
            .filter(|(_, at)| *at == GRIPPER)
            .map(|(o, _)| o)
            .collect();
        match (&self.holding, in_gripper.as_slice()) {
            (None, []) => {}
            (Some(h), [g]) if h == *g => {}
            _ => {
                return Err(format!(
                    "holding {:?} but gripper has {in_gripper:?}",
                    self.holding
                ))
            }
        }
        for (o, at) in &self.object_at {
            if at != GRIPPER && !self.has_location(at) {
                return Err(format!("{o} at unknown location {at}"));
            }
        }
        if !self.has_location(&self.robot_at) {
            return Err(format!("robot at unknown location {}", self.robot_at));
        }
        Ok(())
    }

    /// Every skill instance over this world's objects and locations.
    pub fn all_skills(&self) -> Vec<Skill> {
        let mut out = Vec::new();
        for o in self.object_at.keys() {
            out.push(Skill::Find(o.clone()));
            out.push(Skill::PickUp(o.clone()));
            out.push(Skill::PutDown(o.clone()));
        }
        for l in &self.locations {
            out.push(Skill::GoTo(l.clone()));
        }
        out.extend([
            Skill::BringToUser,
            Skill::OpenDrawer,
            Skill::CloseDrawer,
            Skill::Done,
        ]);
        out
    }
}

/// Symbolic precondition check for one skill.
pub fn is_afforded(state: &KitchenState, skill: &Skill) -> bool {
    match skill {
        Skill::PickUp(x) => match state.location_of(x) {
            Some(at) => {
                state.holding.is_none()
                    && at == state.robot_at
                    && (at != DRAWER || state.drawer_open)
            }
            None => false,
        },
        Skill::PutDown(x) => state.holding.as_deref() == Some(x.as_str()),
        Skill::Find(x) => state.object_at.contains_key(x),
        Skill::GoTo(l) => state.has_location(l),
        Skill::OpenDrawer | Skill::CloseDrawer => state.robot_at == DRAWER,
        Skill::BringToUser | Skill::Done => true,
    }
}

pub fn affordance_filter(state: &KitchenState, candidates: &[Skill]) -> Vec<Skill> {
    candidates
        .iter()
        .filter(|s| is_afforded(state, s))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disturbance {
    None,
    /// A navigation skill started while holding something fails with this
    /// probability and drops the held object where the robot stands.
    KnockFromGripper(f64),
}

/// Forces attempt `attempt` (1-based) of `skill` to fail. `skill` is either a
/// full description ("pick up the coke") or a kind name ("pick_up"), the latter
/// counting attempts across all objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedFailure {
    pub skill: String,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcomeModel {
    #[serde(default)]
    pub base_success_prob: BTreeMap<SkillKind, f64>,
    #[serde(default)]
    pub forced_failures: Vec<ForcedFailure>,
    #[serde(default = "no_disturbance")]
    pub disturbance: Disturbance,
}

fn no_disturbance() -> Disturbance {
    Disturbance::None
}

impl Default for SkillOutcomeModel {
    fn default() -> Self {
        Self {
            base_success_prob: BTreeMap::new(),
            forced_failures: Vec::new(),
            disturbance: Disturbance::None,
        }
    }
}

impl SkillOutcomeModel {
    /// Every skill always succeeds.
    pub fn reliable() -> Self {
        Self {
            base_success_prob: SkillKind::ALL.iter().map(|k| (*k, 1.0)).collect(),
            ..Self::default()
        }
    }

    pub fn success_prob(&self, kind: SkillKind) -> f64 {
        self.base_success_prob
            .get(&kind)
            .copied()
            .unwrap_or_else(|| kind.default_success_prob())
    }

    pub fn validate(&self) -> Result<(), KitchenError> {
        let bad = |p: f64| !(0.0..=1.0).contains(&p);
        if self.base_success_prob.values().any(|p| bad(*p)) {
            return Err(KitchenError::InvalidScenario(
                "success probability outside [0, 1]".into(),
            ));
        }
        if let Disturbance::KnockFromGripper(p) = self.disturbance {
            if bad(p) {
                return Err(KitchenError::InvalidScenario(
                    "knock probability outside [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Attempt counters used to key forced failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttemptCounter {
    by_skill: BTreeMap<String, u32>,
    by_kind: BTreeMap<SkillKind, u32>,
}

impl AttemptCounter {
    /// Records an attempt and returns `(attempt of this exact skill, attempt of this kind)`.
    pub fn record(&mut self, skill: &Skill) -> (u32, u32) {
        let a = self.by_skill.entry(skill.description()).or_default();
        *a += 1;
        let k = self.by_kind.entry(skill.kind()).or_default();
        *k += 1;
        (*a, *k)
    }
}

/// Executes one skill. `attempts` identifies the attempt index for forced
/// failures (see [`AttemptCounter::record`]). With `bypass`, unafforded skills
/// fail silently instead of erroring.
///
/// Exactly two uniforms are drawn per call, so the stream stays aligned
/// regardless of outcome.
pub fn execute_skill(
    state: &KitchenState,
    skill: &Skill,
    model: &SkillOutcomeModel,
    rng: &mut impl Rng,
    attempts: (u32, u32),
    bypass: bool,
) -> Result<(KitchenState, bool), KitchenError> {
    let outcome_roll: f64 = rng.random();
    let disturb_roll: f64 = rng.random();
    if !is_afforded(state, skill) {
        return if bypass {
            Ok((state.clone(), false))
        } else {
            Err(KitchenError::UnaffordedSkill(skill.description()))
        };
    }
    let kind = skill.kind();
    let forced = model.forced_failures.iter().any(|f| {
        (f.skill == kind.name() && f.attempt == attempts.1)
            || (Skill::parse(&f.skill).ok().as_ref() == Some(skill) && f.attempt == attempts.0)
    });
    let mut next = state.clone();
    if let (Disturbance::KnockFromGripper(p), Some(held)) = (model.disturbance, &state.holding) {
        if kind.is_navigation() && disturb_roll < p {
            next.object_at.insert(held.clone(), state.robot_at.clone());
            next.holding = None;
            return Ok((next, false));
        }
    }
    if forced || outcome_roll >= model.success_prob(kind) {
        return Ok((next, false));
    }
    match skill {
        Skill::Find(x) => {
            let at = &state.object_at[x];
            if at != GRIPPER {
                next.robot_at = at.clone();
            }
        }
        Skill::PickUp(x) => {
            next.object_at.insert(x.clone(), GRIPPER.to_string());
            next.holding = Some(x.clone());
        }
        Skill::GoTo(l) => next.robot_at = l.clone(),
        Skill::PutDown(x) => {
            next.object_at.insert(x.clone(), state.robot_at.clone());
            next.holding = None;
        }
        Skill::BringToUser => next.robot_at = USER.to_string(),
        Skill::OpenDrawer => next.drawer_open = true,
        Skill::CloseDrawer => next.drawer_open = false,
        Skill::Done => {}
    }
    Ok((next, true))
}

/// Goal predicate of a kitchen task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KitchenGoal {
    /// Holding any of these objects.
    Holding(Vec<String>),
    /// Any of `objects` at `location`.
    AnyAt {
        objects: Vec<String>,
        location: String,
    },
    DrawerOpen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KitchenTask {
    pub id: String,
    pub instruction: String,
    pub goal: KitchenGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categories(pub BTreeMap<String, Vec<String>>);

impl Default for Categories {
    fn default() -> Self {
        let c = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Categories(BTreeMap::from([
            (
                "soda".to_string(),
                c(&["coke", "sprite", "mountain dew", "grapefruit soda"]),
            ),
            (
                "caffeinated".to_string(),
                c(&["coke", "mountain dew", "tea"]),
            ),
            (
                "snack".to_string(),
                c(&[
                    "kettle chips",
                    "rice chips",
                    "multigrain chips",
                    "energy bar",
                    "trailmix",
                ]),
            ),
            ("cleaning".to_string(), c(&["sponge"])),
            ("fruit".to_string(), c(&["apple", "orange", "banana"])),
        ]))
    }
}

impl Categories {
    pub fn get(&self, name: &str) -> &[String] {
        self.0.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// The eight registered instructions.
pub fn default_tasks(categories: &Categories) -> Vec<KitchenTask> {
    let cat = |c: &str| categories.get(c).to_vec();
    let task = |id: &str, instruction: &str, goal| KitchenTask {
        id: id.to_string(),
        instruction: instruction.to_string(),
        goal,
    };
    vec![
        task(
            "pick-soda",
            "pick up a soda",
            KitchenGoal::Holding(cat("soda")),
        ),
        task(
            "pick-chips",
            "pick up the jalapeno or kettle chips",
            KitchenGoal::Holding(vec!["jalapeno chips".into(), "kettle chips".into()]),
        ),
        task(
            "pick-snack",
            "pick up a snack",
            KitchenGoal::Holding(cat("snack")),
        ),
        task(
            "pick-caffeinated",
            "pick up a caffeinated drink",
            KitchenGoal::Holding(cat("caffeinated")),
        ),
        task(
            "throw-away-soda",
            "can you throw away the soda on the table",
            KitchenGoal::AnyAt {
                objects: vec!["coke".into(), "grapefruit soda".into()],
                location: "trash".into(),
            },
        ),
        task(
            "bring-cleaner",
            "I spilled my coke, can you bring me something to clean it up",
            KitchenGoal::AnyAt {
                objects: cat("cleaning"),
                location: USER.into(),
            },
        ),
        task(
            "drawer-open",
            "leave the top drawer open",
            KitchenGoal::DrawerOpen,
        ),
        task(
            "coke-in-drawer",
            "put a coke in the top drawer",
            KitchenGoal::AnyAt {
                objects: vec!["coke".into()],
                location: DRAWER.into(),
            },
        ),
    ]
}

/// Resolves a task by id or by exact (case-insensitive) instruction text.
pub fn find_task(tasks: &[KitchenTask], key: &str) -> Result<KitchenTask, KitchenError> {
    let key = key.trim();
    tasks
        .iter()
        .find(|t| t.id == key || t.instruction.eq_ignore_ascii_case(key))
        .cloned()
        .ok_or_else(|| KitchenError::UnknownTask(key.to_string()))
}

pub fn goal_met(goal: &KitchenGoal, state: &KitchenState) -> bool {
    match goal {
        KitchenGoal::Holding(set) => state.holding.as_ref().is_some_and(|h| set.contains(h)),
        KitchenGoal::AnyAt { objects, location } => objects
            .iter()
            .any(|o| state.location_of(o) == Some(location.as_str())),
        KitchenGoal::DrawerOpen => state.drawer_open,
    }
}

/// Evaluates a registered task (by id or instruction) against `state`.
pub fn kitchen_goal_satisfied(task: &str, state: &KitchenState) -> Result<bool, KitchenError> {
    let tasks = default_tasks(&Categories::default());
    Ok(goal_met(&find_task(&tasks, task)?.goal, state))
}

/// Structured scenario file: initial state, outcome model and category table.
///
/// ```toml
/// robot_at = "counter"
/// drawer_open = false
/// locations = ["counter", "table", "trash", "drawer", "user"]
///
/// [objects]
/// coke = "table"
///
/// [outcome]
/// base_success_prob = { pick_up = 0.9 }
/// forced_failures = [{ skill = "pick_up", attempt = 1 }]
/// disturbance = { knock_from_gripper = 0.3 }
///
/// [categories]
/// soda = ["coke"]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KitchenScenario {
    #[serde(default)]
    pub robot_at: Option<String>,
    #[serde(default)]
    pub drawer_open: bool,
    #[serde(default)]
    pub locations: Option<Vec<String>>,
    #[serde(default)]
    pub objects: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub outcome: SkillOutcomeModel,
    #[serde(default)]
    pub categories: Option<BTreeMap<String, Vec<String>>>,
}

impl KitchenScenario {
    pub fn from_toml(text: &str) -> Result<Self, KitchenError> {
        let s: KitchenScenario =
            toml::from_str(text).map_err(|e| KitchenError::InvalidScenario(e.to_string()))?;
        s.outcome.validate()?;
        s.initial_state()
            .check_invariants()
            .map_err(KitchenError::InvalidScenario)?;
        Ok(s)
    }

    pub fn initial_state(&self) -> KitchenState {
        let mut st = KitchenState::default();
        if let Some(locs) = &self.locations {
            st.locations = locs.clone();
        }
        if let Some(objs) = &self.objects {
            st.object_at = objs
                .iter()
                .map(|(k, v)| (canonical_name(k), canonical_name(v)))
                .collect();
        }
        if let Some(r) = &self.robot_at {
            st.robot_at = canonical_name(r);
        }
        st.drawer_open = self.drawer_open;
        st
    }

    pub fn categories(&self) -> Categories {
        self.categories.clone().map(Categories).unwrap_or_default()
    }
}
