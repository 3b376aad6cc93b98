//! Planners: a deterministic rule-based oracle and a completion-service client.
//!
//! Both produce raw completion text for the next planner turn. The oracle
//! reads everything it needs from the transcript, so it keeps no state between
//! calls.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, CompletionClient, CompletionRequest};
use crate::kitchen::{
    execute_skill, find_task, is_afforded, KitchenGoal, KitchenState, KitchenTask, Skill,
    SkillOutcomeModel, DRAWER, USER,
};
use crate::monologue::{
    done_text, goal_thought, parse_action_text, parse_goal_state, pick_place_text, Dialect, Entry,
    ParsedAction, SubGoal, Transcript,
};
use crate::tabletop::{stream_rng, NamedLocation, TabletopTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Backend(#[from] ClientError),
    #[error("no feasible action: {0}")]
    NoFeasibleAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decode {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decode {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

/// World knowledge handed to the oracle in the kitchen: the object map the
/// skill library was built from and the registered tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct KitchenKnowledge {
    pub initial: KitchenState,
    pub tasks: Vec<KitchenTask>,
}

pub struct PlannerQuery<'a> {
    pub prompt: String,
    pub stop_sequences: Vec<String>,
    pub decode: Decode,
    pub transcript: &'a Transcript,
    pub kitchen: Option<&'a KitchenKnowledge>,
}

pub trait Planner: Send + Sync {
    fn next_completion(&self, query: &PlannerQuery<'_>) -> Result<String, PlannerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OraclePolicy {
    /// Trust Success entries: a failed step leaves its sub-goal unmet.
    pub retry_on_failure: bool,
    /// Follow the latest scene report even when it shrinks.
    pub replan_on_regression: bool,
    /// In the active kitchen dialect, ask which object to fetch when the
    /// instruction admits several.
    pub ask_when_ambiguous: bool,
}

impl Default for OraclePolicy {
    fn default() -> Self {
        Self {
            retry_on_failure: true,
            replan_on_regression: true,
            ask_when_ambiguous: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePlanner {
    pub policy: OraclePolicy,
}

impl OraclePlanner {
    pub fn new(policy: OraclePolicy) -> Self {
        Self { policy }
    }
}

impl Planner for OraclePlanner {
    fn next_completion(&self, query: &PlannerQuery<'_>) -> Result<String, PlannerError> {
        let t = query.transcript;
        match t.dialect {
            Dialect::SimTabletop | Dialect::RealTabletop => tabletop_completion(&self.policy, t),
            Dialect::Kitchen | Dialect::KitchenActive => {
                let k = query
                    .kitchen
                    .ok_or_else(|| PlannerError::NoFeasibleAction("no kitchen knowledge".into()))?;
                kitchen_completion(&self.policy, t, k)
            }
        }
    }
}

/// Delegates to a completion service.
pub struct LlmPlanner {
    client: Arc<CompletionClient>,
}

impl LlmPlanner {
    pub fn new(client: Arc<CompletionClient>) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &CompletionClient {
        &self.client
    }
}

impl Planner for LlmPlanner {
    fn next_completion(&self, query: &PlannerQuery<'_>) -> Result<String, PlannerError> {
        let req = CompletionRequest {
            prompt: query.prompt.clone(),
            max_tokens: query.decode.max_tokens,
            temperature: query.decode.temperature,
            stop: query.stop_sequences.clone(),
        };
        Ok(self.client.complete(&req)?)
    }
}

// ---------------------------------------------------------------- tabletop

/// Sub-goals for `task` over the named objects. Stacks go base-up over
/// lexicographically sorted block names; everything else follows `names`.
pub fn infer_goals(task: &TabletopTask, names: &[String]) -> Vec<SubGoal> {
    let blocks: Vec<&String> = names.iter().filter(|n| n.ends_with(" block")).collect();
    let bowls: Vec<&String> = names.iter().filter(|n| n.ends_with(" bowl")).collect();
    let color = |n: &str| {
        n.rsplit_once(' ')
            .map(|(c, _)| c.to_string())
            .unwrap_or_default()
    };
    let mut sorted = blocks.clone();
    sorted.sort();
    let chain = |out: &mut Vec<SubGoal>| {
        for w in sorted.windows(2) {
            out.push(SubGoal::on_object(w[1], w[0]));
        }
    };
    let mut goals = Vec::new();
    match *task {
        TabletopTask::PickAndPlace { pick, place } => {
            goals.push(SubGoal::on_object(&format!("{pick} block"), &place.name()));
        }
        TabletopTask::StackAll => chain(&mut goals),
        TabletopTask::StackOnLocation(loc) => {
            if let Some(base) = sorted.first() {
                goals.push(SubGoal::at_location(base, loc));
            }
            chain(&mut goals);
        }
        TabletopTask::AllOnLocation(loc) => {
            goals.extend(blocks.iter().map(|b| SubGoal::at_location(b, loc)));
        }
        TabletopTask::AllInBowl(c) => {
            let bowl = format!("{c} bowl");
            goals.extend(blocks.iter().map(|b| SubGoal::on_object(b, &bowl)));
        }
        TabletopTask::DifferentCorners => {
            goals.extend(
                blocks
                    .iter()
                    .zip(NamedLocation::CORNERS)
                    .map(|(b, c)| SubGoal::at_location(b, c)),
            );
        }
        TabletopTask::MatchingBowls => {
            for b in &blocks {
                if let Some(bowl) = bowls.iter().find(|w| color(w) == color(b)) {
                    goals.push(SubGoal::on_object(b, bowl));
                }
            }
        }
        TabletopTask::MismatchedBowls => {
            for b in &blocks {
                if let Some(bowl) = bowls.iter().find(|w| color(w) != color(b)) {
                    goals.push(SubGoal::on_object(b, bowl));
                }
            }
        }
    }
    goals
}

/// Object names reported so far, in first-seen order.
fn seen_names(t: &Transcript) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in &t.entries {
        if let Entry::SceneObjects { visible, occluded } = e {
            for n in visible.iter().chain(occluded) {
                let n = n.to_lowercase();
                if !out.contains(&n) {
                    out.push(n);
                }
            }
        }
    }
    out
}

fn latest_goal_thought(t: &Transcript) -> Option<Vec<SubGoal>> {
    t.entries.iter().rev().find_map(|e| match e {
        Entry::RobotThought(s) if s.to_lowercase().contains("goal state is") => {
            parse_goal_state(s).ok()
        }
        _ => None,
    })
}

/// Emitted pick-and-place actions, each with the Success verdict that followed it.
fn action_history(t: &Transcript) -> Vec<(ParsedAction, Option<bool>)> {
    let mut out: Vec<(ParsedAction, Option<bool>)> = Vec::new();
    for e in &t.entries {
        match e {
            Entry::RobotAction(a) => {
                if let Some(p @ ParsedAction::PickPlace { .. }) =
                    parse_action_text(t.dialect, &a.text)
                {
                    out.push((p, None));
                }
            }
            Entry::Success(b) => {
                if let Some(last) = out.last_mut() {
                    last.1.get_or_insert(*b);
                }
            }
            _ => {}
        }
    }
    out
}

fn action_for(goal: &SubGoal) -> ParsedAction {
    ParsedAction::pick_place(&goal.top, &goal.base_name())
}

/// The oracle's next tabletop action, or a goal thought plus action on the
/// first sim turn.
pub fn oracle_plan_step(
    policy: &OraclePolicy,
    t: &Transcript,
) -> Result<(Option<Vec<SubGoal>>, ParsedAction), PlannerError> {
    let task = t
        .instruction()
        .and_then(TabletopTask::parse_instruction)
        .ok_or_else(|| {
            PlannerError::NoFeasibleAction(format!(
                "unrecognized instruction {:?}",
                t.instruction()
            ))
        })?;
    let (goals, fresh) = match (t.dialect, latest_goal_thought(t)) {
        (Dialect::SimTabletop, Some(g)) => (g, false),
        (Dialect::SimTabletop, None) => (infer_goals(&task, &seen_names(t)), true),
        _ => (infer_goals(&task, &seen_names(t)), false),
    };
    let history = action_history(t);

    if policy.retry_on_failure {
        if let Some((last, Some(false))) = history.last() {
            return Ok((fresh.then(|| goals.clone()), last.clone()));
        }
    }

    if t.dialect == Dialect::RealTabletop && task == TabletopTask::StackAll {
        return Ok((None, real_stack_step(policy, &seen_names(t), &history)));
    }

    let scene_reports: Vec<&Vec<SubGoal>> = t
        .entries
        .iter()
        .filter_map(|e| match e {
            Entry::AchievedSubgoals(g) => Some(g),
            _ => None,
        })
        .collect();
    let achieved = |g: &SubGoal| -> bool {
        if let Some(latest) = scene_reports.last() {
            return if policy.replan_on_regression {
                latest.contains(g)
            } else {
                scene_reports.iter().any(|r| r.contains(g))
            };
        }
        let want = action_for(g);
        let mut verdict = None;
        for (a, ok) in &history {
            if *a == want {
                verdict = Some(if policy.retry_on_failure {
                    ok.unwrap_or(true)
                } else {
                    true
                });
            }
        }
        verdict.unwrap_or(false)
    };
    let next = goals
        .iter()
        .find(|g| !achieved(g))
        .map(action_for)
        .unwrap_or(ParsedAction::Done);
    Ok((fresh.then_some(goals), next))
}

/// Stacking without scene descriptions: replays believed-successful actions
/// into a support map and grows the tallest believed tower. Blocks that turn
/// up later are added on top rather than forcing a rebuild.
fn real_stack_step(
    policy: &OraclePolicy,
    names: &[String],
    history: &[(ParsedAction, Option<bool>)],
) -> ParsedAction {
    let mut on: BTreeMap<String, Option<String>> = names
        .iter()
        .filter(|n| n.ends_with(" block"))
        .map(|n| (n.clone(), None))
        .collect();
    let top_of = |on: &BTreeMap<String, Option<String>>, mut x: String| {
        while let Some((above, _)) = on
            .iter()
            .find(|(_, below)| below.as_deref() == Some(x.as_str()))
        {
            x = above.clone();
        }
        x
    };
    for (a, verdict) in history {
        let ParsedAction::PickPlace { pick, place } = a else {
            continue;
        };
        let believed = !policy.retry_on_failure || verdict.unwrap_or(true);
        if !believed || !on.contains_key(pick) || !on.contains_key(place) {
            continue;
        }
        let former = on.get(pick).cloned().flatten();
        for below in on.values_mut() {
            if below.as_deref() == Some(pick.as_str()) {
                *below = former.clone();
            }
        }
        on.insert(pick.clone(), None);
        let support = top_of(&on, place.clone());
        if support != *pick {
            on.insert(pick.clone(), Some(support));
        }
    }
    let depth = |x: &str| {
        let mut n = 1;
        let mut cur = x.to_string();
        while let Some(Some(b)) = on.get(&cur) {
            n += 1;
            cur = b.clone();
        }
        (n, cur)
    };
    let tops: Vec<&String> = on
        .keys()
        .filter(|x| !on.values().any(|b| b.as_ref() == Some(*x)))
        .collect();
    // tallest tower, ties to the alphabetically first base
    let Some(main) = tops.iter().max_by(|a, b| {
        let (da, ba) = depth(a);
        let (db, bb) = depth(b);
        da.cmp(&db).then(bb.cmp(&ba))
    }) else {
        return ParsedAction::Done;
    };
    match tops.iter().filter(|x| *x != main).min() {
        Some(loose) => ParsedAction::pick_place(loose, main),
        None => ParsedAction::Done,
    }
}

fn tabletop_completion(policy: &OraclePolicy, t: &Transcript) -> Result<String, PlannerError> {
    let (thought, action) = oracle_plan_step(policy, t)?;
    let d = t.dialect;
    let mut out = String::new();
    if let Some(goals) = thought {
        out.push_str(&format!("Robot thought: {}\n \n", goal_thought(&goals)));
    }
    match (&action, d) {
        (ParsedAction::PickPlace { pick, place }, _) => {
            out.push_str(&format!(
                "Robot action: {}",
                pick_place_text(d, pick, place)
            ));
        }
        (_, Dialect::SimTabletop) => out.push_str("Robot thought: None.\n "),
        _ => out.push_str(&format!("Robot action: {}\nSTOP", done_text(d))),
    }
    Ok(out)
}

// ----------------------------------------------------------------- kitchen

const LOST: &str = "?";

fn apply_skill(belief: &KitchenState, skill: &Skill) -> KitchenState {
    let mut rng = stream_rng(0, 0);
    match execute_skill(
        belief,
        skill,
        &SkillOutcomeModel::reliable(),
        &mut rng,
        (1, 1),
        true,
    ) {
        Ok((next, _)) => next,
        Err(_) => belief.clone(),
    }
}

fn settle(
    belief: &mut KitchenState,
    pending: Option<(Skill, Option<bool>)>,
    policy: &OraclePolicy,
) {
    let Some((skill, verdict)) = pending else {
        return;
    };
    let ok = if policy.retry_on_failure {
        verdict.unwrap_or(true)
    } else {
        true
    };
    if ok {
        *belief = apply_skill(belief, &skill);
    } else if let Skill::PutDown(x) = &skill {
        // A put-down that failed means the object is no longer where we think.
        if belief.holding.as_deref() == Some(x.as_str()) {
            belief.holding = None;
        }
        belief.object_at.insert(x.clone(), LOST.to_string());
    }
}

/// Replays the transcript over the initial knowledge.
fn kitchen_belief(
    policy: &OraclePolicy,
    t: &Transcript,
    k: &KitchenKnowledge,
) -> (KitchenState, Option<String>) {
    let mut belief = k.initial.clone();
    let mut pending: Option<(Skill, Option<bool>)> = None;
    let mut answer = None;
    for e in &t.entries {
        match e {
            Entry::RobotAction(a) => {
                settle(&mut belief, pending.take(), policy);
                if let Some(s) = parse_action_text(t.dialect, &a.text)
                    .as_ref()
                    .and_then(ParsedAction::skill)
                {
                    pending = Some((s.clone(), None));
                }
            }
            Entry::Success(b) => {
                if let Some(p) = pending.as_mut() {
                    p.1.get_or_insert(*b);
                }
            }
            Entry::SceneObjects { visible, .. } => {
                settle(&mut belief, pending.take(), policy);
                let here = belief.robot_at.clone();
                if let Some(h) = belief.holding.clone() {
                    if visible.contains(&h) {
                        belief.holding = None;
                    }
                }
                for (o, at) in belief.object_at.iter_mut() {
                    if visible.contains(o) {
                        *at = here.clone();
                    } else if *at == here {
                        *at = LOST.to_string();
                    }
                }
            }
            Entry::HumanAnswer(a) => answer = Some(a.to_lowercase()),
            _ => {}
        }
    }
    settle(&mut belief, pending, policy);
    (belief, answer)
}

fn candidates(goal: &KitchenGoal) -> &[String] {
    match goal {
        KitchenGoal::Holding(set) => set,
        KitchenGoal::AnyAt { objects, .. } => objects,
        KitchenGoal::DrawerOpen => &[],
    }
}

fn choose_object(
    belief: &KitchenState,
    goal: &KitchenGoal,
    answer: Option<&str>,
) -> Option<String> {
    let present: Vec<&String> = candidates(goal)
        .iter()
        .filter(|o| belief.object_at.contains_key(*o))
        .collect();
    if let Some(h) = &belief.holding {
        if present.contains(&h) {
            return Some(h.clone());
        }
    }
    if let Some(a) = answer {
        if let Some(o) = present.iter().find(|o| a.contains(o.as_str())) {
            return Some((*o).clone());
        }
    }
    present
        .iter()
        .find(|o| belief.location_of(o) == Some(belief.robot_at.as_str()))
        .or(present.first())
        .map(|o| (*o).clone())
}

fn acquire(belief: &KitchenState, x: &str) -> Skill {
    let at = belief.location_of(x).unwrap_or(LOST);
    if at != belief.robot_at {
        Skill::Find(x.to_string())
    } else if at == DRAWER && !belief.drawer_open {
        Skill::OpenDrawer
    } else {
        Skill::PickUp(x.to_string())
    }
}

/// Next skill for `goal` under `belief`; `Skill::Done` when the goal holds.
pub fn kitchen_next_skill(
    belief: &KitchenState,
    goal: &KitchenGoal,
    answer: Option<&str>,
) -> Result<Skill, PlannerError> {
    if crate::kitchen::goal_met(goal, belief) {
        return Ok(Skill::Done);
    }
    let infeasible = |why: &str| PlannerError::NoFeasibleAction(why.to_string());
    let skill = match goal {
        KitchenGoal::DrawerOpen => {
            if belief.robot_at != DRAWER {
                Skill::GoTo(DRAWER.to_string())
            } else {
                Skill::OpenDrawer
            }
        }
        KitchenGoal::Holding(_) | KitchenGoal::AnyAt { .. } => {
            let x = choose_object(belief, goal, answer)
                .ok_or_else(|| infeasible("no goal object exists"))?;
            match (&belief.holding, goal) {
                (Some(h), _) if *h != x => Skill::PutDown(h.clone()),
                (Some(_), KitchenGoal::AnyAt { location, .. }) => {
                    if belief.robot_at != *location {
                        if location == USER {
                            Skill::BringToUser
                        } else {
                            Skill::GoTo(location.clone())
                        }
                    } else if location == DRAWER && !belief.drawer_open {
                        Skill::OpenDrawer
                    } else {
                        Skill::PutDown(x)
                    }
                }
                _ => acquire(belief, &x),
            }
        }
    };
    if is_afforded(belief, &skill) || matches!(skill, Skill::Find(_)) {
        Ok(skill)
    } else {
        Err(infeasible(&format!(
            "{} is not afforded",
            skill.description()
        )))
    }
}

fn kitchen_completion(
    policy: &OraclePolicy,
    t: &Transcript,
    k: &KitchenKnowledge,
) -> Result<String, PlannerError> {
    let instruction = t.instruction().unwrap_or_default();
    let task = find_task(&k.tasks, instruction)
        .map_err(|e| PlannerError::NoFeasibleAction(e.to_string()))?;
    let (belief, answer) = kitchen_belief(policy, t, k);
    let step = t.action_count() + 1;
    let skill = kitchen_next_skill(&belief, &task.goal, answer.as_deref())?;
    if skill == Skill::Done {
        return Ok(format!("{step}. {}", done_text(t.dialect)));
    }
    if t.dialect != Dialect::KitchenActive {
        return Ok(format!("{step}. {}", skill.description()));
    }
    let asked = t.entries.iter().any(|e| matches!(e, Entry::Ask(_)));
    let options: Vec<&str> = candidates(&task.goal)
        .iter()
        .filter(|o| belief.object_at.contains_key(*o))
        .map(String::as_str)
        .collect();
    if policy.ask_when_ambiguous && !asked && options.len() > 1 && belief.holding.is_none() {
        // Ask before committing to an object, from where the robot stands.
        let (last, rest) = options.split_last().expect("at least two options");
        let here = Skill::GoTo(belief.robot_at.clone());
        return Ok(format!(
            "{step}. {} and ask: Which would you like, {} or {last}?",
            here.description(),
            rest.join(", ")
        ));
    }
    Ok(format!("{step}. {} and continue", skill.description()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitchen::{default_tasks, Categories};
    use crate::monologue::parse_completion;

    fn sim(instr: &str, names: &[&str]) -> Transcript {
        let mut t = Transcript::new(Dialect::SimTabletop);
        t.push(Entry::visible(
            names.iter().map(|s| s.to_string()).collect(),
        ));
        t.push(Entry::Instruction(instr.into()));
        t
    }

    fn ask(p: &OraclePlanner, t: &Transcript) -> String {
        let q = PlannerQuery {
            prompt: String::new(),
            stop_sequences: t.dialect.stop_sequences(),
            decode: Decode::default(),
            transcript: t,
            kitchen: None,
        };
        p.next_completion(&q).unwrap()
    }

    fn append(t: &mut Transcript, text: &str) -> ParsedAction {
        let c = parse_completion(t.dialect, text).unwrap();
        t.entries.extend(c.entries);
        c.action
    }

    #[test]
    fn first_sim_turn_states_goals() {
        let t = sim(
            "Move all the blocks to the top left corner.",
            &["cyan block", "yellow block", "brown block"],
        );
        let out = ask(&OraclePlanner::default(), &t);
        assert_eq!(
            out,
            "Robot thought: Goal state is [\"Cyan block is on the top left corner.\", \"Yellow block is on the top left corner.\", \"Brown block is on the top left corner.\"]\n \nRobot action: Pick the cyan block and place it on the top left corner."
        );
    }

    #[test]
    fn stack_order_is_base_up_lexicographic() {
        let names: Vec<String> = ["c block", "a block", "b block"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let g = infer_goals(&TabletopTask::StackAll, &names);
        assert_eq!(
            g,
            vec![
                SubGoal::on_object("b block", "a block"),
                SubGoal::on_object("c block", "b block")
            ]
        );
    }

    #[test]
    fn failed_step_is_repeated() {
        let p = OraclePlanner::default();
        let mut t = Transcript::new(Dialect::RealTabletop);
        t.push(Entry::Instruction("Stack all the blocks.".into()));
        t.push(Entry::visible(vec![
            "brown block".into(),
            "purple block".into(),
        ]));
        let first = ask(&p, &t);
        assert_eq!(
            first,
            r#"Robot action: robot.pick_place("purple block", "brown block")"#
        );
        append(&mut t, &first);
        t.push(Entry::Success(false));
        assert_eq!(ask(&p, &t), first);
        append(&mut t, &first);
        t.push(Entry::Success(true));
        assert_eq!(ask(&p, &t), "Robot action: robot.stop()\nSTOP");
    }

    #[test]
    fn open_loop_emits_each_action_once() {
        let p = OraclePlanner::default();
        let mut t = sim(
            "Put all the blocks on the middle.",
            &["red block", "blue block"],
        );
        let mut actions = Vec::new();
        loop {
            let a = {
                let s = ask(&p, &t);
                append(&mut t, &s)
            };
            if a == ParsedAction::Done {
                break;
            }
            actions.push(a);
        }
        assert_eq!(actions.len(), 2);
    }

    #[test]
    fn without_retry_success_is_ignored() {
        let p = OraclePlanner::new(OraclePolicy {
            retry_on_failure: false,
            ..OraclePolicy::default()
        });
        let mut t = sim("Put all the blocks on the middle.", &["red block"]);
        {
            let s = ask(&p, &t);
            append(&mut t, &s)
        };
        t.push(Entry::Success(false));
        assert_eq!(
            {
                let s = ask(&p, &t);
                append(&mut t, &s)
            },
            ParsedAction::Done
        );
    }

    #[test]
    fn scene_regression_replans() {
        let p = OraclePlanner::default();
        let g = |c: &str| SubGoal::at_location(&format!("{c} block"), NamedLocation::Middle);
        let mut t = sim(
            "Put all the blocks on the middle.",
            &["red block", "blue block"],
        );
        {
            let s = ask(&p, &t);
            append(&mut t, &s)
        };
        t.push(Entry::AchievedSubgoals(vec![g("red")]));
        {
            let s = ask(&p, &t);
            append(&mut t, &s)
        };
        t.push(Entry::AchievedSubgoals(vec![g("blue")]));
        assert_eq!(
            {
                let s = ask(&p, &t);
                append(&mut t, &s)
            },
            ParsedAction::pick_place("red block", "middle")
        );
        t.push(Entry::AchievedSubgoals(vec![g("red"), g("blue")]));
        assert_eq!(
            {
                let s = ask(&p, &t);
                append(&mut t, &s)
            },
            ParsedAction::Done
        );
    }

    fn knowledge() -> KitchenKnowledge {
        KitchenKnowledge {
            initial: KitchenState::default(),
            tasks: default_tasks(&Categories::default()),
        }
    }

    fn kitchen_ask(p: &OraclePlanner, t: &Transcript, k: &KitchenKnowledge) -> String {
        let q = PlannerQuery {
            prompt: String::new(),
            stop_sequences: t.dialect.stop_sequences(),
            decode: Decode::default(),
            transcript: t,
            kitchen: Some(k),
        };
        p.next_completion(&q).unwrap()
    }

    #[test]
    fn kitchen_plan_throw_away() {
        let k = knowledge();
        let p = OraclePlanner::default();
        let mut t = Transcript::new(Dialect::Kitchen);
        t.push(Entry::Instruction(
            "can you throw away the soda on the table".into(),
        ));
        let mut lines = Vec::new();
        for _ in 0..6 {
            let line = kitchen_ask(&p, &t, &k);
            let done = append(&mut t, &line) == ParsedAction::Done;
            lines.push(line);
            if done {
                break;
            }
        }
        assert_eq!(
            lines,
            [
                "1. find a coke",
                "2. pick up the coke",
                "3. go to the trash",
                "4. put down the coke",
                "5. done."
            ]
        );
    }

    #[test]
    fn kitchen_retries_on_failure_and_recovers_drop() {
        let k = knowledge();
        let p = OraclePlanner::default();
        let mut t = Transcript::new(Dialect::Kitchen);
        t.push(Entry::Instruction("put a coke in the top drawer".into()));
        {
            let s = kitchen_ask(&p, &t, &k);
            append(&mut t, &s)
        };
        t.push(Entry::Success(true));
        let pick = kitchen_ask(&p, &t, &k);
        assert_eq!(pick, "2. pick up the coke");
        append(&mut t, &pick);
        t.push(Entry::Success(false));
        assert_eq!(kitchen_ask(&p, &t, &k), "3. pick up the coke");
        append(&mut t, "3. pick up the coke");
        t.push(Entry::Success(true));
        {
            let s = kitchen_ask(&p, &t, &k);
            append(&mut t, &s)
        };
        // knocked out of the gripper on the way: the scene shows it on the table
        t.push(Entry::Success(false));
        t.push(Entry::visible(vec!["coke".into(), "tea".into()]));
        assert_eq!(kitchen_ask(&p, &t, &k), "5. pick up the coke");
    }

    #[test]
    fn kitchen_active_suffix_and_ask() {
        let k = knowledge();
        let mut t = Transcript::new(Dialect::KitchenActive);
        t.push(Entry::Instruction("pick up a soda".into()));
        let plain = kitchen_ask(&OraclePlanner::default(), &t, &k);
        // the sprite is already within reach on the counter
        assert_eq!(plain, "1. pick up the sprite and continue");
        let asking = OraclePlanner::new(OraclePolicy {
            ask_when_ambiguous: true,
            ..OraclePolicy::default()
        });
        let q = kitchen_ask(&asking, &t, &k);
        assert_eq!(
            q,
            "1. go to the counter and ask: Which would you like, coke, sprite, mountain dew or grapefruit soda?"
        );
        let a = append(&mut t, &q);
        assert!(matches!(a, ParsedAction::AskHuman { .. }));
        t.push(Entry::HumanAnswer("A coke please".into()));
        t.push(Entry::Success(true));
        assert_eq!(kitchen_ask(&asking, &t, &k), "2. find a coke and continue");
    }

    #[test]
    fn unknown_instruction_is_infeasible() {
        let t = sim("Juggle the bowls.", &["red bowl"]);
        let q = PlannerQuery {
            prompt: String::new(),
            stop_sequences: vec![],
            decode: Decode::default(),
            transcript: &t,
            kitchen: None,
        };
        assert!(matches!(
            OraclePlanner::default().next_completion(&q),
            Err(PlannerError::NoFeasibleAction(_))
        ));
    }
}
