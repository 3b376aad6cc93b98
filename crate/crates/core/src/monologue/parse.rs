//! Text to transcript: whole listings and single planner completions.

use std::sync::LazyLock;

use regex::Regex;

use super::action::parse_action_text;
use super::goal::{parse_string_list, SubGoal};
use super::render::ROBOT_CUE;
use super::{
    ActionLine, Dialect, Document, Entry, MonologueError, ParsedAction, Transcript,
    EPISODE_SEPARATOR,
};

static STEP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+)\.\s(.*)$").unwrap());

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

fn parse_bool_word(s: &str) -> Option<bool> {
    match s.trim() {
        "True" | "true" => Some(true),
        "False" | "false" => Some(false),
        _ => None,
    }
}

fn parse_sim_scene(body: &str) -> Option<Vec<String>> {
    let body = body.strip_suffix('.').unwrap_or(body);
    let mut names = Vec::new();
    for group in body.split(" and a ") {
        let (colors, kind) = match group.rsplit_once(' ') {
            Some((c, k)) => (c, k),
            None => ("", group),
        };
        if kind.is_empty() {
            return None;
        }
        if colors.is_empty() {
            names.push(kind.to_string());
        } else {
            names.extend(colors.split(", ").map(|c| format!("{c} {kind}")));
        }
    }
    Some(names)
}

fn tabletop_action(dialect: Dialect, text: &str) -> Entry {
    match parse_action_text(dialect, text) {
        Some(ParsedAction::Done) => Entry::Terminate(ActionLine::new(text)),
        _ => Entry::RobotAction(ActionLine::new(text)),
    }
}

/// One sim-dialect line.
fn sim_line(line: &str) -> Option<Entry> {
    if is_blank(line) {
        return Some(Entry::Blank(line.to_string()));
    }
    if let Some(t) = line.strip_prefix("Human: ") {
        return Some(Entry::Instruction(t.to_string()));
    }
    if let Some(list) = line.strip_prefix("Scene: You have completed ") {
        let items = parse_string_list(list)?;
        let goals: Result<Vec<SubGoal>, _> = items.iter().map(|s| SubGoal::parse(s)).collect();
        return goals.ok().map(Entry::AchievedSubgoals);
    }
    if line == "Scene: There are no objects." {
        return Some(Entry::visible(Vec::new()));
    }
    if let Some(body) = line.strip_prefix("Scene: There is a ") {
        return parse_sim_scene(body).map(Entry::visible);
    }
    if line == "Robot thought: None." {
        return Some(Entry::Terminate(ActionLine::new("None.")));
    }
    if let Some(t) = line.strip_prefix("Robot thought: ") {
        return Some(Entry::RobotThought(t.to_string()));
    }
    if let Some(t) = line.strip_prefix("Robot action: ") {
        return Some(tabletop_action(Dialect::SimTabletop, t));
    }
    if let Some(b) = line.strip_prefix("Successful action: ") {
        return parse_bool_word(b).map(Entry::Success);
    }
    None
}

/// One real-dialect entry starting at `lines[i]`; returns the entry and lines consumed.
fn real_entry(lines: &[&str], i: usize) -> Option<(Entry, usize)> {
    let line = lines[i];
    if is_blank(line) {
        return Some((Entry::Blank(line.to_string()), 1));
    }
    if let Some(t) = line.strip_prefix("Task: ") {
        return Some((Entry::Instruction(t.to_string()), 1));
    }
    if let Some(vis) = line.strip_prefix("Scene: Visible objects are ") {
        let occ = lines
            .get(i + 1)?
            .strip_prefix("Scene: Occluded objects are ")?;
        let entry = Entry::SceneObjects {
            visible: parse_string_list(vis)?,
            occluded: parse_string_list(occ)?,
        };
        return Some((entry, 2));
    }
    if let Some(t) = line.strip_prefix("Robot action: ") {
        return match tabletop_action(Dialect::RealTabletop, t) {
            Entry::Terminate(a) => {
                (lines.get(i + 1) == Some(&"STOP")).then_some((Entry::Terminate(a), 2))
            }
            e => Some((e, 1)),
        };
    }
    if let Some(b) = line.strip_prefix("Successful action: ") {
        return parse_bool_word(b).map(|v| (Entry::Success(v), 1));
    }
    None
}

const KITCHEN_MARKERS: [&str; 6] = [
    "[success: ",
    "[scene: ",
    " and continue",
    " and ask: ",
    ", Human: ",
    " Human: ",
];

fn first_marker(s: &str, markers: &[&str]) -> usize {
    markers
        .iter()
        .filter_map(|m| s.find(m))
        .min()
        .unwrap_or(s.len())
}

/// One kitchen line (instruction, blank, or numbered step with inline suffixes).
fn kitchen_line(line: &str) -> Option<Vec<Entry>> {
    if is_blank(line) {
        return Some(vec![Entry::Blank(line.to_string())]);
    }
    if let Some(t) = line.strip_prefix("Human: ") {
        return Some(vec![Entry::Instruction(t.to_string())]);
    }
    let body = line.strip_prefix(ROBOT_CUE).unwrap_or(line);
    let (step, body) = match STEP.captures(body) {
        Some(c) => (c[1].parse().ok(), c.get(2).map_or("", |m| m.as_str())),
        None => (None, body),
    };
    let cut = first_marker(body, &KITCHEN_MARKERS);
    let text = &body[..cut];
    if text.trim().is_empty() {
        return None;
    }
    let action = ActionLine {
        step,
        text: text.to_string(),
    };
    let mut out = vec![match parse_action_text(Dialect::Kitchen, text) {
        Some(ParsedAction::Done) => Entry::Terminate(action),
        _ => Entry::RobotAction(action),
    }];
    let mut rest = &body[cut..];
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix("[success: ") {
            let end = r.find(']')?;
            out.push(Entry::Success(match &r[..end] {
                "yes" => true,
                "no" => false,
                _ => return None,
            }));
            rest = &r[end + 1..];
        } else if let Some(r) = rest.strip_prefix("[scene: ") {
            let end = r.find(']')?;
            let items = &r[..end];
            let names = if items.is_empty() {
                Vec::new()
            } else {
                items.split(", ").map(str::to_string).collect()
            };
            out.push(Entry::visible(names));
            rest = &r[end + 1..];
        } else if let Some(r) = rest.strip_prefix(" and continue") {
            out.push(Entry::Continue);
            rest = r;
        } else if let Some(r) = rest.strip_prefix(" and ask: ") {
            let end = first_marker(r, &[" Human: ", "[success: ", "[scene: "]);
            out.push(Entry::Ask(r[..end].to_string()));
            rest = &r[end..];
        } else {
            let r = rest
                .strip_prefix(" Human: ")
                .or_else(|| rest.strip_prefix(", Human: "))?;
            let end = first_marker(r, &["[success: ", "[scene: "]);
            out.push(Entry::HumanAnswer(r[..end].to_string()));
            rest = &r[end..];
        }
    }
    Some(out)
}

fn body_lines(text: &str) -> Vec<&str> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    if trimmed.is_empty() && text.is_empty() {
        return Vec::new();
    }
    trimmed.split('\n').collect()
}

fn malformed(line: usize, text: &str) -> MonologueError {
    MonologueError::MalformedLine {
        line,
        text: text.to_string(),
    }
}

/// Parses the lines of one episode (no separator line).
pub fn parse_episode(dialect: Dialect, text: &str) -> Result<Transcript, MonologueError> {
    let lines = body_lines(text);
    episode_from_lines(dialect, &lines, 1)
}

fn episode_from_lines(
    dialect: Dialect,
    lines: &[&str],
    first_line: usize,
) -> Result<Transcript, MonologueError> {
    let mut t = Transcript::new(dialect);
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let err = || malformed(first_line + i, line);
        match dialect {
            Dialect::SimTabletop => {
                t.push(sim_line(line).ok_or_else(err)?);
                i += 1;
            }
            Dialect::RealTabletop => {
                let (e, n) = real_entry(lines, i).ok_or_else(err)?;
                t.push(e);
                i += n;
            }
            Dialect::Kitchen | Dialect::KitchenActive => {
                t.entries.extend(kitchen_line(line).ok_or_else(err)?);
                i += 1;
            }
        }
    }
    for e in &t.entries {
        if !dialect.admits(e) {
            return Err(MonologueError::DialectMismatch {
                dialect,
                entry: e.variant_name(),
            });
        }
    }
    Ok(t)
}

/// Parses a full listing into its preamble and episodes.
///
/// Tabletop listings separate episodes with a line of `=` signs; kitchen
/// listings start a new episode at each line beginning with "Human: ".
pub fn parse_document(dialect: Dialect, text: &str) -> Result<Document, MonologueError> {
    let lines = body_lines(text);
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| match dialect {
            Dialect::SimTabletop | Dialect::RealTabletop => **l == EPISODE_SEPARATOR,
            _ => l.starts_with("Human: "),
        })
        .map(|(i, _)| i)
        .collect();
    let first = starts.first().copied().unwrap_or(lines.len());
    let mut preamble = String::new();
    for l in &lines[..first] {
        preamble.push_str(l);
        preamble.push('\n');
    }
    let skip = usize::from(!dialect.is_kitchen());
    let mut episodes = Vec::new();
    for (k, &s) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(lines.len());
        episodes.push(episode_from_lines(
            dialect,
            &lines[s + skip..end],
            s + skip + 1,
        )?);
    }
    Ok(Document {
        dialect,
        preamble,
        episodes,
    })
}

/// A parsed planner completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    /// Entries to append to the transcript.
    pub entries: Vec<Entry>,
    pub action: ParsedAction,
}

/// Extracts the first valid action (with any preceding thoughts) from raw
/// completion text. Unrecognized lines before the action are skipped;
/// everything after the action is discarded except blank lines closing a
/// sim-dialect termination.
pub fn parse_completion(dialect: Dialect, text: &str) -> Result<Completion, MonologueError> {
    let unparseable = || MonologueError::UnparseableCompletion(text.to_string());
    let lines: Vec<&str> = text.split('\n').collect();
    match dialect {
        Dialect::SimTabletop => {
            let mut entries = Vec::new();
            for (i, line) in lines.iter().enumerate() {
                let Some(e) = sim_line(line) else { continue };
                match e {
                    Entry::RobotThought(_) => entries.push(e),
                    Entry::Blank(_) if !entries.is_empty() => entries.push(e),
                    Entry::RobotAction(ref a) => {
                        let Some(action) = parse_action_text(dialect, &a.text) else {
                            continue;
                        };
                        entries.push(e);
                        return Ok(Completion { entries, action });
                    }
                    Entry::Terminate(_) => {
                        entries.push(e);
                        entries.extend(
                            lines[i + 1..]
                                .iter()
                                .take_while(|l| is_blank(l) && !l.is_empty())
                                .map(|l| Entry::Blank(l.to_string())),
                        );
                        return Ok(Completion {
                            entries,
                            action: ParsedAction::Done,
                        });
                    }
                    _ => {}
                }
            }
            Err(unparseable())
        }
        Dialect::RealTabletop => {
            for line in &lines {
                let line = line.trim_end();
                if line == "STOP" {
                    return Ok(done_real());
                }
                let Some(t) = line.strip_prefix("Robot action: ") else {
                    continue;
                };
                match parse_action_text(dialect, t) {
                    Some(ParsedAction::Done) => return Ok(done_real()),
                    Some(action) => {
                        return Ok(Completion {
                            entries: vec![Entry::RobotAction(ActionLine::new(t))],
                            action,
                        })
                    }
                    None => continue,
                }
            }
            Err(unparseable())
        }
        Dialect::Kitchen | Dialect::KitchenActive => {
            for line in &lines {
                let Some(parsed) = kitchen_line(line) else {
                    continue;
                };
                let mut it = parsed.into_iter();
                let (head, skill) = match it.next() {
                    Some(Entry::Terminate(a)) => {
                        return Ok(Completion {
                            entries: vec![Entry::Terminate(a)],
                            action: ParsedAction::Done,
                        })
                    }
                    Some(Entry::RobotAction(a)) => match parse_action_text(dialect, &a.text) {
                        Some(ParsedAction::KitchenSkill(s)) => (Entry::RobotAction(a), s),
                        _ => continue,
                    },
                    _ => continue,
                };
                let mut entries = vec![head];
                let mut action = ParsedAction::KitchenSkill(skill.clone());
                if dialect == Dialect::KitchenActive {
                    match it.next() {
                        Some(Entry::Continue) => entries.push(Entry::Continue),
                        Some(Entry::Ask(q)) => {
                            action = ParsedAction::AskHuman {
                                skill: Some(skill),
                                question: q.clone(),
                            };
                            entries.push(Entry::Ask(q));
                        }
                        _ => {}
                    }
                }
                return Ok(Completion { entries, action });
            }
            Err(unparseable())
        }
    }
}

fn done_real() -> Completion {
    Completion {
        entries: vec![Entry::Terminate(ActionLine::new("robot.stop()"))],
        action: ParsedAction::Done,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitchen::Skill;

    #[test]
    fn sim_action_completion() {
        let c = parse_completion(
            Dialect::SimTabletop,
            "Robot action: Pick the yellow block and place it on the top left corner.",
        )
        .unwrap();
        assert_eq!(
            c.action,
            ParsedAction::pick_place("yellow block", "top left corner")
        );
        assert_eq!(c.entries.len(), 1);
    }

    #[test]
    fn sim_thought_then_action_discards_tail() {
        let text = "Robot thought: Cyan first.\n \nRobot action: Pick the cyan block and place it on the middle.\nScene: junk\nRobot action: Pick the red block and place it on the middle.";
        let c = parse_completion(Dialect::SimTabletop, text).unwrap();
        assert_eq!(c.entries.len(), 3);
        assert_eq!(c.action, ParsedAction::pick_place("cyan block", "middle"));
    }

    #[test]
    fn real_stop() {
        let c = parse_completion(Dialect::RealTabletop, "robot.stop()\nSTOP").unwrap();
        assert_eq!(c.action, ParsedAction::Done);
        let c =
            parse_completion(Dialect::RealTabletop, "Robot action: robot.stop()\nSTOP").unwrap();
        assert_eq!(c.action, ParsedAction::Done);
    }

    #[test]
    fn active_ask() {
        let c = parse_completion(
            Dialect::KitchenActive,
            "2. pick up the coke and ask: Do you have a preference on what drink you would want?",
        )
        .unwrap();
        assert_eq!(
            c.action,
            ParsedAction::AskHuman {
                skill: Some(Skill::PickUp("coke".into())),
                question: "Do you have a preference on what drink you would want?".into()
            }
        );
    }

    #[test]
    fn garbage_is_unparseable() {
        for d in Dialect::ALL {
            assert!(matches!(
                parse_completion(d, "I am a teapot"),
                Err(MonologueError::UnparseableCompletion(_))
            ));
        }
    }

    #[test]
    fn kitchen_inline_suffixes() {
        let e =
            kitchen_line("4. put down tea, Human: Actually, can you also bring me an energy bar?")
                .unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(
            e[1],
            Entry::HumanAnswer("Actually, can you also bring me an energy bar?".into())
        );
        let e = kitchen_line("10. put down the dried fruit[scene: ]").unwrap();
        assert_eq!(e[1], Entry::visible(vec![]));
    }
}
