//! Transcript to text, recording the byte span of every entry.

use std::ops::Range;

use super::goal::{render_goal_list, render_string_list};
use super::{Dialect, Document, Entry, MonologueError, Transcript};

/// Kitchen prefix for the first action after an instruction.
pub(crate) const ROBOT_CUE: &str = "Robot: ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    /// One span per entry. Line breaks and the kitchen "Robot: " prefix sit
    /// between spans.
    pub spans: Vec<Range<usize>>,
    /// A kitchen instruction is waiting for its first action.
    pub cue_pending: bool,
}

impl Rendered {
    /// Text preceding entry `i`, including any line break or prefix that
    /// introduces it.
    pub fn prefix_before(&self, i: usize) -> &str {
        match self.spans.get(i) {
            Some(s) => &self.text[..s.start],
            None => &self.text,
        }
    }

    /// Text of entries `range`, including separators between them.
    pub fn slice(&self, range: Range<usize>) -> &str {
        if range.is_empty() {
            return "";
        }
        &self.text[self.spans[range.start].start..self.spans[range.end - 1].end]
    }
}

fn starts_line(dialect: Dialect, e: &Entry) -> bool {
    if dialect.is_kitchen() {
        matches!(
            e,
            Entry::Instruction(_) | Entry::RobotAction(_) | Entry::Terminate(_) | Entry::Blank(_)
        )
    } else {
        true
    }
}

fn group_by_kind(names: &[String]) -> String {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for n in names {
        let (color, kind) = match n.rsplit_once(' ') {
            Some((c, k)) => (c.to_string(), k.to_string()),
            None => (String::new(), n.clone()),
        };
        match groups.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, colors)) => colors.push(color),
            None => groups.push((kind, vec![color])),
        }
    }
    groups
        .iter()
        .map(|(kind, colors)| {
            let colors: Vec<&str> = colors
                .iter()
                .map(String::as_str)
                .filter(|c| !c.is_empty())
                .collect();
            if colors.is_empty() {
                kind.clone()
            } else {
                format!("{} {kind}", colors.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" and a ")
}

pub(crate) fn sim_scene_line(names: &[String]) -> String {
    if names.is_empty() {
        "Scene: There are no objects.".to_string()
    } else {
        format!("Scene: There is a {}.", group_by_kind(names))
    }
}

fn bool_word(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn numbered(step: Option<u32>, text: &str) -> String {
    match step {
        Some(n) => format!("{n}. {text}"),
        None => text.to_string(),
    }
}

fn fragment(dialect: Dialect, e: &Entry, prev: Option<&Entry>) -> String {
    use Dialect::*;
    match (dialect, e) {
        (RealTabletop, Entry::Instruction(t)) => format!("Task: {t}"),
        (_, Entry::Instruction(t)) => format!("Human: {t}"),
        (SimTabletop, Entry::SceneObjects { visible, .. }) => sim_scene_line(visible),
        (RealTabletop, Entry::SceneObjects { visible, occluded }) => format!(
            "Scene: Visible objects are {}\nScene: Occluded objects are {}",
            render_string_list(visible),
            render_string_list(occluded)
        ),
        (_, Entry::SceneObjects { visible, .. }) => format!("[scene: {}]", visible.join(", ")),
        (_, Entry::AchievedSubgoals(g)) => {
            format!("Scene: You have completed {}", render_goal_list(g))
        }
        (Kitchen | KitchenActive, Entry::Success(b)) => {
            format!("[success: {}]", if *b { "yes" } else { "no" })
        }
        (_, Entry::Success(b)) => format!("Successful action: {}", bool_word(*b)),
        (_, Entry::RobotThought(t)) => format!("Robot thought: {t}"),
        (Kitchen | KitchenActive, Entry::RobotAction(a) | Entry::Terminate(a)) => {
            numbered(a.step, &a.text)
        }
        (SimTabletop, Entry::Terminate(a)) if a.text == "None." => {
            "Robot thought: None.".to_string()
        }
        (RealTabletop, Entry::Terminate(a)) => format!("Robot action: {}\nSTOP", a.text),
        (_, Entry::RobotAction(a) | Entry::Terminate(a)) => format!("Robot action: {}", a.text),
        (_, Entry::Ask(q)) => format!(" and ask: {q}"),
        (_, Entry::HumanAnswer(a)) => match prev {
            Some(Entry::Ask(_)) => format!(" Human: {a}"),
            _ => format!(", Human: {a}"),
        },
        (_, Entry::Continue) => " and continue".to_string(),
        (_, Entry::Blank(s)) => s.clone(),
    }
}

/// Renders one episode. Every rendered episode ends with a newline.
pub fn render_transcript(t: &Transcript) -> Result<Rendered, MonologueError> {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(t.entries.len());
    let mut line_open = false;
    let mut cue_pending = false;
    let mut prev: Option<&Entry> = None;
    for e in &t.entries {
        if !t.dialect.admits(e) {
            return Err(MonologueError::DialectMismatch {
                dialect: t.dialect,
                entry: e.variant_name(),
            });
        }
        if starts_line(t.dialect, e) && line_open {
            text.push('\n');
        }
        let is_action = matches!(e, Entry::RobotAction(_) | Entry::Terminate(_));
        if t.dialect.is_kitchen() && is_action && cue_pending {
            text.push_str(ROBOT_CUE);
            cue_pending = false;
        }
        let start = text.len();
        text.push_str(&fragment(t.dialect, e, prev));
        spans.push(start..text.len());
        line_open = true;
        if matches!(e, Entry::Instruction(_)) {
            cue_pending = t.dialect.is_kitchen();
        }
        prev = Some(e);
    }
    if line_open {
        text.push('\n');
    }
    Ok(Rendered {
        text,
        spans,
        cue_pending,
    })
}

/// Few-shot prefix, separator and rendered transcript, followed by the kitchen
/// "Robot: " cue when the next line is the first action. An empty transcript
/// yields the prefix unchanged.
pub fn render_prompt(few_shot: &str, transcript: &Transcript) -> Result<String, MonologueError> {
    if transcript.entries.is_empty() {
        return Ok(few_shot.to_string());
    }
    let r = render_transcript(transcript)?;
    let mut out = String::with_capacity(few_shot.len() + r.text.len() + 24);
    out.push_str(few_shot);
    out.push_str(transcript.dialect.separator());
    out.push_str(&r.text);
    if r.cue_pending {
        out.push_str(ROBOT_CUE);
    }
    Ok(out)
}

pub fn render_document(doc: &Document) -> Result<String, MonologueError> {
    let mut out = doc.preamble.clone();
    for ep in &doc.episodes {
        out.push_str(doc.dialect.separator());
        out.push_str(&render_transcript(ep)?.text);
    }
    Ok(out)
}
