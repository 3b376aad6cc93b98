//! The transcript model and the four prompt dialects.
//!
//! A [`Transcript`] is the single source of truth for one episode. It renders
//! to prompt text with per-entry byte spans, so the prompt for any planner
//! turn is a prefix of the full rendering and the completion is the slice
//! covering that turn's entries.

mod action;
mod goal;
mod parse;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{done_text, parse_action_text, pick_place_text, ParsedAction};
pub use goal::{
    goal_thought, parse_goal_state, parse_string_list, render_goal_list, render_string_list,
    GoalBase, SubGoal,
};
pub use parse::{parse_completion, parse_document, parse_episode, Completion};
pub use render::{render_document, render_prompt, render_transcript, Rendered};

pub const EPISODE_SEPARATOR: &str = "===============";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonologueError {
    #[error("{entry} entries are not part of the {dialect} dialect")]
    DialectMismatch {
        dialect: Dialect,
        entry: &'static str,
    },
    #[error("no valid action in completion: {0:?}")]
    UnparseableCompletion(String),
    #[error("malformed goal list: {0}")]
    MalformedGoalList(String),
    #[error("line {line}: cannot parse {text:?}")]
    MalformedLine { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    SimTabletop,
    RealTabletop,
    Kitchen,
    KitchenActive,
}

impl Dialect {
    pub const ALL: [Dialect; 4] = [
        Dialect::SimTabletop,
        Dialect::RealTabletop,
        Dialect::Kitchen,
        Dialect::KitchenActive,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Dialect::SimTabletop => "sim_tabletop",
            Dialect::RealTabletop => "real_tabletop",
            Dialect::Kitchen => "kitchen",
            Dialect::KitchenActive => "kitchen_active",
        }
    }

    pub fn is_kitchen(self) -> bool {
        matches!(self, Dialect::Kitchen | Dialect::KitchenActive)
    }

    /// Text placed between the few-shot prefix and the live episode.
    pub fn separator(self) -> &'static str {
        match self {
            Dialect::SimTabletop | Dialect::RealTabletop => "===============\n",
            Dialect::Kitchen | Dialect::KitchenActive => "",
        }
    }

    /// Stop sequences that end one planner turn.
    pub fn stop_sequences(self) -> Vec<String> {
        let s: &[&str] = match self {
            Dialect::SimTabletop => &["\nScene:", "\nHuman:", "\n==="],
            Dialect::RealTabletop => &["\nSuccessful action:", "\nScene:", "\n==="],
            Dialect::Kitchen => &["\n"],
            Dialect::KitchenActive => &["\n", " Human:"],
        };
        s.iter().map(|x| x.to_string()).collect()
    }

    /// Whether an entry of this variant may appear in the dialect.
    pub fn admits(self, entry: &Entry) -> bool {
        use Entry::*;
        match (self, entry) {
            (_, Instruction(_) | RobotAction(_) | Terminate(_) | Success(_) | Blank(_)) => true,
            (Dialect::SimTabletop, SceneObjects { occluded, .. }) => occluded.is_empty(),
            (Dialect::SimTabletop, AchievedSubgoals(_) | RobotThought(_)) => true,
            (Dialect::RealTabletop, SceneObjects { .. }) => true,
            (Dialect::Kitchen, SceneObjects { occluded, .. }) => occluded.is_empty(),
            (Dialect::KitchenActive, SceneObjects { occluded, .. }) => occluded.is_empty(),
            (Dialect::KitchenActive, Ask(_) | HumanAnswer(_) | Continue) => true,
            _ => false,
        }
    }

    /// Whether the planner (rather than the environment) writes this entry.
    pub fn planner_authored(self, entry: &Entry) -> bool {
        use Entry::*;
        match self {
            Dialect::SimTabletop => {
                matches!(
                    entry,
                    RobotThought(_) | RobotAction(_) | Terminate(_) | Blank(_)
                )
            }
            Dialect::RealTabletop => matches!(entry, RobotAction(_) | Terminate(_)),
            Dialect::Kitchen | Dialect::KitchenActive => {
                matches!(entry, RobotAction(_) | Terminate(_) | Ask(_) | Continue)
            }
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dialect::ALL
            .into_iter()
            .find(|d| d.id() == s.trim())
            .ok_or_else(|| format!("unknown dialect `{s}`"))
    }
}

/// An action line's raw text and optional step number ("3. pick up the coke").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLine {
    pub step: Option<u32>,
    pub text: String,
}

impl ActionLine {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            step: None,
            text: text.into(),
        }
    }

    pub fn numbered(step: u32, text: impl Into<String>) -> Self {
        Self {
            step: Some(step),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entry {
    Instruction(String),
    SceneObjects {
        visible: Vec<String>,
        occluded: Vec<String>,
    },
    AchievedSubgoals(Vec<SubGoal>),
    Success(bool),
    RobotThought(String),
    RobotAction(ActionLine),
    Terminate(ActionLine),
    Ask(String),
    HumanAnswer(String),
    /// The " and continue" suffix of the active kitchen dialect.
    Continue,
    /// An empty or whitespace-only line, preserved verbatim.
    Blank(String),
}

impl Entry {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Entry::Instruction(_) => "Instruction",
            Entry::SceneObjects { .. } => "SceneObjects",
            Entry::AchievedSubgoals(_) => "AchievedSubgoals",
            Entry::Success(_) => "Success",
            Entry::RobotThought(_) => "RobotThought",
            Entry::RobotAction(_) => "RobotAction",
            Entry::Terminate(_) => "Terminate",
            Entry::Ask(_) => "Ask",
            Entry::HumanAnswer(_) => "HumanAnswer",
            Entry::Continue => "Continue",
            Entry::Blank(_) => "Blank",
        }
    }

    pub fn visible(names: Vec<String>) -> Self {
        Entry::SceneObjects {
            visible: names,
            occluded: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub dialect: Dialect,
    pub entries: Vec<Entry>,
}

impl Transcript {
    pub fn new(dialect: Dialect) -> Self {
        Self {
            dialect,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, e: Entry) {
        self.entries.push(e);
    }

    pub fn instruction(&self) -> Option<&str> {
        self.entries.iter().find_map(|e| match e {
            Entry::Instruction(t) => Some(t.as_str()),
            _ => None,
        })
    }

    /// Checks dialect legality and that an instruction precedes every action.
    pub fn validate(&self) -> Result<(), MonologueError> {
        let mut seen_instruction = false;
        for e in &self.entries {
            if !self.dialect.admits(e) {
                return Err(MonologueError::DialectMismatch {
                    dialect: self.dialect,
                    entry: e.variant_name(),
                });
            }
            match e {
                Entry::Instruction(_) => seen_instruction = true,
                Entry::RobotAction(_) | Entry::Terminate(_) if !seen_instruction => {
                    return Err(MonologueError::DialectMismatch {
                        dialect: self.dialect,
                        entry: "action before instruction",
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Index ranges of planner turns: runs of planner-authored entries holding
    /// at most one action. A thought or action after the run's action starts
    /// the next turn; a blank never starts one.
    pub fn planner_turns(&self) -> Vec<std::ops::Range<usize>> {
        let mut turns = Vec::new();
        let mut start: Option<usize> = None;
        let mut has_action = false;
        for (i, e) in self.entries.iter().enumerate() {
            let mine = self.dialect.planner_authored(e);
            let opens = matches!(
                e,
                Entry::RobotThought(_) | Entry::RobotAction(_) | Entry::Terminate(_)
            );
            if let Some(s) = start {
                if !mine || (opens && has_action) {
                    turns.push(s..i);
                    start = None;
                    has_action = false;
                }
            }
            if mine && start.is_none() && !matches!(e, Entry::Blank(_)) {
                start = Some(i);
            }
            if start.is_some() && matches!(e, Entry::RobotAction(_) | Entry::Terminate(_)) {
                has_action = true;
            }
        }
        if let Some(s) = start {
            turns.push(s..self.entries.len());
        }
        turns
    }

    /// Number of robot action and terminate lines.
    pub fn action_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, Entry::RobotAction(_) | Entry::Terminate(_)))
            .count()
    }
}

/// A multi-episode listing: preamble text plus episodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub dialect: Dialect,
    pub preamble: String,
    pub episodes: Vec<Transcript>,
}

impl Document {
    /// Few-shot prefix preceding episode `k`: preamble plus the earlier episodes.
    pub fn few_shot_before(&self, k: usize) -> Result<String, MonologueError> {
        let prefix = Document {
            dialect: self.dialect,
            preamble: self.preamble.clone(),
            episodes: self.episodes[..k].to_vec(),
        };
        render_document(&prefix)
    }
}
