//! Planner actions and their per-dialect action-text forms.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Dialect;
use crate::kitchen::Skill;
use crate::tabletop::NamedLocation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsedAction {
    /// `place` is an object name or a named location, lowercased.
    PickPlace {
        pick: String,
        place: String,
    },
    KitchenSkill(Skill),
    AskHuman {
        skill: Option<Skill>,
        question: String,
    },
    Done,
}

impl ParsedAction {
    pub fn pick_place(pick: &str, place: &str) -> Self {
        ParsedAction::PickPlace {
            pick: pick.trim().to_lowercase(),
            place: place.trim().to_lowercase(),
        }
    }

    /// The place argument as a named location, if it is one.
    pub fn place_location(&self) -> Option<NamedLocation> {
        match self {
            ParsedAction::PickPlace { place, .. } => NamedLocation::parse(place),
            _ => None,
        }
    }

    pub fn skill(&self) -> Option<&Skill> {
        match self {
            ParsedAction::KitchenSkill(s) => Some(s),
            ParsedAction::AskHuman { skill, .. } => skill.as_ref(),
            _ => None,
        }
    }
}

static SIM_PICK_PLACE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^pick(?: up)? (?:the )?(.+?) and place it (?:on|in|at) (?:the )?(.+?)\.?$")
        .unwrap()
});

static REAL_PICK_PLACE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^robot\.pick_place\(\s*"([^"]+)"\s*,\s*"([^"]+)"\s*\)$"#).unwrap()
});

/// Canonical tabletop action text for a pick-and-place in `dialect`.
pub fn pick_place_text(dialect: Dialect, pick: &str, place: &str) -> String {
    match dialect {
        Dialect::RealTabletop => format!(
            "robot.pick_place({}, {})",
            serde_json::to_string(pick).expect("string serializes"),
            serde_json::to_string(place).expect("string serializes")
        ),
        _ => format!("Pick the {pick} and place it on the {place}."),
    }
}

/// Canonical terminal action text for `dialect`.
pub fn done_text(dialect: Dialect) -> &'static str {
    match dialect {
        Dialect::SimTabletop => "None.",
        Dialect::RealTabletop => "robot.stop()",
        Dialect::Kitchen | Dialect::KitchenActive => "done.",
    }
}

/// Interprets the text of a robot action line (without the "Robot action: "
/// prefix or kitchen step number).
pub fn parse_action_text(dialect: Dialect, text: &str) -> Option<ParsedAction> {
    let t = text.trim();
    match dialect {
        Dialect::SimTabletop => {
            if t.eq_ignore_ascii_case("done.") || t.eq_ignore_ascii_case("done") || t == "None." {
                return Some(ParsedAction::Done);
            }
            SIM_PICK_PLACE
                .captures(t)
                .map(|c| ParsedAction::pick_place(&c[1], &c[2]))
        }
        Dialect::RealTabletop => {
            if t == "robot.stop()" || t == "STOP" {
                return Some(ParsedAction::Done);
            }
            REAL_PICK_PLACE
                .captures(t)
                .map(|c| ParsedAction::pick_place(&c[1], &c[2]))
        }
        Dialect::Kitchen | Dialect::KitchenActive => match Skill::parse(t).ok()? {
            Skill::Done => Some(ParsedAction::Done),
            s => Some(ParsedAction::KitchenSkill(s)),
        },
    }
}
