//! Sub-goals of the form "[x] is on top of [y]" / "[x] is on the [location]".

use std::fmt;

use serde::{Deserialize, Serialize};

use super::MonologueError;
use crate::tabletop::NamedLocation;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalBase {
    Object(String),
    Location(NamedLocation),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubGoal {
    pub top: String,
    pub base: GoalBase,
}

impl SubGoal {
    pub fn on_object(top: &str, base: &str) -> Self {
        Self {
            top: top.to_lowercase(),
            base: GoalBase::Object(base.to_lowercase()),
        }
    }

    pub fn at_location(top: &str, loc: NamedLocation) -> Self {
        Self {
            top: top.to_lowercase(),
            base: GoalBase::Location(loc),
        }
    }

    pub fn base_name(&self) -> String {
        match &self.base {
            GoalBase::Object(o) => o.clone(),
            GoalBase::Location(l) => l.name().to_string(),
        }
    }

    /// Canonical sentence, e.g. "Cyan block is on the top left corner."
    pub fn render(&self) -> String {
        let mut chars = self.top.chars();
        let top: String = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
        match &self.base {
            GoalBase::Location(l) => format!("{top} is on the {l}."),
            GoalBase::Object(o) => format!("{top} is on top of the {o}."),
        }
    }

    /// Accepts both templates case-insensitively, with or without the final period.
    pub fn parse(text: &str) -> Result<SubGoal, MonologueError> {
        let malformed = || MonologueError::MalformedGoalList(text.to_string());
        let t = text.trim().trim_end_matches('.').trim().to_lowercase();
        let t = t.strip_prefix("the ").unwrap_or(&t);
        if let Some((top, base)) = t.split_once(" is on top of ") {
            let base = base.strip_prefix("the ").unwrap_or(base);
            if top.is_empty() || base.is_empty() {
                return Err(malformed());
            }
            return Ok(SubGoal::on_object(top, base));
        }
        if let Some((top, base)) = t.split_once(" is on ") {
            if top.is_empty() {
                return Err(malformed());
            }
            if let Some(loc) = NamedLocation::parse(base) {
                return Ok(SubGoal::at_location(top, loc));
            }
            let base = base.strip_prefix("the ").unwrap_or(base);
            if !base.is_empty() {
                return Ok(SubGoal::on_object(top, base));
            }
        }
        Err(malformed())
    }
}

impl fmt::Display for SubGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Renders strings as a bracketed list of JSON string literals separated by ", ".
pub fn render_string_list<S: AsRef<str>>(items: &[S]) -> String {
    let parts: Vec<String> = items
        .iter()
        .map(|s| serde_json::to_string(s.as_ref()).expect("string serializes"))
        .collect();
    format!("[{}]", parts.join(", "))
}

pub fn parse_string_list(text: &str) -> Option<Vec<String>> {
    serde_json::from_str(text.trim()).ok()
}

pub fn render_goal_list(goals: &[SubGoal]) -> String {
    let items: Vec<String> = goals.iter().map(SubGoal::render).collect();
    render_string_list(&items)
}

/// Extracts the sub-goals of a "Goal state is [...]" clause.
pub fn parse_goal_state(text: &str) -> Result<Vec<SubGoal>, MonologueError> {
    let malformed = || MonologueError::MalformedGoalList(text.to_string());
    let lower = text.to_lowercase();
    let start = lower.find("goal state is").ok_or_else(malformed)?;
    let rest = &text[start + "goal state is".len()..];
    let open = rest.find('[').ok_or_else(malformed)?;
    let close = rest.rfind(']').ok_or_else(malformed)?;
    if close < open {
        return Err(malformed());
    }
    let items = parse_string_list(&rest[open..=close]).ok_or_else(malformed)?;
    items.iter().map(|s| SubGoal::parse(s)).collect()
}

pub fn goal_thought(goals: &[SubGoal]) -> String {
    format!("Goal state is {}", render_goal_list(goals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_goal_line() {
        let line = r#"Goal state is ["Cyan block is on the top left corner.", "Yellow block is on the top left corner.", "Brown block is on the top left corner."]"#;
        let goals = parse_goal_state(line).unwrap();
        assert_eq!(goals.len(), 3);
        assert_eq!(
            goals[1],
            SubGoal::at_location("yellow block", NamedLocation::TopLeftCorner)
        );
        assert_eq!(goal_thought(&goals), line);
        let trailing = format!("{line}.");
        assert_eq!(parse_goal_state(&trailing).unwrap(), goals);
    }

    #[test]
    fn empty_goal_list() {
        assert!(parse_goal_state("Goal state is []").unwrap().is_empty());
    }

    #[test]
    fn malformed_items_rejected() {
        assert!(parse_goal_state(r#"Goal state is ["the blocks are happy"]"#).is_err());
        assert!(parse_goal_state("no goals here").is_err());
        assert!(parse_goal_state("Goal state is [oops").is_err());
    }

    #[test]
    fn object_base_template() {
        let g = SubGoal::parse("Yellow block is on top of the red bowl.").unwrap();
        assert_eq!(g, SubGoal::on_object("yellow block", "red bowl"));
        assert_eq!(g.render(), "Yellow block is on top of the red bowl.");
        assert_eq!(
            SubGoal::parse("yellow block is on the red bowl").unwrap(),
            g
        );
    }
}
