//! In-process backends for tests and listing replay.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::{sha256_hex, BackendError, CompletionBackend, CompletionRequest};
use crate::monologue::{render_transcript, Document, MonologueError, Transcript};

pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt)
}

/// Canned completions keyed by the SHA-256 of the prompt.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    canned: HashMap<String, String>,
}

impl MockBackend {
    pub fn insert(&mut self, prompt: &str, completion: &str) {
        self.canned
            .insert(prompt_digest(prompt), completion.to_string());
    }

    pub fn insert_digest(&mut self, digest: &str, completion: &str) {
        self.canned
            .insert(digest.to_string(), completion.to_string());
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.canned
            .get(&prompt_digest(&request.prompt))
            .cloned()
            .ok_or_else(|| BackendError::Fatal("no canned completion for prompt".into()))
    }
}

/// Returns queued results in order, then fails.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Result<String, BackendError>>>,
}

impl ScriptedBackend {
    pub fn new(results: Vec<Result<String, BackendError>>) -> Self {
        Self {
            queue: Mutex::new(results.into()),
        }
    }

    /// The same completion forever.
    pub fn repeating(text: &str, times: usize) -> Self {
        Self::new(vec![Ok(text.to_string()); times])
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
        self.queue
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Fatal("script exhausted".into())))
    }
}

/// Replays a recorded episode's planner turns, checking every prompt.
#[derive(Debug)]
pub struct ListingMock {
    turns: Vec<(String, String)>,
    cursor: Mutex<usize>,
}

impl ListingMock {
    pub fn new(turns: Vec<(String, String)>) -> Self {
        Self {
            turns,
            cursor: Mutex::new(0),
        }
    }

    pub fn turns(&self) -> &[(String, String)] {
        &self.turns
    }

    pub fn served(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }
}

impl CompletionBackend for ListingMock {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let index = *cursor;
        let (expected, completion) = self.turns.get(index).ok_or_else(|| {
            BackendError::Fatal(format!("listing exhausted after {index} completions"))
        })?;
        if request.prompt != *expected {
            let offset = request
                .prompt
                .bytes()
                .zip(expected.bytes())
                .position(|(a, b)| a != b)
                .unwrap_or(request.prompt.len().min(expected.len()));
            return Err(BackendError::PromptDivergence { index, offset });
        }
        *cursor += 1;
        Ok(completion.clone())
    }
}

/// Splits a transcript into (prompt, completion) pairs, one per planner turn.
pub fn mock_from_transcript(
    few_shot: &str,
    transcript: &Transcript,
) -> Result<ListingMock, MonologueError> {
    let rendered = render_transcript(transcript)?;
    let sep = transcript.dialect.separator();
    let turns = transcript
        .planner_turns()
        .into_iter()
        .map(|turn| {
            let prompt = format!("{few_shot}{sep}{}", rendered.prefix_before(turn.start));
            (prompt, rendered.slice(turn).to_string())
        })
        .collect();
    Ok(ListingMock::new(turns))
}

/// Mock replaying episode `episode` of a listing, with all earlier episodes as few-shot context.
pub fn mock_from_listing(doc: &Document, episode: usize) -> Result<ListingMock, MonologueError> {
    let Some(t) = doc.episodes.get(episode) else {
        return Ok(ListingMock::new(Vec::new()));
    };
    mock_from_transcript(&doc.few_shot_before(episode)?, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden::GoldenListing;
    use crate::monologue::Dialect;

    fn req(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: 8,
            temperature: 0.0,
            stop: vec![],
        }
    }

    #[test]
    fn empty_listing_errors_first_call() {
        let m = ListingMock::new(vec![]);
        assert!(matches!(m.complete(&req("x")), Err(BackendError::Fatal(_))));
    }

    #[test]
    fn real_stacking_turns() {
        let doc = GoldenListing::by_dialect(Dialect::RealTabletop)
            .document()
            .unwrap();
        let m = mock_from_listing(&doc, 1).unwrap();
        let completions: Vec<&str> = m.turns().iter().map(|(_, c)| c.as_str()).collect();
        assert_eq!(
            completions,
            [
                r#"Robot action: robot.pick_place("brown block", "purple block")"#,
                r#"Robot action: robot.pick_place("brown block", "purple block")"#,
                r#"Robot action: robot.pick_place("orange block", "brown block")"#,
                "Robot action: robot.stop()\nSTOP",
            ]
        );
        assert!(m.turns()[0].0.ends_with("Scene: Occluded objects are []\n"));
        assert!(m.turns()[0]
            .0
            .starts_with("===============\nTask: Move all blocks"));
    }

    #[test]
    fn divergent_prompt_reported() {
        let doc = GoldenListing::by_dialect(Dialect::Kitchen)
            .document()
            .unwrap();
        let m = mock_from_listing(&doc, 0).unwrap();
        let (p, c) = m.turns()[0].clone();
        assert!(p.ends_with("Human: hold the snickers\nRobot: "));
        assert_eq!(c, "1. pick up the snickers");
        assert!(matches!(
            m.complete(&req("nope")),
            Err(BackendError::PromptDivergence { index: 0, .. })
        ));
        assert_eq!(m.complete(&req(&p)).unwrap(), c);
    }
}
