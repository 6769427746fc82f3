//! Deterministic replay backend.
//!
//! A scripted program is a JSON Lines file, one record per turn:
//!
//! ```text
//! {"turn": 1, "content": "TOOL: {\"request\": ...}", "input_tokens": 900, "output_tokens": 120}
//! {"turn": 1, "agent": "prompt", "content": "Change X to Y."}
//! ```
//!
//! Records are consumed strictly in order, one per call. `agent` selects the
//! repair agent (default) or the prompt agent; turn numbers count from 1 per
//! agent. Missing token counts fall back to the character-based estimate.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{estimate_tokens, BackendError, ChatMessage, Completion, CompletionBackend, ModelProfile, Usage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptAgent {
    #[default]
    Repair,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    pub turn: u32,
    #[serde(default, skip_serializing_if = "is_repair")]
    pub agent: ScriptAgent,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

fn is_repair(agent: &ScriptAgent) -> bool {
    *agent == ScriptAgent::Repair
}

impl ScriptedTurn {
    pub fn new(turn: u32, content: impl Into<String>) -> Self {
        Self { turn, agent: ScriptAgent::Repair, content: content.into(), input_tokens: None, output_tokens: None }
    }

    pub fn prompt(turn: u32, content: impl Into<String>) -> Self {
        Self { agent: ScriptAgent::Prompt, ..Self::new(turn, content) }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.input_tokens = Some(input_tokens);
        self.output_tokens = Some(output_tokens);
        self
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("script line {line}: expected turn {expected} for the {agent:?} agent, found {found}")]
    OutOfOrder { line: usize, agent: ScriptAgent, expected: u32, found: u32 },
}

/// A parsed, validated script.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedProgram {
    pub turns: Vec<ScriptedTurn>,
}

impl ScriptedProgram {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut turns = Vec::new();
        let mut next = [1u32, 1u32];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let turn: ScriptedTurn =
                serde_json::from_str(raw).map_err(|e| ScriptError::Parse { line, message: e.to_string() })?;
            let slot = &mut next[turn.agent as usize];
            if turn.turn != *slot {
                return Err(ScriptError::OutOfOrder { line, agent: turn.agent, expected: *slot, found: turn.turn });
            }
            *slot += 1;
            turns.push(turn);
        }
        Ok(Self { turns })
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text =
            fs::read_to_string(path).map_err(|source| ScriptError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.turns.iter().map(|t| serde_json::to_string(t).expect("script turns serialize") + "\n").collect()
    }

    /// Backend replaying the turns for `agent`.
    pub fn backend(&self, agent: ScriptAgent) -> ScriptedBackend {
        ScriptedBackend::new(self.turns.iter().filter(|t| t.agent == agent).cloned())
    }
}

/// Replays canned responses, one per call; errors once the program is exhausted.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<ScriptedTurn>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(turns: impl IntoIterator<Item = ScriptedTurn>) -> Self {
        Self { queue: Mutex::new(turns.into_iter().collect()), calls: AtomicUsize::new(0) }
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().enumerate().map(|(i, r)| ScriptedTurn::new(i as u32 + 1, r)))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script queue poisoned").len()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _profile: &ModelProfile) -> Result<Completion, BackendError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let turn = self
            .queue
            .lock()
            .expect("script queue poisoned")
            .pop_front()
            .ok_or_else(|| BackendError::Fatal(format!("scripted program exhausted at call {call}")))?;
        let input =
            turn.input_tokens.unwrap_or_else(|| messages.iter().map(|m| estimate_tokens(&m.content) as u64).sum());
        let output = turn.output_tokens.unwrap_or_else(|| estimate_tokens(&turn.content) as u64);
        Ok(Completion { message: ChatMessage::assistant(turn.content), usage: Usage::new(input, output) })
    }
}

/// Backend that refuses every call. Stands in wherever no completion may happen,
/// e.g. the prompt agent outside auto-feedback, or any network in scripted mode.
#[derive(Debug, Default)]
pub struct ForbiddenBackend {
    attempts: AtomicUsize,
}

impl ForbiddenBackend {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ForbiddenBackend {
    fn complete(&self, _: &[ChatMessage], profile: &ModelProfile) -> Result<Completion, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(BackendError::Fatal(format!("completion for {} is not permitted here", profile.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, Conversation, GatewayError, RetryPolicy};

    fn conv() -> Conversation {
        Conversation::from_messages(vec![ChatMessage::system("s"), ChatMessage::user("u")]).unwrap()
    }

    #[test]
    fn replays_in_order() {
        let b = ScriptedBackend::from_responses(["RESPONSE_A", "RESPONSE_B"]);
        let p = ModelProfile::gpt_4_turbo();
        let r = RetryPolicy::immediate(0);
        assert_eq!(complete(&conv(), &p, &b, &r, &estimate_tokens).unwrap().message.content, "RESPONSE_A");
        assert_eq!(complete(&conv(), &p, &b, &r, &estimate_tokens).unwrap().message.content, "RESPONSE_B");
    }

    #[test]
    fn empty_program_is_a_transport_error() {
        let b = ScriptedBackend::default();
        let err = complete(&conv(), &ModelProfile::gpt_4_turbo(), &b, &RetryPolicy::immediate(3), &estimate_tokens)
            .unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 1, .. }));
    }

    #[test]
    fn synthetic_usage_wins_over_estimate() {
        let b = ScriptedBackend::new([
            ScriptedTurn::new(1, "abcdefgh").with_usage(500, 7),
            ScriptedTurn::new(2, "abcdefgh"),
        ]);
        let p = ModelProfile::gpt_4_turbo();
        assert_eq!(b.complete(conv().messages(), &p).unwrap().usage, Usage::new(500, 7));
        assert_eq!(b.complete(conv().messages(), &p).unwrap().usage, Usage::new(2, 2));
    }

    #[test]
    fn parses_jsonl_and_splits_agents() {
        let text = r#"{"turn": 1, "content": "a"}

{"turn": 1, "agent": "prompt", "content": "hint", "input_tokens": 3, "output_tokens": 4}
{"turn": 2, "content": "b"}
"#;
        let prog = ScriptedProgram::parse(text).unwrap();
        assert_eq!(prog.turns.len(), 3);
        assert_eq!(prog.backend(ScriptAgent::Repair).remaining(), 2);
        assert_eq!(prog.backend(ScriptAgent::Prompt).remaining(), 1);
        assert_eq!(ScriptedProgram::parse(&prog.to_jsonl()).unwrap(), prog);
    }

    #[test]
    fn rejects_out_of_order_turns() {
        let err = ScriptedProgram::parse("{\"turn\": 2, \"content\": \"x\"}").unwrap_err();
        assert!(matches!(err, ScriptError::OutOfOrder { expected: 1, found: 2, .. }));
        let err = ScriptedProgram::parse("not json").unwrap_err();
        assert!(matches!(err, ScriptError::Parse { line: 1, .. }));
    }

    #[test]
    fn forbidden_backend_counts_attempts() {
        let f = ForbiddenBackend::default();
        assert!(f.complete(&[], &ModelProfile::gpt_4_turbo()).is_err());
        assert_eq!(f.attempts(), 1);
    }
}
