use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendErrorKind, ChatRequest, PolicyBackend, PolicyReply};
use crate::protocol::{parse_assistant_turn, validate_tool_call, PromptVariant, ProtocolError};

/// Task id that matches every task.
pub const ANY_TASK: &str = "*";

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub task_id: String,
    pub turn_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

/// What to emit once a task's scripted turns run out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fallback {
    /// Reply `<answer>text</answer>`.
    Answer(String),
    /// Repeat the task's last scripted turn.
    Loop,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptParseError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("script is empty")]
    Empty,
    #[error("turn {index}: malformed record: {message}")]
    Record { index: usize, message: String },
    #[error("turn {index}: {source}")]
    Grammar { index: usize, source: ProtocolError },
    #[error("turn {index}: duplicate entry for task `{task_id}` turn {turn_index}")]
    Duplicate { index: usize, task_id: String, turn_index: usize },
}

/// Deterministic policy replaying canned turns keyed by `(task_id, turn_index)`.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    turns: HashMap<(String, usize), (String, Duration)>,
    fallback: Option<Fallback>,
    concurrency: usize,
}

impl ScriptedPolicy {
    /// Builds a policy without grammar checks, for scripts that deliberately
    /// contain invalid turns.
    pub fn new_unchecked(records: impl IntoIterator<Item = ScriptRecord>) -> Self {
        let turns = records
            .into_iter()
            .map(|r| ((r.task_id, r.turn_index), (r.text, Duration::from_millis(r.latency_ms.unwrap_or(0)))))
            .collect();
        Self { turns, fallback: None, concurrency: 16 }
    }

    /// Builds a policy after checking every turn against the variant grammar.
    pub fn from_records(records: Vec<ScriptRecord>, variant: PromptVariant) -> Result<Self, ScriptParseError> {
        if records.is_empty() {
            return Err(ScriptParseError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for (index, r) in records.iter().enumerate() {
            validate_turn(&r.text, variant).map_err(|source| ScriptParseError::Grammar { index, source })?;
            if !seen.insert((r.task_id.as_str(), r.turn_index)) {
                return Err(ScriptParseError::Duplicate { index, task_id: r.task_id.clone(), turn_index: r.turn_index });
            }
        }
        Ok(Self::new_unchecked(records))
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    fn lookup(&self, task_id: &str, turn_index: usize) -> Option<&(String, Duration)> {
        self.turns
            .get(&(task_id.to_string(), turn_index))
            .or_else(|| self.turns.get(&(ANY_TASK.to_string(), turn_index)))
    }

    fn last_turn(&self, task_id: &str, before: usize) -> Option<&(String, Duration)> {
        (0..before).rev().find_map(|i| self.lookup(task_id, i))
    }
}

/// Grammar check for one turn: structure must parse and any tool call must
/// be legal for the variant. Observation presence is a runtime concern.
fn validate_turn(text: &str, variant: PromptVariant) -> Result<(), ProtocolError> {
    let turn = parse_assistant_turn(text, variant, false)?;
    if let Some(call) = &turn.tool_call {
        validate_tool_call(call, variant)?;
    }
    Ok(())
}

impl PolicyBackend for ScriptedPolicy {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<PolicyReply, BackendError> {
        let hit = self.lookup(request.task_id, request.turn_index).cloned().or_else(|| match &self.fallback {
            Some(Fallback::Answer(text)) => Some((format!("<answer>{text}</answer>"), Duration::ZERO)),
            Some(Fallback::Loop) => self.last_turn(request.task_id, request.turn_index).cloned(),
            None => None,
        });
        match hit {
            Some((text, latency)) => Ok(PolicyReply { text, token_logprobs: None, latency }),
            None => Err(BackendError::new(
                BackendErrorKind::ScriptExhausted { task_id: request.task_id.to_string(), turn_index: request.turn_index },
                Duration::ZERO,
            )),
        }
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }
}

/// Reads a script file: one JSON record per non-blank line.
pub fn load_script(path: impl AsRef<Path>, variant: PromptVariant) -> Result<ScriptedPolicy, ScriptParseError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let index = records.len();
        let record: ScriptRecord =
            serde_json::from_str(line).map_err(|e| ScriptParseError::Record { index, message: e.to_string() })?;
        records.push(record);
    }
    ScriptedPolicy::from_records(records, variant)
}
