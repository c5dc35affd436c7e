use super::{PromptVariant, ProtocolError, ToolCallPayload};

const TOOL_OPEN: &str = "<tool_call>";
const TOOL_CLOSE: &str = "</tool_call>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Header phrases that start the thinking section, longest first.
const THINKING_MARKERS: &[&str] = &["thinking process", "thought process", "thinking", "thoughts", "reasoning"];

/// One parsed model turn.
#[derive(Debug, Clone, PartialEq)]
pub struct AssistantTurn {
    /// Description of the most recent view, when one was expected.
    pub observation: Option<String>,
    pub thinking: String,
    pub tool_call: Option<ToolCallPayload>,
    pub answer: Option<String>,
    /// Verbatim model output.
    pub raw: String,
}

impl AssistantTurn {
    pub fn has_observation(&self) -> bool {
        self.observation.as_deref().is_some_and(|o| !o.trim().is_empty())
    }
}

#[derive(Debug)]
struct Block {
    start: usize,
    inner: (usize, usize),
}

fn find_block(text: &str, open: &str, close: &str) -> Result<Option<Block>, BlockError> {
    let opens = text.matches(open).count();
    let closes = text.matches(close).count();
    if opens > 1 || closes > 1 {
        return Err(BlockError::Multiple);
    }
    match (text.find(open), text.find(close)) {
        (None, None) => Ok(None),
        (Some(s), Some(e)) if e >= s + open.len() => Ok(Some(Block { start: s, inner: (s + open.len(), e) })),
        (Some(_), None) => Err(BlockError::Unterminated),
        _ => Err(BlockError::Unbalanced),
    }
}

enum BlockError {
    Multiple,
    Unterminated,
    Unbalanced,
}

/// Parses a complete model turn.
///
/// When an observation is expected (and the variant demands one), the
/// observation is the prose before the first `Thinking`-style header line, or
/// all prose before the first tag when there is no header.
pub fn parse_assistant_turn(
    text: &str,
    variant: PromptVariant,
    expects_observation: bool,
) -> Result<AssistantTurn, ProtocolError> {
    if text.trim().is_empty() {
        return Err(ProtocolError::EmptyTurn);
    }
    let tool = find_block(text, TOOL_OPEN, TOOL_CLOSE).map_err(|e| match e {
        BlockError::Multiple => ProtocolError::MultipleToolCalls,
        BlockError::Unterminated => ProtocolError::MalformedToolCall("unterminated <tool_call>".into()),
        BlockError::Unbalanced => ProtocolError::MalformedToolCall("unbalanced tool_call tags".into()),
    })?;
    let answer = find_block(text, ANSWER_OPEN, ANSWER_CLOSE).map_err(|e| match e {
        BlockError::Multiple => ProtocolError::MultipleAnswers,
        BlockError::Unterminated => ProtocolError::MalformedAnswer("unterminated <answer>".into()),
        BlockError::Unbalanced => ProtocolError::MalformedAnswer("unbalanced answer tags".into()),
    })?;
    if tool.is_some() && answer.is_some() {
        return Err(ProtocolError::ToolCallWithAnswer);
    }

    let tool_call = tool
        .as_ref()
        .map(|b| ToolCallPayload::from_json(&text[b.inner.0..b.inner.1]))
        .transpose()?;
    let answer_text = match &answer {
        Some(b) => {
            let inner = text[b.inner.0..b.inner.1].trim();
            if inner.is_empty() {
                return Err(ProtocolError::MalformedAnswer("empty answer".into()));
            }
            Some(inner.to_string())
        }
        None => None,
    };

    let prose_end = tool.as_ref().or(answer.as_ref()).map_or(text.len(), |b| b.start);
    let prose = &text[..prose_end];

    let (observation, thinking) = if expects_observation && variant.requires_observation() {
        let (obs, thinking) = match find_marker_line(prose) {
            Some(at) => (prose[..at].trim(), strip_marker(prose[at..].trim())),
            None => (prose.trim(), String::new()),
        };
        if obs.is_empty() {
            return Err(ProtocolError::MissingObservation);
        }
        (Some(obs.to_string()), thinking)
    } else {
        (None, strip_marker(prose.trim()))
    };

    Ok(AssistantTurn { observation, thinking, tool_call, answer: answer_text, raw: text.to_string() })
}

/// Byte offset of the first line that opens with a thinking header.
fn find_marker_line(prose: &str) -> Option<usize> {
    let mut offset = 0;
    for line in prose.split_inclusive('\n') {
        if marker_len(line.trim_start()).is_some() {
            return Some(offset);
        }
        offset += line.len();
    }
    None
}

/// Length of the header prefix (`Thinking Process:`, `(Thinking Process)`, ...).
fn marker_len(line: &str) -> Option<usize> {
    let body = line.strip_prefix('(').unwrap_or(line);
    let skipped = line.len() - body.len();
    let lower = body.to_ascii_lowercase();
    let marker = THINKING_MARKERS.iter().find(|m| lower.starts_with(**m))?;
    let after = &body[marker.len()..];
    // the header must end at a word boundary
    if after.chars().next().is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    let rest = after.trim_start_matches([')', ':', '.', '-', '*']);
    Some(skipped + marker.len() + (after.len() - rest.len()))
}

fn strip_marker(section: &str) -> String {
    match marker_len(section) {
        Some(n) => section[n..].trim().to_string(),
        None => section.to_string(),
    }
}

/// Canonical text for a turn; [`parse_assistant_turn`] inverts it.
pub fn render_assistant_turn(turn: &AssistantTurn) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Some(obs) = &turn.observation {
        parts.push(obs.clone());
    }
    if !turn.thinking.is_empty() {
        parts.push(format!("Thinking Process: {}", turn.thinking));
    }
    if let Some(call) = &turn.tool_call {
        parts.push(format!("{TOOL_OPEN}\n{}\n{TOOL_CLOSE}", call.to_json()));
    }
    if let Some(ans) = &turn.answer {
        parts.push(format!("{ANSWER_OPEN}{ans}{ANSWER_CLOSE}"));
    }
    parts.join("\n\n")
}
