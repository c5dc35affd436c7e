//! Prompt rendering and parsing of assistant turns.
//!
//! Turns follow a positional layout: an optional observation paragraph, a
//! thinking section (introduced by a `Thinking ...` line when an observation
//! precedes it), then at most one `<tool_call>{json}</tool_call>` block or one
//! `<answer>...</answer>` block.

mod message;
mod prompt_text;
mod prompts;
mod tool;
mod turn;

use serde::{Deserialize, Serialize};

pub use message::{render_tool_result, ContentPart, Message, Role};
pub use prompts::{render_system_prompt, render_user_prompt, system_prompt_template, user_prompt_template};
pub use tool::{validate_tool_call, ToolCallPayload, SEGMENT_TOOL, ZOOM_TOOL};
pub use turn::{parse_assistant_turn, render_assistant_turn, AssistantTurn};

/// Which prompt pair is rendered and which tools are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    /// Both tools, mandatory observation.
    #[default]
    Full,
    /// Both tools, no observation requirement.
    NoObservation,
    /// Zoom tool only.
    ZoomOnly,
    /// Segment tool only.
    SegmentOnly,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] =
        [PromptVariant::Full, PromptVariant::NoObservation, PromptVariant::ZoomOnly, PromptVariant::SegmentOnly];

    pub fn requires_observation(self) -> bool {
        self == PromptVariant::Full
    }

    pub fn allows_zoom(self) -> bool {
        self != PromptVariant::SegmentOnly
    }

    pub fn allows_segment(self) -> bool {
        self != PromptVariant::ZoomOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Full => "full",
            PromptVariant::NoObservation => "no_observation",
            PromptVariant::ZoomOnly => "zoom_only",
            PromptVariant::SegmentOnly => "segment_only",
        }
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "no_grpo" => Ok(PromptVariant::Full),
            "no_observation" => Ok(PromptVariant::NoObservation),
            "zoom_only" => Ok(PromptVariant::ZoomOnly),
            "segment_only" => Ok(PromptVariant::SegmentOnly),
            other => Err(ProtocolError::UnknownVariant(other.to_string())),
        }
    }
}

impl std::fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("empty turn")]
    EmptyTurn,
    #[error("malformed tool call: {0}")]
    MalformedToolCall(String),
    #[error("more than one tool call in a turn")]
    MultipleToolCalls,
    #[error("more than one answer block in a turn")]
    MultipleAnswers,
    #[error("turn contains both a tool call and an answer")]
    ToolCallWithAnswer,
    #[error("malformed answer block: {0}")]
    MalformedAnswer(String),
    #[error("missing observation before thinking")]
    MissingObservation,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("tool `{tool}` is not available under variant {variant}")]
    VariantViolation { tool: String, variant: PromptVariant },
    #[error("unknown prompt variant `{0}`")]
    UnknownVariant(String),
    #[error("internal error: {0}")]
    Internal(String),
}
