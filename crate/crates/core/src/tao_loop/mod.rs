//! The think/aperture/observe episode state machine.
//!
//! ```text
//! AwaitTurn ──tool call──▶ AwaitToolExecution ──view──▶ AwaitObservation (full variant)
//!     ▲                                          └──────▶ AwaitTurn (other variants)
//!     └──text only── AwaitTurn/AwaitObservation ──answer / violation──▶ Done
//! ```

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aperture::{
    compose_segment_view, request_mask_reply, zoom_crop, ApertureAction, ApertureError, Mask, NoiseSpec, View,
    ViewConfig,
};
use crate::backends::{chat_complete, ChatRequest, PolicyBackend, RetryPolicy, SamplingParams, SegmenterBackend};
use crate::harness::TaskSpec;
use crate::protocol::{
    parse_assistant_turn, render_system_prompt, render_tool_result, render_user_prompt, validate_tool_call,
    AssistantTurn, Message, PromptVariant, ProtocolError, Role,
};
use crate::reward::RewardBreakdown;
use crate::ImageRef;

pub type ViewRef = Arc<View>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoopError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error("{op} is not allowed in phase {phase:?}")]
    PhaseError { op: &'static str, phase: Phase },
    #[error("aperture budget of {0} exceeded")]
    ApertureBudgetExceeded(usize),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnMissingObservation {
    /// End the episode with a violation.
    #[default]
    Terminate,
    /// Record the violation, keep going, and zero the trajectory's reward.
    Penalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub variant: PromptVariant,
    pub max_turns: usize,
    pub max_apertures: usize,
    pub on_missing_observation: OnMissingObservation,
    pub seed: u64,
    /// Under the full variant, the first turn must also open with an observation.
    pub observe_first_turn: bool,
    pub min_view_side: u32,
    pub min_view_pixels: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        let view = ViewConfig::default();
        let retry = RetryPolicy::default();
        Self {
            variant: PromptVariant::Full,
            max_turns: 8,
            max_apertures: 6,
            on_missing_observation: OnMissingObservation::Terminate,
            seed: 0,
            observe_first_turn: true,
            min_view_side: view.min_view_side,
            min_view_pixels: view.min_view_pixels,
            temperature: 0.0,
            max_tokens: 1024,
            retry_attempts: retry.attempts,
            retry_backoff_ms: retry.initial_backoff.as_millis() as u64,
        }
    }
}

impl EpisodeConfig {
    pub fn for_variant(variant: PromptVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        if self.max_turns == 0 {
            return Err(LoopError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if self.max_apertures > self.max_turns {
            return Err(LoopError::InvalidConfig(format!(
                "max_apertures {} exceeds max_turns {}",
                self.max_apertures, self.max_turns
            )));
        }
        Ok(())
    }

    pub fn view_config(&self) -> ViewConfig {
        ViewConfig { min_view_side: self.min_view_side, min_view_pixels: self.min_view_pixels }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy { attempts: self.retry_attempts, initial_backoff: Duration::from_millis(self.retry_backoff_ms) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitTurn,
    AwaitToolExecution,
    AwaitObservation,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingObservation,
    MultipleToolCalls,
    MultipleAnswers,
    ToolCallWithAnswer,
    MalformedToolCall,
    MalformedAnswer,
    EmptyTurn,
    UnknownTool,
    SchemaViolation,
    VariantViolation,
    ApertureBudgetExceeded,
    InvalidAperture,
}

impl From<&ProtocolError> for ViolationKind {
    fn from(e: &ProtocolError) -> Self {
        match e {
            ProtocolError::MissingObservation => Self::MissingObservation,
            ProtocolError::MultipleToolCalls => Self::MultipleToolCalls,
            ProtocolError::MultipleAnswers => Self::MultipleAnswers,
            ProtocolError::ToolCallWithAnswer => Self::ToolCallWithAnswer,
            ProtocolError::MalformedAnswer(_) => Self::MalformedAnswer,
            ProtocolError::EmptyTurn => Self::EmptyTurn,
            ProtocolError::UnknownTool(_) => Self::UnknownTool,
            ProtocolError::SchemaViolation(_) => Self::SchemaViolation,
            ProtocolError::VariantViolation { .. } => Self::VariantViolation,
            ProtocolError::MalformedToolCall(_)
            | ProtocolError::InvalidTask(_)
            | ProtocolError::UnknownVariant(_)
            | ProtocolError::Internal(_) => Self::MalformedToolCall,
        }
    }
}

/// Outcome of feeding one assistant turn to the state machine.
#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    NeedToolExecution(ApertureAction),
    Finished(String),
    Continue,
    Violation(ViolationKind),
}

/// Episode state: image, query, message history and executed apertures.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub task_id: String,
    pub image: ImageRef,
    pub query: String,
    pub history: Vec<Message>,
    pub apertures: Vec<(ApertureAction, ViewRef)>,
    pub step_index: usize,
    pub phase: Phase,
    /// Violations tolerated under [`OnMissingObservation::Penalize`], by step.
    pub penalties: Vec<(usize, ViolationKind)>,
}

impl EpisodeState {
    /// Whether the next turn must open with an observation.
    pub fn expects_observation(&self, config: &EpisodeConfig) -> bool {
        config.variant.requires_observation()
            && match self.phase {
                Phase::AwaitObservation => true,
                Phase::AwaitTurn => self.step_index == 0 && config.observe_first_turn,
                _ => false,
            }
    }
}

pub fn init_episode(task: &TaskSpec, config: &EpisodeConfig) -> Result<EpisodeState, LoopError> {
    config.validate()?;
    let (w, h) = task.image.dimensions();
    if w == 0 || h == 0 {
        return Err(LoopError::InvalidTask(format!("task `{}` has an empty image", task.task_id)));
    }
    let query = task.question().to_string();
    let user = render_user_prompt(config.variant, &query).map_err(|e| LoopError::InvalidTask(e.to_string()))?;
    Ok(EpisodeState {
        task_id: task.task_id.clone(),
        image: Arc::clone(&task.image),
        query,
        history: vec![
            Message::text(Role::System, render_system_prompt(config.variant)),
            Message::with_image(Role::User, Arc::clone(&task.image), user),
        ],
        apertures: Vec::new(),
        step_index: 0,
        phase: Phase::AwaitTurn,
        penalties: Vec::new(),
    })
}

/// Applies one parsed assistant turn.
pub fn advance(state: &mut EpisodeState, turn: &AssistantTurn, config: &EpisodeConfig) -> Result<Transition, LoopError> {
    if !matches!(state.phase, Phase::AwaitTurn | Phase::AwaitObservation) {
        return Err(LoopError::PhaseError { op: "advance", phase: state.phase });
    }
    let expected = state.expects_observation(config);
    state.history.push(Message::text(Role::Assistant, turn.raw.clone()));
    let step = state.step_index;
    state.step_index += 1;

    if expected && !turn.has_observation() {
        match config.on_missing_observation {
            OnMissingObservation::Terminate => return Ok(finish(state, Transition::Violation(ViolationKind::MissingObservation))),
            OnMissingObservation::Penalize => state.penalties.push((step, ViolationKind::MissingObservation)),
        }
    }
    if let Some(call) = &turn.tool_call {
        let action = match validate_tool_call(call, config.variant) {
            Ok(a) => a,
            Err(e) => return Ok(finish(state, Transition::Violation(ViolationKind::from(&e)))),
        };
        if state.apertures.len() >= config.max_apertures {
            return Ok(finish(state, Transition::Violation(ViolationKind::ApertureBudgetExceeded)));
        }
        state.phase = Phase::AwaitToolExecution;
        return Ok(Transition::NeedToolExecution(action));
    }
    if let Some(answer) = &turn.answer {
        return Ok(finish(state, Transition::Finished(answer.clone())));
    }
    state.phase = Phase::AwaitTurn;
    Ok(Transition::Continue)
}

fn finish(state: &mut EpisodeState, t: Transition) -> Transition {
    state.phase = Phase::Done;
    t
}

/// Records an executed aperture and appends its tool-result message.
pub fn attach_view(
    state: &mut EpisodeState,
    action: ApertureAction,
    view: ViewRef,
    config: &EpisodeConfig,
) -> Result<(), LoopError> {
    if state.phase != Phase::AwaitToolExecution {
        return Err(LoopError::PhaseError { op: "attach_view", phase: state.phase });
    }
    if state.apertures.len() >= config.max_apertures {
        return Err(LoopError::ApertureBudgetExceeded(config.max_apertures));
    }
    state.history.push(render_tool_result(&view, &action, config.variant)?);
    state.apertures.push((action, view));
    state.phase = if config.variant.requires_observation() { Phase::AwaitObservation } else { Phase::AwaitTurn };
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StepAction {
    TextOnly,
    Aperture(ApertureAction),
    Answer(String),
}

/// One assistant turn and what the environment did with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub action: StepAction,
    /// Present exactly for aperture steps.
    pub view: Option<ViewRef>,
    /// Segmenter output for segment steps.
    pub mask: Option<Arc<Mask>>,
    pub turn: AssistantTurn,
    /// Policy latency plus tool latency.
    pub latency: Duration,
    pub tool_latency: Duration,
    pub violation: Option<ViolationKind>,
    /// Number of policy-generated tokens, when the backend reports them.
    pub generated_tokens: Option<usize>,
}

impl Step {
    fn new(turn: AssistantTurn, latency: Duration, generated_tokens: Option<usize>) -> Self {
        Self {
            action: StepAction::TextOnly,
            view: None,
            mask: None,
            turn,
            latency,
            tool_latency: Duration::ZERO,
            violation: None,
            generated_tokens,
        }
    }

    pub fn is_aperture(&self) -> bool {
        matches!(self.action, StepAction::Aperture(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Termination {
    Answered,
    MaxTurns,
    Violation(ViolationKind),
    BackendError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub variant: PromptVariant,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub termination: Termination,
    pub reward: Option<RewardBreakdown>,
    /// Sum of backend-reported step latencies.
    pub wall_time: Duration,
}

impl Trajectory {
    pub fn aperture_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_aperture()).count()
    }

    /// Mask of the last segment action.
    pub fn final_mask(&self) -> Option<&Mask> {
        self.steps.iter().rev().find_map(|s| match (&s.action, &s.mask) {
            (StepAction::Aperture(ApertureAction::Segment { .. }), Some(m)) => Some(m.as_ref()),
            _ => None,
        })
    }

    /// Whether a tolerated violation occurred.
    pub fn penalized(&self) -> bool {
        self.steps.iter().any(|s| s.violation.is_some())
    }
}

/// Seed of the background noise for the segment view produced at `step`.
pub fn noise_seed(episode_seed: u64, step: usize) -> u64 {
    episode_seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn turn_from_text(text: &str, state: &EpisodeState, config: &EpisodeConfig) -> Result<AssistantTurn, ProtocolError> {
    match parse_assistant_turn(text, config.variant, state.expects_observation(config)) {
        // let the state machine decide what a missing observation means
        Err(ProtocolError::MissingObservation) => parse_assistant_turn(text, config.variant, false),
        other => other,
    }
}

fn raw_turn(text: String) -> AssistantTurn {
    AssistantTurn { observation: None, thinking: String::new(), tool_call: None, answer: None, raw: text }
}

fn execute(
    action: &ApertureAction,
    image: &ImageRef,
    segmenter: &dyn SegmenterBackend,
    seed: u64,
    view_config: &ViewConfig,
) -> Result<(View, Option<Mask>, Duration), ApertureError> {
    match action {
        ApertureAction::Zoom { bbox, .. } => Ok((zoom_crop(image, bbox, view_config)?, None, Duration::ZERO)),
        ApertureAction::Segment { bbox, .. } => {
            let reply = request_mask_reply(segmenter, image, action)?;
            let view = compose_segment_view(image, &reply.mask, bbox, &NoiseSpec::with_seed(seed), view_config)?;
            Ok((view, Some(reply.mask), reply.latency))
        }
    }
}

/// Runs one episode to completion. Backend failures end the episode with a
/// [`Termination::BackendError`] rather than an error.
pub fn run_episode(
    policy: &dyn PolicyBackend,
    segmenter: &dyn SegmenterBackend,
    task: &TaskSpec,
    config: &EpisodeConfig,
) -> Result<Trajectory, LoopError> {
    let mut state = init_episode(task, config)?;
    let retry = config.retry();
    let view_config = config.view_config();
    let mut steps: Vec<Step> = Vec::new();
    let mut final_answer = None;

    let termination = loop {
        if state.step_index >= config.max_turns {
            break Termination::MaxTurns;
        }
        let request = ChatRequest {
            task_id: &task.task_id,
            turn_index: state.step_index,
            messages: &state.history,
            params: SamplingParams { temperature: config.temperature, seed: config.seed, max_tokens: config.max_tokens },
        };
        let reply = match chat_complete(policy, &request, &retry) {
            Ok(r) => r,
            Err(e) => {
                steps.push(Step::new(raw_turn(String::new()), e.latency, None));
                break Termination::BackendError(e.to_string());
            }
        };
        let tokens = reply.token_logprobs.as_ref().map(Vec::len);
        let turn = match turn_from_text(&reply.text, &state, config) {
            Ok(t) => t,
            Err(e) => {
                let kind = ViolationKind::from(&e);
                state.history.push(Message::text(Role::Assistant, reply.text.clone()));
                state.step_index += 1;
                state.phase = Phase::Done;
                let mut step = Step::new(raw_turn(reply.text), reply.latency, tokens);
                step.violation = Some(kind);
                steps.push(step);
                break Termination::Violation(kind);
            }
        };
        let step_no = state.step_index;
        let transition = advance(&mut state, &turn, config)?;
        let mut step = Step::new(turn, reply.latency, tokens);
        if let Some(&(_, kind)) = state.penalties.iter().find(|(s, _)| *s == step_no) {
            step.violation = Some(kind);
        }
        match transition {
            Transition::Continue => steps.push(step),
            Transition::Finished(answer) => {
                step.action = StepAction::Answer(answer.clone());
                steps.push(step);
                final_answer = Some(answer);
                break Termination::Answered;
            }
            Transition::Violation(kind) => {
                step.violation = Some(kind);
                steps.push(step);
                break Termination::Violation(kind);
            }
            Transition::NeedToolExecution(action) => {
                match execute(&action, &state.image, segmenter, noise_seed(config.seed, step_no), &view_config) {
                    Ok((view, mask, tool_latency)) => {
                        let view = Arc::new(view);
                        attach_view(&mut state, action.clone(), Arc::clone(&view), config)?;
                        step.action = StepAction::Aperture(action);
                        step.view = Some(view);
                        step.mask = mask.map(Arc::new);
                        step.tool_latency = tool_latency;
                        step.latency += tool_latency;
                        steps.push(step);
                    }
                    Err(ApertureError::SegmenterUnavailable(msg)) => {
                        state.phase = Phase::Done;
                        steps.push(step);
                        break Termination::BackendError(format!("segmenter unavailable: {msg}"));
                    }
                    Err(_) => {
                        state.phase = Phase::Done;
                        step.violation = Some(ViolationKind::InvalidAperture);
                        steps.push(step);
                        break Termination::Violation(ViolationKind::InvalidAperture);
                    }
                }
            }
        }
    };

    let wall_time = steps.iter().map(|s| s.latency).sum();
    Ok(Trajectory {
        task_id: task.task_id.clone(),
        variant: config.variant,
        steps,
        final_answer,
        termination,
        reward: None,
        wall_time,
    })
}

#[cfg(test)]
mod tests;
