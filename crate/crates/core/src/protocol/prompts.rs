use super::prompt_text::*;
use super::{PromptVariant, ProtocolError};

/// The fixed system prompt for a variant. The no-observation ablation keeps
/// the full tool prompt and only changes the user instructions.
pub fn system_prompt_template(variant: PromptVariant) -> &'static str {
    match variant {
        PromptVariant::Full | PromptVariant::NoObservation => FULL_SYSTEM,
        PromptVariant::ZoomOnly => ZOOM_SYSTEM,
        PromptVariant::SegmentOnly => SEGMENT_SYSTEM,
    }
}

pub fn user_prompt_template(variant: PromptVariant) -> &'static str {
    match variant {
        PromptVariant::Full => FULL_USER,
        PromptVariant::NoObservation => NO_OBSERVATION_USER,
        PromptVariant::ZoomOnly => ZOOM_USER,
        PromptVariant::SegmentOnly => SEGMENT_USER,
    }
}

pub fn render_system_prompt(variant: PromptVariant) -> String {
    system_prompt_template(variant).to_string()
}

/// Instructions first, then a blank line, then the question.
pub fn render_user_prompt(variant: PromptVariant, task_question: &str) -> Result<String, ProtocolError> {
    let question = task_question.trim();
    if question.is_empty() {
        return Err(ProtocolError::InvalidTask("empty question".into()));
    }
    let template = user_prompt_template(variant);
    let mut out = String::with_capacity(template.len() + question.len() + 2);
    out.push_str(template);
    if !template.ends_with('\n') {
        out.push('\n');
    }
    out.push('\n');
    out.push_str(question);
    Ok(out)
}
