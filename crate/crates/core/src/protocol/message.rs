use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PromptVariant, ProtocolError};
use crate::aperture::{ApertureAction, View};
use crate::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Image(ImageRef),
}

/// One conversation message; images stay decoded until a backend encodes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, content: vec![ContentPart::Text(text.into())] }
    }

    pub fn with_image(role: Role, image: ImageRef, text: impl Into<String>) -> Self {
        Self { role, content: vec![ContentPart::Image(image), ContentPart::Text(text.into())] }
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.content.iter().filter_map(|p| match p {
            ContentPart::Image(img) => Some(img),
            ContentPart::Text(_) => None,
        })
    }
}

/// The user-role message carrying an executed aperture's view back to the
/// policy: the image, then a caption naming the tool and echoing its inputs.
pub fn render_tool_result(view: &View, action: &ApertureAction, variant: PromptVariant) -> Result<Message, ProtocolError> {
    let (w, h) = view.pixels().dimensions();
    if w == 0 || h == 0 {
        return Err(ProtocolError::Internal("cannot render a zero-area view".into()));
    }
    let mut caption = format!("{} result\n", action.tool_name());
    let [x1, y1, x2, y2] = action.bbox().to_array();
    let _ = writeln!(caption, "bbox: [{x1}, {y1}, {x2}, {y2}]");
    if let ApertureAction::Segment { points, .. } = action {
        let pts: Vec<String> = points.iter().map(|p| format!("[{}, {}]", p.x, p.y)).collect();
        let labels: Vec<String> = points.iter().map(|p| p.label().to_string()).collect();
        let _ = writeln!(caption, "points: [{}]", pts.join(", "));
        let _ = writeln!(caption, "labels: [{}]", labels.join(", "));
    }
    if let Some(label) = action.obj_label() {
        let _ = writeln!(caption, "obj_label: {label}");
    }
    let _ = writeln!(caption, "view: {w}x{h} px");
    if view.is_empty_mask() {
        caption.push_str("note: the segmentation mask was empty; the view shows background noise only\n");
    }
    if variant.requires_observation() {
        caption.push_str("Describe what you observe in this view first, then continue.\n");
    }
    Ok(Message::with_image(Role::User, Arc::new(view.pixels().clone()), caption))
}
