use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvTask, TaskKind};
use crate::aperture::{to_pixel_rect, ApertureAction, NormalizedBBox, PixelRect, PointPrompt};
use crate::backends::{BackendError, BackendErrorKind, ChatRequest, PolicyBackend, PolicyReply, TokenLogprob};
use crate::protocol::{ContentPart, ToolCallPayload};

/// Canned turn sequences a perception policy can follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    AnswerDirect,
    ZoomThenAnswer,
    SegmentThenAnswer,
    /// Zooms, then answers without describing the view.
    ZoomNoObserve,
}

impl Template {
    pub const ALL: [Template; 4] = [Self::AnswerDirect, Self::ZoomThenAnswer, Self::SegmentThenAnswer, Self::ZoomNoObserve];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AnswerDirect => "answer_direct",
            Self::ZoomThenAnswer => "zoom_then_answer",
            Self::SegmentThenAnswer => "segment_then_answer",
            Self::ZoomNoObserve => "zoom_no_observe",
        }
    }
}

impl std::str::FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == key || t.as_str().split('_').next() == Some(key.as_str()))
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

/// Deterministic policy for synthetic tasks: it follows one template, aims
/// apertures at a (possibly jittered) estimate of the target location, and
/// reads the glyph only from views where the scene says it is legible.
#[derive(Debug, Clone)]
pub struct PerceptionPolicy {
    template: Template,
    tasks: Arc<HashMap<String, Arc<EnvTask>>>,
    window: u32,
    jitter: f64,
    seed: u64,
    min_view_side: u32,
    latency: Duration,
}

impl PerceptionPolicy {
    pub fn new(template: Template, tasks: impl IntoIterator<Item = Arc<EnvTask>>) -> Self {
        let tasks = tasks.into_iter().map(|t| (t.spec.task_id.clone(), t)).collect();
        Self::shared(template, Arc::new(tasks))
    }

    pub fn shared(template: Template, tasks: Arc<HashMap<String, Arc<EnvTask>>>) -> Self {
        Self { template, tasks, window: 160, jitter: 0.0, seed: 0, min_view_side: 8, latency: Duration::ZERO }
    }

    /// Side length in pixels of the requested aperture window.
    pub fn with_window(mut self, window: u32) -> Self {
        self.window = window.max(1);
        self
    }

    /// Uniform error in `[-jitter, jitter]` pixels on each axis of the target
    /// estimate, drawn once per task from `seed`.
    pub fn with_jitter(mut self, jitter: f64, seed: u64) -> Self {
        self.jitter = jitter.max(0.0);
        self.seed = seed;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_min_view_side(mut self, side: u32) -> Self {
        self.min_view_side = side;
        self
    }

    pub fn template(&self) -> Template {
        self.template
    }

    fn target_center(task: &EnvTask) -> (f64, f64) {
        if let Some(g) = &task.scene.glyph {
            return g.center();
        }
        match (&task.spec.kind, task.target) {
            (TaskKind::Segmentation { gt_mask, .. }, Some(_)) if gt_mask.count() > 0 => {
                let (mut sx, mut sy) = (0.0, 0.0);
                for y in 0..gt_mask.height() {
                    for x in 0..gt_mask.width() {
                        if gt_mask.get(x, y) {
                            sx += x as f64 + 0.5;
                            sy += y as f64 + 0.5;
                        }
                    }
                }
                let n = gt_mask.count() as f64;
                (sx / n, sy / n)
            }
            _ => (task.scene.width as f64 / 2.0, task.scene.height as f64 / 2.0),
        }
    }

    fn estimate(&self, task: &EnvTask) -> (f64, f64) {
        let (cx, cy) = Self::target_center(task);
        if self.jitter == 0.0 {
            return (cx, cy);
        }
        let key = task.spec.task_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key);
        (cx + rng.random_range(-self.jitter..=self.jitter), cy + rng.random_range(-self.jitter..=self.jitter))
    }

    fn window_rect(&self, task: &EnvTask, (ex, ey): (f64, f64)) -> PixelRect {
        let (w, h) = (task.scene.width, task.scene.height);
        let side_x = self.window.min(w);
        let side_y = self.window.min(h);
        let x0 = (ex - side_x as f64 / 2.0).round().clamp(0.0, (w - side_x) as f64) as u32;
        let y0 = (ey - side_y as f64 / 2.0).round().clamp(0.0, (h - side_y) as f64) as u32;
        PixelRect { x0, y0, x1: x0 + side_x, y1: y0 + side_y }
    }

    fn action(&self, task: &EnvTask) -> Option<ApertureAction> {
        let (w, h) = (task.scene.width, task.scene.height);
        let est = self.estimate(task);
        let bbox = NormalizedBBox::from_pixel_rect(self.window_rect(task, est), w, h).ok()?;
        let label = Some(object_phrase(task));
        match self.template {
            Template::AnswerDirect => None,
            Template::ZoomThenAnswer | Template::ZoomNoObserve => Some(ApertureAction::Zoom { bbox, obj_label: label }),
            Template::SegmentThenAnswer => {
                let px = (est.0 / w as f64 * 1000.0).clamp(0.0, 1000.0);
                let py = (est.1 / h as f64 * 1000.0).clamp(0.0, 1000.0);
                let point = PointPrompt::new(px, py, 1).ok()?;
                ApertureAction::segment(bbox, vec![point], label).ok()
            }
        }
    }

    fn answer(&self, task: &EnvTask, symbol: Option<char>) -> String {
        match (&task.spec.kind, symbol) {
            (TaskKind::Segmentation { .. }, _) => "done".into(),
            (_, Some(s)) => task.answer_from_symbol(s),
            (_, None) => "unknown".into(),
        }
    }

    fn first_turn(&self, task: &EnvTask) -> String {
        let obs = format!("The image shows {} coloured shapes on a grey background.", task.scene.shapes.len());
        match self.action(task) {
            None => {
                let symbol = {
                    let img = &task.spec.image;
                    task.scene.perceive(img, img, &task.scene.full_rect())
                };
                format!(
                    "{obs}\nThinking Process: The full view should be enough to answer.\n<answer>{}</answer>",
                    self.answer(task, symbol)
                )
            }
            Some(action) => format!(
                "{obs}\nThinking Process: The relevant detail is small, so I will inspect it more closely.\n<tool_call>\n{}\n</tool_call>",
                ToolCallPayload::from_action(&action).to_json()
            ),
        }
    }

    fn follow_up(&self, task: &EnvTask, request: &ChatRequest<'_>) -> String {
        let view = request.messages.last().and_then(|m| {
            m.content.iter().find_map(|p| match p {
                ContentPart::Image(img) => Some(img),
                ContentPart::Text(_) => None,
            })
        });
        let (w, h) = (task.scene.width, task.scene.height);
        let rect = self
            .action(task)
            .and_then(|a| to_pixel_rect(a.bbox(), w, h, self.min_view_side).ok());
        let symbol = match (view, rect) {
            (Some(v), Some(r)) => task.scene.perceive(&task.spec.image, v, &r),
            _ => None,
        };
        let observation = match (&task.spec.kind, symbol) {
            (TaskKind::Segmentation { .. }, _) => format!("The view isolates {}.", object_phrase(task)),
            (_, Some(s)) => format!("The view shows a white tag with the digit {s}."),
            (_, None) => "The view does not show a legible tag.".to_string(),
        };
        let answer = self.answer(task, symbol);
        match self.template {
            Template::ZoomNoObserve => format!("Thinking Process: Answering from the view.\n<answer>{answer}</answer>"),
            _ => format!("{observation}\nThinking Process: That settles it.\n<answer>{answer}</answer>"),
        }
    }
}

fn object_phrase(task: &EnvTask) -> String {
    match &task.spec.kind {
        TaskKind::Segmentation { instruction, .. } => instruction
            .trim_start_matches("Segment ")
            .trim_end_matches('.')
            .to_string(),
        _ => "the white tag".to_string(),
    }
}

impl PolicyBackend for PerceptionPolicy {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<PolicyReply, BackendError> {
        let Some(task) = self.tasks.get(request.task_id) else {
            return Err(BackendError::new(
                BackendErrorKind::Protocol(format!("unknown task `{}`", request.task_id)),
                Duration::ZERO,
            ));
        };
        let text = if request.turn_index == 0 { self.first_turn(task) } else { self.follow_up(task, request) };
        // the text is a deterministic function of the template choice
        let tokens = text.split_whitespace().map(|t| TokenLogprob { token: t.to_string(), logp: 0.0 }).collect();
        Ok(PolicyReply { text, token_logprobs: Some(tokens), latency: self.latency })
    }

    fn max_concurrency(&self) -> usize {
        64
    }
}
