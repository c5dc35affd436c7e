//! Synthetic tasks, evaluation runs, trajectory logs and usage statistics.

mod config;
mod eval;
mod generators;
mod log;
mod policy;
mod report;
mod scene;
mod stats;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aperture::Mask;
use crate::backends::LabelMap;
use crate::ImageRef;

pub use config::{AppConfig, BackendsConfig, ToyConfig, DEFAULT_CONFIG_TOML};
pub use eval::{run_eval, EvalSummary, FamilySummary};
pub use generators::{
    gen_math_task, gen_needle_task, gen_shape_seg_task, read_tasks, write_tasks, NeedleParams, ShapeSegParams, TaskRecord,
};
pub use log::{read_log, replay_record, LogHeader, LogWriter, StepRecord, TrajectoryRecord, LOG_FORMAT};
pub use policy::{PerceptionPolicy, Template};
pub use report::{render_usage_text, report_train, report_usage, ReportFormat};
pub use scene::{Geometry, Glyph, Shape, SyntheticScene};
pub use stats::{compute_usage_stats, UsageStats};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid parameters: {0}")]
    Param(String),
    #[error("log corrupt at line {line}: {message}")]
    LogCorrupt { line: usize, message: String },
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("replay diverged for task `{task_id}`: {detail}")]
    ReplayMismatch { task_id: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskKind {
    Vqa {
        question: String,
        ground_truth: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        choices: Option<Vec<String>>,
    },
    VisualMath {
        question: String,
        ground_truth: String,
    },
    Segmentation {
        instruction: String,
        #[serde(skip)]
        gt_mask: Mask,
    },
}

/// One evaluation item: an image, a question or instruction, and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub image: ImageRef,
    pub meta: BTreeMap<String, String>,
}

impl TaskSpec {
    /// The text placed after the user instructions.
    pub fn question(&self) -> &str {
        match &self.kind {
            TaskKind::Vqa { question, .. } | TaskKind::VisualMath { question, .. } => question,
            TaskKind::Segmentation { instruction, .. } => instruction,
        }
    }

    pub fn family(&self) -> &'static str {
        match self.kind {
            TaskKind::Vqa { .. } => "vqa",
            TaskKind::VisualMath { .. } => "visual_math",
            TaskKind::Segmentation { .. } => "segmentation",
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match &self.kind {
            TaskKind::Vqa { ground_truth, .. } | TaskKind::VisualMath { ground_truth, .. } if ground_truth.trim().is_empty() => {
                Err(HarnessError::Param(format!("task `{}` lacks ground truth", self.task_id)))
            }
            TaskKind::Segmentation { gt_mask, .. } if gt_mask.dims() != self.image.dimensions() => {
                Err(HarnessError::Param(format!("task `{}` mask does not match its image", self.task_id)))
            }
            _ => Ok(()),
        }
    }
}

/// A task together with the scene it was rendered from.
#[derive(Debug, Clone)]
pub struct EnvTask {
    pub spec: TaskSpec,
    pub scene: Arc<SyntheticScene>,
    pub labels: Arc<LabelMap>,
    /// Label of the shape a segmentation instruction refers to.
    pub target: Option<u16>,
}

impl EnvTask {
    /// Renders `scene` and wraps it as a task.
    pub fn new(task_id: String, kind_for: impl FnOnce(&LabelMap) -> TaskKind, scene: SyntheticScene, target: Option<u16>) -> Self {
        let (img, labels) = scene.render();
        let kind = kind_for(&labels);
        Self {
            spec: TaskSpec { task_id, kind, image: Arc::new(img), meta: BTreeMap::new() },
            scene: Arc::new(scene),
            labels: Arc::new(labels),
            target,
        }
    }

    /// Converts the digit read off the glyph into this task's answer.
    pub fn answer_from_symbol(&self, symbol: char) -> String {
        let d = symbol.to_digit(10).unwrap_or(0) as i64;
        match self.spec.meta.get("answer_rule").map(String::as_str) {
            Some(rule) => match rule.split_once(',').map(|(m, a)| (m.parse::<i64>(), a.parse::<i64>())) {
                Some((Ok(m), Ok(a))) => (d * m + a).to_string(),
                _ => symbol.to_string(),
            },
            None => symbol.to_string(),
        }
    }
}
