//! Reward stack: mask metrics, segmentation reward with a low-value clip,
//! binary task reward, gated aperture bonus and the weighted composite
//!
//! ```text
//! R_seg   = (1 − α)·IoU + α·S        (0 when below seg_clip)
//! R_final = β1·R_task + β2·R_aperture
//! ```

mod answer;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::aperture::Mask;
use crate::harness::{TaskKind, TaskSpec};
use crate::tao_loop::{Termination, Trajectory};

pub use answer::{answers_match, normalize_answer, option_letter};
pub use metrics::{iou, s_measure};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("mask dimensions differ: pred {pred:?}, gt {gt:?}")]
    DimensionMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("task `{0}` has no ground truth")]
    MissingGroundTruth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the task reward.
    pub beta1: f64,
    /// Weight of the aperture bonus.
    pub beta2: f64,
    /// S-measure share of the segmentation reward.
    pub alpha: f64,
    /// Segmentation rewards below this are zeroed.
    pub seg_clip: f64,
    /// Task reward must strictly exceed this for the aperture bonus.
    pub aperture_gate: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { beta1: 0.8, beta2: 1.2, alpha: 0.3, seg_clip: 0.1, aperture_gate: 0.3 }
    }
}

impl RewardConfig {
    /// Defaults with the two composite weights replaced.
    pub fn with_weights(beta1: f64, beta2: f64) -> Result<Self, RewardError> {
        Self { beta1, beta2, ..Self::default() }.validated()
    }

    /// Task-heavy weighting `(1.0, 0.8)`.
    pub fn task_weighted() -> Self {
        Self { beta1: 1.0, beta2: 0.8, ..Self::default() }
    }

    pub fn validated(self) -> Result<Self, RewardError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.beta1.is_finite() && self.beta1 > 0.0 && self.beta2.is_finite() && self.beta2 > 0.0) {
            return Err(RewardError::InvalidConfig(format!("weights must be positive, got ({}, {})", self.beta1, self.beta2)));
        }
        if !unit(self.alpha) {
            return Err(RewardError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !unit(self.seg_clip) || !unit(self.aperture_gate) {
            return Err(RewardError::InvalidConfig("thresholds must lie in [0, 1]".into()));
        }
        Ok(self)
    }
}

/// Every reward component of one scored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_task: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_seg: Option<f64>,
    pub r_aperture: f64,
    pub r_final: f64,
    /// A tolerated protocol violation zeroed the task and aperture terms.
    #[serde(default)]
    pub penalized: bool,
    pub config_used: RewardConfig,
}

/// Components of the segmentation reward: `(iou, s_measure, clipped combination)`.
pub fn seg_components(pred: &Mask, gt: &Mask, config: &RewardConfig) -> Result<(f64, f64, f64), RewardError> {
    let i = iou(pred, gt)?;
    let s = s_measure(pred, gt)?;
    Ok((i, s, clip_seg((1.0 - config.alpha) * i + config.alpha * s, config)))
}

fn clip_seg(combined: f64, config: &RewardConfig) -> f64 {
    if combined < config.seg_clip {
        0.0
    } else {
        combined
    }
}

pub fn seg_reward(pred: &Mask, gt: &Mask, config: &RewardConfig) -> Result<f64, RewardError> {
    seg_components(pred, gt, config).map(|(_, _, r)| r)
}

/// Answer correctness (1/0) for question tasks, clipped segmentation reward of
/// the last predicted mask for segmentation tasks. Trajectories that did not
/// end with an answer score 0.
pub fn task_reward(task: &TaskSpec, trajectory: &Trajectory, config: &RewardConfig) -> Result<f64, RewardError> {
    task_components(task, trajectory, config).map(|c| c.r_task)
}

struct TaskComponents {
    r_task: f64,
    seg: Option<(f64, f64, f64)>,
}

fn task_components(task: &TaskSpec, trajectory: &Trajectory, config: &RewardConfig) -> Result<TaskComponents, RewardError> {
    let answered = trajectory.termination == Termination::Answered;
    match &task.kind {
        TaskKind::Vqa { ground_truth, choices, .. } => {
            if ground_truth.trim().is_empty() {
                return Err(RewardError::MissingGroundTruth(task.task_id.clone()));
            }
            let hit = answered
                && trajectory
                    .final_answer
                    .as_deref()
                    .is_some_and(|a| answers_match(a, ground_truth, choices.as_deref()));
            Ok(TaskComponents { r_task: f64::from(u8::from(hit)), seg: None })
        }
        TaskKind::VisualMath { ground_truth, .. } => {
            if ground_truth.trim().is_empty() {
                return Err(RewardError::MissingGroundTruth(task.task_id.clone()));
            }
            let hit = answered && trajectory.final_answer.as_deref().is_some_and(|a| answers_match(a, ground_truth, None));
            Ok(TaskComponents { r_task: f64::from(u8::from(hit)), seg: None })
        }
        TaskKind::Segmentation { gt_mask, .. } => match (answered, trajectory.final_mask()) {
            (true, Some(pred)) => {
                let seg = seg_components(pred, gt_mask, config)?;
                Ok(TaskComponents { r_task: seg.2, seg: Some(seg) })
            }
            _ => Ok(TaskComponents { r_task: 0.0, seg: None }),
        },
    }
}

/// 1 when the trajectory used at least one aperture and `r_task` strictly
/// exceeds the gate, else 0.
pub fn aperture_reward(trajectory: &Trajectory, r_task: f64, config: &RewardConfig) -> f64 {
    gate(trajectory.aperture_count(), r_task, config)
}

fn gate(apertures: usize, r_task: f64, config: &RewardConfig) -> f64 {
    if apertures >= 1 && r_task > config.aperture_gate {
        1.0
    } else {
        0.0
    }
}

pub fn final_reward(r_task: f64, r_aperture: f64, config: &RewardConfig) -> f64 {
    config.beta1 * r_task + config.beta2 * r_aperture
}

/// Scores a finished trajectory. A trajectory carrying a tolerated violation
/// gets zero task and aperture reward, and therefore zero composite reward.
pub fn score_trajectory(task: &TaskSpec, trajectory: &Trajectory, config: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    let config = config.validated()?;
    let comps = task_components(task, trajectory, &config)?;
    let penalized = trajectory.penalized();
    let r_task = if penalized { 0.0 } else { comps.r_task };
    let r_aperture = if penalized { 0.0 } else { aperture_reward(trajectory, r_task, &config) };
    Ok(RewardBreakdown {
        r_task,
        r_iou: comps.seg.map(|s| s.0),
        r_s: comps.seg.map(|s| s.1),
        r_seg: comps.seg.map(|s| s.2),
        r_aperture,
        r_final: final_reward(r_task, r_aperture, &config),
        penalized,
        config_used: config,
    })
}
