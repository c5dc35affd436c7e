//! Runtime, reward engine and desk-scale RL laboratory for aperture-guided
//! multimodal agents.
//!
//! An agent alternates between free-form reasoning, *aperture* actions that
//! extract a local view of the input image (a zoom crop or a segmentation
//! composite), and a mandatory natural-language observation of that view,
//! until it commits to an answer.
//!
//! - [`protocol`]: prompt rendering and assistant-turn parsing.
//! - [`aperture`]: zoom crops, masks and noise-composited segment views.
//! - [`tao_loop`]: the think/aperture/observe episode state machine.
//! - [`reward`]: IoU, S-measure, segmentation/task/aperture rewards.
//! - [`agrpo`]: group-relative advantages, clip-higher surrogate, curriculum
//!   and the toy policy trainer.
//! - [`backends`]: policy and segmenter backends (scripted, remote, oracle).
//! - [`harness`]: synthetic tasks, evaluation, trajectory logs, statistics.

pub mod agrpo;
pub mod aperture;
pub mod backends;
pub mod harness;
pub mod protocol;
pub mod reward;
pub mod tao_loop;

pub use aperture::{ApertureAction, Mask, NormalizedBBox, PointPrompt, View};
pub use protocol::{AssistantTurn, PromptVariant};
pub use reward::{RewardBreakdown, RewardConfig};
pub use tao_loop::{EpisodeConfig, Trajectory};

/// Shared handle to a decoded RGB image.
pub type ImageRef = std::sync::Arc<image::RgbImage>;
