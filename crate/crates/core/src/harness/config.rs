use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, NeedleParams};
use crate::agrpo::AgrpoConfig;
use crate::backends::RemoteConfig;
use crate::reward::RewardConfig;
use crate::tao_loop::EpisodeConfig;

/// Every tunable constant with its default value.
pub const DEFAULT_CONFIG_TOML: &str = r#"[reward]
beta1 = 0.8
beta2 = 1.2
alpha = 0.3
seg_clip = 0.1
aperture_gate = 0.3

[agrpo]
group_size = 8
eps_low = 0.2
eps_high = 0.28
kl_weight = 0.0
std_floor = 1e-6
learning_rate = 0.3
update_epochs = 2

[episode]
variant = "full"
max_turns = 8
max_apertures = 6
on_missing_observation = "terminate"
seed = 0
observe_first_turn = true
min_view_side = 8
min_view_pixels = 64
temperature = 0.0
max_tokens = 1024
retry_attempts = 3
retry_backoff_ms = 250

[backends]
# policy = { endpoint = "http://127.0.0.1:8000/v1/chat", timeout_ms = 60000, max_concurrency = 4 }
# segmenter = { endpoint = "http://127.0.0.1:8001/segment", timeout_ms = 60000, max_concurrency = 4 }

[toy]
tasks = 64
controls = 8
control_glyph_size = 52
steps = 2000
window = 160
jitter = 76.0
seed = 0

[toy.needle]
width = 512
height = 512
glyph_size = 8
rho = 0.05
clutter = 12
center_margin = 156
"#;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub policy: Option<RemoteConfig>,
    pub segmenter: Option<RemoteConfig>,
}

/// Settings of the desk-scale training environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub tasks: usize,
    /// How many of the tasks use a glyph legible at full view.
    pub controls: usize,
    pub control_glyph_size: u32,
    pub steps: usize,
    /// Side of the aperture window the perception policy requests.
    pub window: u32,
    /// Aim error bound in pixels per axis.
    pub jitter: f64,
    pub seed: u64,
    pub needle: NeedleParams,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            tasks: 64,
            controls: 8,
            control_glyph_size: 52,
            steps: 2000,
            window: 160,
            jitter: 76.0,
            seed: 0,
            needle: NeedleParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub reward: RewardConfig,
    pub agrpo: AgrpoConfig,
    pub episode: EpisodeConfig,
    pub backends: BackendsConfig,
    pub toy: ToyConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.reward.validated().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.agrpo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.episode.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.toy.needle.validate()?;
        Ok(())
    }
}
