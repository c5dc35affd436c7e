//! Group-relative policy optimisation at desk scale.
//!
//! Rewards of `G` rollouts of one prompt are normalised against each other,
//! the resulting advantage is broadcast to every generated token, and the
//! policy follows an asymmetrically clipped ratio objective with no KL term:
//!
//! ```text
//! A_i  = (r_i − mean r) / (std r + std_floor)
//! loss = −mean_t min(ρ_t A_t, clip(ρ_t, 1 − eps_low, 1 + eps_high) A_t)
//! ```

mod curriculum;
mod toy;

use serde::{Deserialize, Serialize};

use crate::tao_loop::Trajectory;

pub use curriculum::{curriculum_sample, CurriculumStage, Family, StageKind, TaskPools};
pub use toy::{train_toy, PolicySnapshot, ToyEnv, ToyPolicy, TokenSample, TrainPoint, TrainReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgrpoError {
    #[error("group of {0} rollouts is too small (need at least 2)")]
    GroupTooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("trajectory for task `{0}` lacks token metadata")]
    MissingTokenMetadata(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no tasks registered for family {0}")]
    UnknownFamily(String),
    #[error("non-finite policy parameters at step {0}")]
    DivergenceDetected(usize),
    #[error("rollout failed: {0}")]
    Rollout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgrpoConfig {
    pub group_size: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    /// Always zero; kept so configs state it explicitly.
    pub kl_weight: f64,
    pub std_floor: f64,
    pub learning_rate: f64,
    /// Gradient steps per rollout group, all against the same old log-probs.
    pub update_epochs: usize,
}

impl Default for AgrpoConfig {
    fn default() -> Self {
        Self { group_size: 8, eps_low: 0.2, eps_high: 0.28, kl_weight: 0.0, std_floor: 1e-6, learning_rate: 0.3, update_epochs: 2 }
    }
}

impl AgrpoConfig {
    pub fn validate(&self) -> Result<(), AgrpoError> {
        let bad = |m: String| Err(AgrpoError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} < 2", self.group_size));
        }
        if !(self.eps_low > 0.0 && self.eps_high >= self.eps_low && self.eps_high.is_finite()) {
            return bad(format!("need eps_high >= eps_low > 0, got ({}, {})", self.eps_low, self.eps_high));
        }
        if self.kl_weight != 0.0 {
            return bad("kl_weight must be 0".into());
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return bad("std_floor must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.update_epochs == 0 {
            return bad("learning_rate must be positive and update_epochs at least 1".into());
        }
        Ok(())
    }
}

/// `G` rollouts of one prompt with their composite rewards.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(prompt_id: String, trajectories: Vec<Trajectory>, rewards: Vec<f64>) -> Result<Self, AgrpoError> {
        if trajectories.len() < 2 {
            return Err(AgrpoError::GroupTooSmall(trajectories.len()));
        }
        if trajectories.len() != rewards.len() {
            return Err(AgrpoError::LengthMismatch(format!("{} trajectories, {} rewards", trajectories.len(), rewards.len())));
        }
        Ok(Self { prompt_id, trajectories, rewards })
    }

    pub fn advantages(&self, config: &AgrpoConfig) -> Result<Vec<f64>, AgrpoError> {
        group_advantages(&self.rewards, config)
    }
}

/// Group-normalised advantages using the population standard deviation.
/// A group whose rewards are all equal gets exactly zero advantages.
pub fn group_advantages(rewards: &[f64], config: &AgrpoConfig) -> Result<Vec<f64>, AgrpoError> {
    if rewards.len() < 2 {
        return Err(AgrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + config.std_floor;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// A trajectory's advantage spread over its token sequence. Tokens injected by
/// the environment (tool results) are present but masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub per_trajectory: f64,
    pub per_token: Vec<f64>,
    /// `true` for policy-generated tokens.
    pub mask: Vec<bool>,
}

impl AdvantageVector {
    /// All tokens generated by the policy.
    pub fn uniform(adv: f64, tokens: usize) -> Self {
        Self { per_trajectory: adv, per_token: vec![adv; tokens], mask: vec![true; tokens] }
    }

    pub fn generated_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Broadcasts `adv` to every generated token; each tool result contributes one
/// masked placeholder token.
pub fn broadcast_token_advantages(trajectory: &Trajectory, adv: f64) -> Result<AdvantageVector, AgrpoError> {
    let mut per_token = Vec::new();
    let mut mask = Vec::new();
    for step in &trajectory.steps {
        let n = step.generated_tokens.ok_or_else(|| AgrpoError::MissingTokenMetadata(trajectory.task_id.clone()))?;
        per_token.extend(std::iter::repeat_n(adv, n));
        mask.extend(std::iter::repeat_n(true, n));
        if step.view.is_some() {
            per_token.push(0.0);
            mask.push(false);
        }
    }
    Ok(AdvantageVector { per_trajectory: adv, per_token, mask })
}

fn clip_ratio(ratio: f64, config: &AgrpoConfig) -> f64 {
    ratio.clamp(1.0 - config.eps_low, 1.0 + config.eps_high)
}

/// Per-token objective `min(ρA, clip(ρ)A)` and its derivative with respect to
/// the new log-probability.
pub fn token_objective(logp_new: f64, logp_old: f64, adv: f64, config: &AgrpoConfig) -> (f64, f64) {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * adv;
    let clipped = clip_ratio(ratio, config) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Clipped-ratio loss (negated objective) averaged over unmasked tokens.
pub fn clipped_surrogate(
    logp_new: &[f64],
    logp_old: &[f64],
    adv: &AdvantageVector,
    config: &AgrpoConfig,
) -> Result<f64, AgrpoError> {
    let n = adv.per_token.len();
    if logp_new.len() != n || logp_old.len() != n || adv.mask.len() != n {
        return Err(AgrpoError::LengthMismatch(format!(
            "logp_new {}, logp_old {}, advantages {}, mask {}",
            logp_new.len(),
            logp_old.len(),
            n,
            adv.mask.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in (0..n).filter(|&i| adv.mask[i]) {
        total += token_objective(logp_new[i], logp_old[i], adv.per_token[i], config).0;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { -total / count as f64 })
}
