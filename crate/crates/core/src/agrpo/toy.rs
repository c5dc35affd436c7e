use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curriculum::{curriculum_sample, CurriculumStage, Family, TaskPools};
use super::{group_advantages, token_objective, AgrpoConfig, AgrpoError};
use crate::backends::GeometricOracle;
use crate::harness::{gen_needle_task, EnvTask, PerceptionPolicy, Template, ToyConfig};
use crate::reward::{score_trajectory, RewardConfig};
use crate::tao_loop::{run_episode, EpisodeConfig, OnMissingObservation, Trajectory};

const MAX_PARAMS: usize = 64;

/// Softmax over templates, one row of logits per context. The context is
/// whether the task's target is legible without any aperture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    templates: Vec<Template>,
    contexts: usize,
    logits: Vec<f64>,
}

/// One sampled template choice, treated as a single generated token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenSample {
    pub context: usize,
    pub action: usize,
    pub logp_old: f64,
    pub advantage: f64,
}

impl ToyPolicy {
    pub fn new(contexts: usize, templates: Vec<Template>) -> Result<Self, AgrpoError> {
        let n = contexts * templates.len();
        if contexts == 0 || templates.is_empty() || n > MAX_PARAMS {
            return Err(AgrpoError::InvalidConfig(format!("{contexts} contexts x {} templates", templates.len())));
        }
        Ok(Self { templates, contexts, logits: vec![0.0; n] })
    }

    /// Two contexts over every template.
    pub fn standard() -> Self {
        Self::new(2, Template::ALL.to_vec()).expect("8 parameters")
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), AgrpoError> {
        if params.len() != self.logits.len() {
            return Err(AgrpoError::LengthMismatch(format!("{} params, expected {}", params.len(), self.logits.len())));
        }
        self.logits.copy_from_slice(params);
        Ok(())
    }

    fn row(&self, context: usize) -> &[f64] {
        let k = self.templates.len();
        &self.logits[context * k..(context + 1) * k]
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        let row = self.row(context);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, context: usize, action: usize) -> f64 {
        let row = self.row(context);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[action] - lse
    }

    pub fn entropy(&self, context: usize) -> f64 {
        -self.probs(context).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    pub fn mean_entropy(&self) -> f64 {
        (0..self.contexts).map(|c| self.entropy(c)).sum::<f64>() / self.contexts as f64
    }

    pub fn sample(&self, context: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let probs = self.probs(context);
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Clipped-ratio loss over `batch` and its gradient with respect to the
    /// logits.
    pub fn loss_and_grad(&self, batch: &[TokenSample], config: &AgrpoConfig) -> (f64, Vec<f64>) {
        let k = self.templates.len();
        let mut grad = vec![0.0; self.logits.len()];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let n = batch.len() as f64;
        let mut objective = 0.0;
        for t in batch {
            let (value, dlogp) = token_objective(self.log_prob(t.context, t.action), t.logp_old, t.advantage, config);
            objective += value;
            if dlogp != 0.0 {
                for (j, p) in self.probs(t.context).into_iter().enumerate() {
                    let indicator = if j == t.action { 1.0 } else { 0.0 };
                    grad[t.context * k + j] -= dlogp * (indicator - p) / n;
                }
            }
        }
        (-objective / n, grad)
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot { probs: (0..self.contexts).map(|c| self.probs(c)).collect(), entropy: self.mean_entropy() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    /// Template probabilities per context.
    pub probs: Vec<Vec<f64>>,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPoint {
    pub step: usize,
    pub family: Family,
    pub mean_reward: f64,
    /// Mean policy entropy across contexts after the update.
    pub entropy: f64,
    pub mean_aperture_count: f64,
    /// Mean task reward of the group.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub points: Vec<TrainPoint>,
    pub initial: PolicySnapshot,
    pub last: PolicySnapshot,
}

impl TrainReport {
    /// Mean of `f` over the last `window` points; NaN when there are none.
    pub fn tail_mean(&self, window: usize, f: impl Fn(&TrainPoint) -> f64) -> f64 {
        let tail = &self.points[self.points.len().saturating_sub(window)..];
        tail.iter().map(f).sum::<f64>() / tail.len() as f64
    }
}

/// Synthetic tasks, the segmenter that knows their scenes, and the episode
/// settings used for every rollout.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pools: TaskPools,
    tasks: Arc<HashMap<String, Arc<EnvTask>>>,
    oracle: Arc<GeometricOracle>,
    episode: EpisodeConfig,
    window: u32,
    jitter: f64,
}

impl ToyEnv {
    pub fn new(pools: TaskPools, episode: EpisodeConfig, window: u32, jitter: f64) -> Self {
        let oracle = GeometricOracle::new();
        let mut tasks = HashMap::new();
        for t in pools.all() {
            oracle.register(&t.spec.image, (*t.labels).clone());
            tasks.insert(t.spec.task_id.clone(), Arc::clone(t));
        }
        Self { pools, tasks: Arc::new(tasks), oracle: Arc::new(oracle), episode, window, jitter }
    }

    /// Needle tasks with a fraction of large-glyph controls, rolled out with
    /// missing observations penalised.
    pub fn needle(config: &ToyConfig, episode: &EpisodeConfig) -> Result<Self, AgrpoError> {
        if config.controls > config.tasks {
            return Err(AgrpoError::InvalidConfig(format!("{} controls among {} tasks", config.controls, config.tasks)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let control = crate::harness::NeedleParams { glyph_size: config.control_glyph_size, ..config.needle.clone() };
        let mut pools = TaskPools::new();
        for i in 0..config.tasks {
            let params = if i < config.tasks - config.controls { &config.needle } else { &control };
            let task = gen_needle_task(&mut rng, params, &format!("toy-{i:04}")).map_err(|e| AgrpoError::InvalidConfig(e.to_string()))?;
            pools.add(Family::FineGrainedVqa, Arc::new(task));
        }
        let episode = EpisodeConfig { on_missing_observation: OnMissingObservation::Penalize, ..episode.clone() };
        Ok(Self::new(pools, episode, config.window, config.jitter))
    }

    pub fn pools(&self) -> &TaskPools {
        &self.pools
    }

    pub fn context(task: &EnvTask) -> usize {
        usize::from(task.scene.readable_at_full_view())
    }

    /// One episode of `template` on `task`; `seed` drives both the aim error
    /// and the episode's noise.
    pub fn rollout(&self, task: &EnvTask, template: Template, seed: u64) -> Result<Trajectory, AgrpoError> {
        let policy = PerceptionPolicy::shared(template, Arc::clone(&self.tasks))
            .with_window(self.window)
            .with_jitter(self.jitter, seed)
            .with_min_view_side(self.episode.min_view_side);
        let config = EpisodeConfig { seed, ..self.episode.clone() };
        run_episode(&policy, self.oracle.as_ref(), &task.spec, &config).map_err(|e| AgrpoError::Rollout(e.to_string()))
    }
}

/// Trains `policy` through the stages in order. Each step draws one task,
/// samples a group of templates for it, runs every rollout through the real
/// episode loop and applies `update_epochs` clipped-ratio gradient steps.
pub fn train_toy(
    policy: &mut ToyPolicy,
    env: &ToyEnv,
    stages: &[CurriculumStage],
    reward: &RewardConfig,
    config: &AgrpoConfig,
    seed: u64,
) -> Result<TrainReport, AgrpoError> {
    config.validate()?;
    let reward = reward.validated().map_err(|e| AgrpoError::InvalidConfig(e.to_string()))?;
    if policy.contexts() < 2 {
        return Err(AgrpoError::InvalidConfig("toy policy needs two contexts".into()));
    }
    let initial = policy.snapshot();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut step = 0usize;
    for stage in stages {
        stage.validate()?;
        for _ in 0..stage.step_budget {
            let (family, task) = curriculum_sample(stage, env.pools(), &mut rng)?;
            let context = ToyEnv::context(task);
            let mut batch = Vec::with_capacity(config.group_size);
            let mut rewards = Vec::with_capacity(config.group_size);
            let (mut apertures, mut accuracy) = (0.0, 0.0);
            for _ in 0..config.group_size {
                let action = policy.sample(context, &mut rng);
                let traj = env.rollout(task, policy.templates()[action], rng.random())?;
                let score = score_trajectory(&task.spec, &traj, &reward).map_err(|e| AgrpoError::Rollout(e.to_string()))?;
                apertures += traj.aperture_count() as f64;
                accuracy += score.r_task;
                rewards.push(score.r_final);
                batch.push(TokenSample { context, action, logp_old: policy.log_prob(context, action), advantage: 0.0 });
            }
            let adv = group_advantages(&rewards, config)?;
            for (t, a) in batch.iter_mut().zip(&adv) {
                t.advantage = *a;
            }
            if adv.iter().any(|&a| a != 0.0) {
                for _ in 0..config.update_epochs {
                    let (_, grad) = policy.loss_and_grad(&batch, config);
                    let next: Vec<f64> = policy.params().iter().zip(&grad).map(|(p, g)| p - config.learning_rate * g).collect();
                    if next.iter().any(|p| !p.is_finite()) {
                        return Err(AgrpoError::DivergenceDetected(step));
                    }
                    policy.set_params(&next)?;
                }
            }
            let g = config.group_size as f64;
            points.push(TrainPoint {
                step,
                family,
                mean_reward: rewards.iter().sum::<f64>() / g,
                entropy: policy.mean_entropy(),
                mean_aperture_count: apertures / g,
                accuracy: accuracy / g,
            });
            step += 1;
        }
    }
    Ok(TrainReport { points, initial, last: policy.snapshot() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rng: &mut ChaCha8Rng, policy: &ToyPolicy, n: usize) -> Vec<TokenSample> {
        (0..n)
            .map(|_| {
                let context = rng.random_range(0..policy.contexts());
                let action = rng.random_range(0..policy.templates().len());
                // old log-probs spread the ratio across both clip bounds
                let logp_old = policy.log_prob(context, action) + rng.random_range(-0.5..0.5);
                TokenSample { context, action, logp_old, advantage: rng.random_range(-2.0..2.0) }
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cfg = AgrpoConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut policy = ToyPolicy::standard();
            let theta: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            policy.set_params(&theta).unwrap();
            let b = batch(&mut rng, &policy, 16);
            let (_, grad) = policy.loss_and_grad(&b, &cfg);
            let h = 1e-6;
            let mut fd = vec![0.0; 8];
            for i in 0..8 {
                let mut p = policy.clone();
                let mut t = theta.clone();
                t[i] += h;
                p.set_params(&t).unwrap();
                let up = p.loss_and_grad(&b, &cfg).0;
                t[i] -= 2.0 * h;
                p.set_params(&t).unwrap();
                let down = p.loss_and_grad(&b, &cfg).0;
                fd[i] = (up - down) / (2.0 * h);
            }
            let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(diff / norm <= 1e-4, "relative error {}", diff / norm);
        }
    }

    #[test]
    fn probabilities_normalised() {
        let mut p = ToyPolicy::standard();
        p.set_params(&[1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 0.0, 700.0]).unwrap();
        for c in 0..2 {
            assert!((p.probs(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((p.entropy(0) - p.probs(0).iter().map(|q| -q * q.ln()).sum::<f64>()).abs() < 1e-12);
        assert!(p.log_prob(1, 3).abs() < 1e-12);
    }

    #[test]
    fn parameter_cap() {
        assert!(ToyPolicy::new(17, Template::ALL.to_vec()).is_err());
        assert!(ToyPolicy::new(16, Template::ALL.to_vec()).is_ok());
    }
}
