//! PPO objective: clipped surrogate, value regression and entropy bonus.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{NetShape, Network};
use super::policy::{gaussian_entropy, gaussian_log_prob};
use crate::error::{Error, Result};

/// Log-ratios are clamped to `[ln 1e-8, ln 1e8]` before exponentiation.
pub const MAX_LOG_RATIO: f64 = 18.420_680_743_952_367;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    /// Weight `c1` of the value loss.
    pub value_coef: f64,
    /// Weight `c2` of the entropy bonus.
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub episodes_per_batch: usize,
    pub minibatch_size: usize,
    pub training_episodes: usize,
    pub gamma: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
    pub optimizer: OptimizerKind,
    pub log_std_init: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            learning_rate: 1e-3,
            epochs: 4,
            episodes_per_batch: 8,
            minibatch_size: 16,
            training_episodes: 200,
            gamma: 1.0,
            max_grad_norm: 0.5,
            optimizer: OptimizerKind::Adam,
            log_std_init: 0.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0) {
            return Err(Error::invalid("clip epsilon must be positive"));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.epochs == 0 || self.episodes_per_batch == 0 || self.minibatch_size == 0 {
            return Err(Error::invalid("epochs, batch and minibatch sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One transition of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub ret: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Fills returns `G_t = sum_k gamma^(k-t) r_k` and raw advantages
/// `G_t - V(s_t)`.
pub fn compute_returns_advantages(traj: &mut Trajectory, gamma: f64) -> Result<()> {
    if traj.steps.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let mut ret = 0.0;
    for step in traj.steps.iter_mut().rev() {
        ret = step.reward + gamma * ret;
        step.ret = ret;
        step.advantage = ret - step.value;
    }
    Ok(())
}

/// Rescales the advantages of every step in the batch to zero mean and unit
/// variance. A constant batch becomes all zeros.
pub fn normalize_advantages(batch: &mut [Trajectory]) {
    let n = batch.iter().map(|t| t.steps.len()).sum::<usize>();
    if n == 0 {
        return;
    }
    let mean = batch.iter().flat_map(|t| &t.steps).map(|s| s.advantage).sum::<f64>() / n as f64;
    let var = batch
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    for step in batch.iter_mut().flat_map(|t| &mut t.steps) {
        step.advantage = if std > 1e-12 { (step.advantage - mean) / std } else { 0.0 };
    }
}

/// `pi_new / pi_old` with the log difference clamped to `+-MAX_LOG_RATIO`.
pub fn ppo_ratio(log_prob_new: f64, log_prob_old: f64) -> f64 {
    (log_prob_new - log_prob_old).clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp()
}

/// Per-sample `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Negated batch mean of [`clipped_surrogate`], to be minimized.
pub fn policy_loss(ratios: &[f64], advantages: &[f64], epsilon: f64) -> f64 {
    assert_eq!(ratios.len(), advantages.len());
    if ratios.is_empty() {
        return 0.0;
    }
    -ratios
        .iter()
        .zip(advantages)
        .map(|(r, a)| clipped_surrogate(*r, *a, epsilon))
        .sum::<f64>()
        / ratios.len() as f64
}

/// Policy network, state-independent log standard deviations, value network.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub policy: Network,
    pub log_std: Vec<f64>,
    pub value: Network,
}

impl AgentParams {
    /// Fresh parameters for a `rows x cols x channels` input; the action has
    /// one component per channel.
    pub fn init(rows: usize, cols: usize, channels: usize, log_std_init: f64, rng: &mut impl Rng) -> Result<Self> {
        let policy = Network::init(NetShape::new(rows, cols, channels, channels), rng)?;
        let value = Network::init(NetShape::new(rows, cols, channels, 1), rng)?;
        Ok(Self {
            policy,
            log_std: vec![log_std_init; channels],
            value,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn is_finite(&self) -> bool {
        self.policy
            .params()
            .iter()
            .chain(&self.log_std)
            .chain(self.value.params())
            .all(|v| v.is_finite())
    }

    /// Policy mean and state value for one observation.
    pub fn act(&self, observation: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mean = self.policy.forward(observation)?.output;
        let value = self.value.forward(observation)?.output[0];
        Ok((mean, value))
    }
}

/// Gradients laid out like [`AgentParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGrads {
    pub policy: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl AgentGrads {
    pub fn zeros_like(params: &AgentParams) -> Self {
        Self {
            policy: vec![0.0; params.policy.params().len()],
            log_std: vec![0.0; params.log_std.len()],
            value: vec![0.0; params.value.params().len()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.policy
            .iter()
            .chain(&self.log_std)
            .chain(&self.value)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.policy.iter_mut().chain(&mut self.log_std).chain(&mut self.value) {
            *g *= factor;
        }
    }
}

/// Value and gradient of the PPO loss on a minibatch.
#[derive(Debug, Clone)]
pub struct LossReport {
    /// `-(surrogate - c1 value_loss + c2 entropy)`; minimized.
    pub loss: f64,
    /// The maximized objective, `-loss`.
    pub objective: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose clipped branch was active.
    pub clip_fraction: f64,
    pub max_abs_log_ratio: f64,
    pub grads: AgentGrads,
}

/// Evaluates the PPO loss and its exact gradient over `batch`.
pub fn total_loss(batch: &[&Step], params: &AgentParams, config: &PpoConfig) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let m = batch.len() as f64;
    let eps = config.clip_epsilon;
    let std: Vec<f64> = params.log_std.iter().map(|ls| ls.exp()).collect();
    let mut grads = AgentGrads::zeros_like(params);
    let (mut surrogate, mut value_loss, mut clipped, mut max_log_ratio) = (0.0, 0.0, 0usize, 0.0f64);

    for step in batch {
        let pf = params.policy.forward(&step.observation)?;
        let mean = &pf.output;
        let log_prob = gaussian_log_prob(&step.action, mean, &params.log_std);
        let log_ratio = log_prob - step.log_prob;
        max_log_ratio = max_log_ratio.max(log_ratio.abs());
        let ratio = ppo_ratio(log_prob, step.log_prob);
        let a = step.advantage;
        let unclipped = ratio * a;
        let clipped_term = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
        surrogate += unclipped.min(clipped_term);
        // d(-surrogate/m)/d log_prob; zero on the clipped branch and when the
        // ratio is saturated.
        let g_logp = if unclipped <= clipped_term && log_ratio.abs() < MAX_LOG_RATIO {
            -ratio * a / m
        } else {
            clipped += 1;
            0.0
        };
        if g_logp != 0.0 {
            let mut g_mean = vec![0.0; mean.len()];
            for d in 0..mean.len() {
                let diff = step.action[d] - mean[d];
                let var = std[d] * std[d];
                g_mean[d] = g_logp * diff / var;
                grads.log_std[d] += g_logp * (diff * diff / var - 1.0);
            }
            params.policy.accumulate_backward(&pf, &g_mean, &[], &mut grads.policy);
        }

        let vf = params.value.forward(&step.observation)?;
        let err = vf.output[0] - step.ret;
        value_loss += err * err;
        let g_value = config.value_coef * 2.0 * err / m;
        if g_value != 0.0 {
            params.value.accumulate_backward(&vf, &[g_value], &[], &mut grads.value);
        }
    }
    surrogate /= m;
    value_loss /= m;
    let entropy = gaussian_entropy(&params.log_std);
    for g in &mut grads.log_std {
        *g -= config.entropy_coef;
    }
    let objective = surrogate - config.value_coef * value_loss + config.entropy_coef * entropy;
    Ok(LossReport {
        loss: -objective,
        objective,
        surrogate,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 / m,
        max_abs_log_ratio: max_log_ratio,
        grads,
    })
}
