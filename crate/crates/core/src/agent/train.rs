//! Trajectory collection and PPO updates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::policy::sample_action;
use super::ppo::{
    compute_returns_advantages, normalize_advantages, total_loss, AgentParams, PpoConfig, Step,
    Trajectory,
};
use crate::error::Result;
use crate::seed::{derive_seed, rng_for};

/// An episodic environment with a fixed-size observation grid.
pub trait Environment {
    type State: Clone;

    fn reset(&self) -> Self::State;

    /// Flattened `rows x cols x channels` observation of a state.
    fn observe(&self, state: &Self::State) -> Result<Vec<f64>>;

    /// Applies an action, returning the next state and the reward.
    fn step(&self, state: &Self::State, action: &[f64]) -> Result<(Self::State, f64)>;

    /// Number of steps per episode.
    fn horizon(&self) -> usize;

    /// `(rows, cols, channels)` of observations; the action has `channels`
    /// components.
    fn grid(&self) -> (usize, usize, usize);
}

/// Runs one episode with actions sampled from the current policy.
pub fn rollout<E: Environment>(env: &E, params: &AgentParams, rng: &mut impl Rng) -> Result<Trajectory> {
    let mut state = env.reset();
    let mut traj = Trajectory::default();
    for _ in 0..env.horizon() {
        let observation = env.observe(&state)?;
        let (mean, value) = params.act(&observation)?;
        let sample = sample_action(&mean, &params.log_std, rng)?;
        let (next, reward) = env.step(&state, &sample.action)?;
        traj.steps.push(Step {
            observation,
            action: sample.action,
            log_prob: sample.log_prob,
            reward,
            value,
            ret: 0.0,
            advantage: 0.0,
        });
        state = next;
    }
    Ok(traj)
}

/// Per-batch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub max_abs_log_ratio: f64,
    pub mean_log_std: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters that collected the batch with the highest mean return.
    pub best: AgentParams,
    pub best_mean_return: f64,
    /// Parameters after the last update.
    pub last: AgentParams,
    pub curve: Vec<BatchStats>,
}

/// Alternates collection of `episodes_per_batch` episodes with `epochs`
/// passes of minibatch updates, for `training_episodes` episodes in total.
/// Every random draw comes from a stream derived from `config.seed`.
pub fn train<E: Environment>(env: &E, config: &PpoConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (rows, cols, channels) = env.grid();
    let mut params = AgentParams::init(rows, cols, channels, config.log_std_init, &mut rng_for(config.seed, &[0]))?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &params);
    let mut best = params.clone();
    let mut best_mean_return = f64::NEG_INFINITY;
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let mut batch = 0usize;

    while (episode as usize) < config.training_episodes {
        let count = config.episodes_per_batch.min(config.training_episodes - episode as usize);
        let mut trajectories = Vec::with_capacity(count);
        for _ in 0..count {
            let mut rng = rng_for(config.seed, &[1, episode]);
            trajectories.push(rollout(env, &params, &mut rng)?);
            episode += 1;
        }
        let mean_return = trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / count as f64;
        if mean_return > best_mean_return {
            best_mean_return = mean_return;
            best = params.clone();
        }
        for t in &mut trajectories {
            compute_returns_advantages(t, config.gamma)?;
        }
        normalize_advantages(&mut trajectories);

        let steps: Vec<&Step> = trajectories.iter().flat_map(|t| &t.steps).collect();
        let mut order: Vec<usize> = (0..steps.len()).collect();
        let mut shuffle_rng = rng_for(config.seed, &[2, batch as u64]);
        let (mut surrogate, mut value_loss, mut clip, mut max_ratio, mut updates) = (0.0, 0.0, 0.0, 0.0f64, 0usize);
        for _ in 0..config.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(config.minibatch_size) {
                let minibatch: Vec<&Step> = chunk.iter().map(|&i| steps[i]).collect();
                let mut report = total_loss(&minibatch, &params, config)?;
                if config.max_grad_norm > 0.0 {
                    let norm = report.grads.norm();
                    if norm > config.max_grad_norm {
                        report.grads.scale(config.max_grad_norm / norm);
                    }
                }
                optimizer.step(&mut params, &report.grads);
                surrogate += report.surrogate;
                value_loss += report.value_loss;
                clip += report.clip_fraction;
                max_ratio = max_ratio.max(report.max_abs_log_ratio);
                updates += 1;
            }
        }
        let u = updates.max(1) as f64;
        curve.push(BatchStats {
            batch,
            episodes: count,
            mean_return,
            surrogate: surrogate / u,
            value_loss: value_loss / u,
            clip_fraction: clip / u,
            max_abs_log_ratio: max_ratio,
            mean_log_std: params.log_std.iter().sum::<f64>() / params.log_std.len() as f64,
        });
        batch += 1;
    }
    Ok(TrainOutcome {
        best,
        best_mean_return,
        last: params,
        curve,
    })
}

/// Seed of evaluation episode `index`, disjoint from training streams.
pub fn evaluation_seed(base: u64, index: u64) -> u64 {
    derive_seed(derive_seed(base, 0xE7A1), index)
}
