//! Central finite-difference checks of agent gradients.

use rand::Rng;

use super::net::{Layer, Network};
use super::ppo::{AgentGrads, AgentParams};
use crate::seed::rng_for;

const LAYERS: [Layer; 4] = [Layer::Conv1, Layer::Conv2, Layer::Hidden, Layer::Head];

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Step of the second difference taken when the first disagrees, in case
/// the first straddled a ReLU kink.
pub const FINE_STEP: f64 = 1e-7;

fn blocks(net: &Network) -> Vec<std::ops::Range<usize>> {
    LAYERS
        .iter()
        .flat_map(|&l| {
            let (w, b) = net.layer_ranges(l);
            [w, b]
        })
        .collect()
}

/// Compares `grads` with central differences of `loss` at `samples`
/// randomly chosen parameters (every block is sampled with equal
/// probability) and returns the largest relative error
/// `|fd - analytic| / max(|fd|, |analytic|)`. Pairs where both magnitudes
/// are below `1e-10` must agree to `1e-10` absolutely and are otherwise
/// skipped.
pub fn max_relative_error(
    params: &AgentParams,
    grads: &AgentGrads,
    samples: usize,
    seed: u64,
    loss: impl Fn(&AgentParams) -> f64,
) -> f64 {
    #[derive(Clone, Copy)]
    enum Group {
        Policy,
        LogStd,
        Value,
    }
    let mut targets: Vec<(Group, std::ops::Range<usize>)> = Vec::new();
    targets.extend(blocks(&params.policy).into_iter().map(|r| (Group::Policy, r)));
    targets.push((Group::LogStd, 0..params.log_std.len()));
    targets.extend(blocks(&params.value).into_iter().map(|r| (Group::Value, r)));

    let mut rng = rng_for(seed, &[0x6772_6164]);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (group, range) = targets[rng.random_range(0..targets.len())].clone();
        let i = rng.random_range(range);
        let perturb = |delta: f64| {
            let mut p = params.clone();
            match group {
                Group::Policy => p.policy.params_mut()[i] += delta,
                Group::LogStd => p.log_std[i] += delta,
                Group::Value => p.value.params_mut()[i] += delta,
            }
            loss(&p)
        };
        let analytic = match group {
            Group::Policy => grads.policy[i],
            Group::LogStd => grads.log_std[i],
            Group::Value => grads.value[i],
        };
        let mut fd = (perturb(STEP) - perturb(-STEP)) / (2.0 * STEP);
        if (fd - analytic).abs() > 1e-4 * fd.abs().max(analytic.abs()) {
            fd = (perturb(FINE_STEP) - perturb(-FINE_STEP)) / (2.0 * FINE_STEP);
        }
        let denom = fd.abs().max(analytic.abs());
        if denom < 1e-10 {
            if (fd - analytic).abs() > 1e-10 {
                return f64::INFINITY;
            }
            continue;
        }
        worst = worst.max((fd - analytic).abs() / denom);
    }
    worst
}
