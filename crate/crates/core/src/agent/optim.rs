use super::ppo::{AgentGrads, AgentParams, OptimizerKind};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Descent on the PPO loss (equivalently, ascent on the objective).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: i32,
    first: AgentGrads,
    second: AgentGrads,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &AgentParams) -> Self {
        Self {
            kind,
            learning_rate,
            steps: 0,
            first: AgentGrads::zeros_like(params),
            second: AgentGrads::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut AgentParams, grads: &AgentGrads) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                sgd(params.policy.params_mut(), &grads.policy, lr);
                sgd(&mut params.log_std, &grads.log_std, lr);
                sgd(params.value.params_mut(), &grads.value, lr);
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.steps);
                let c2 = 1.0 - BETA2.powi(self.steps);
                let step = lr * c2.sqrt() / c1;
                adam(params.policy.params_mut(), &grads.policy, &mut self.first.policy, &mut self.second.policy, step);
                adam(&mut params.log_std, &grads.log_std, &mut self.first.log_std, &mut self.second.log_std, step);
                adam(params.value.params_mut(), &grads.value, &mut self.first.value, &mut self.second.value, step);
            }
        }
    }
}

fn sgd(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

fn adam(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: f64) {
    for i in 0..params.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
        params[i] -= step * m[i] / (v[i].sqrt() + EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn both_optimizers_descend_along_the_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let params = AgentParams::init(3, 3, 1, 0.0, &mut rng).unwrap();
        let mut grads = AgentGrads::zeros_like(&params);
        grads.log_std[0] = 2.0;
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = params.clone();
            Optimizer::new(kind, 0.1, &p).step(&mut p, &grads);
            assert!(p.log_std[0] < params.log_std[0]);
            assert_eq!(p.policy, params.policy);
        }
    }
}
