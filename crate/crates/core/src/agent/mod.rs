//! The PPO agent.
//!
//! Policy and value networks share an architecture (two 2x2 convolutions
//! with 8 and 16 filters, a 32-unit hidden layer) but not their weights.
//! The policy head outputs the mean of a diagonal Gaussian over actions;
//! log standard deviations are free parameters independent of the state.

pub mod checkpoint;
pub mod gradcheck;
pub mod net;
mod optim;
pub mod policy;
pub mod ppo;
pub mod train;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint};
pub use net::{Layer, NetShape, Network};
pub use optim::Optimizer;
pub use policy::{gaussian_entropy, gaussian_log_prob, sample_action, ActionSample};
pub use ppo::{
    clipped_surrogate, compute_returns_advantages, normalize_advantages, policy_loss, ppo_ratio,
    total_loss, AgentGrads, AgentParams, LossReport, OptimizerKind, PpoConfig, Step, Trajectory,
};
pub use train::{rollout, train, BatchStats, Environment, TrainOutcome};
