//! A desk-scale laboratory for corpus-level exploration in dynamic search.
//!
//! An agent observes a compressed picture of an entire document collection
//! (every document split into a fixed number of segments, every segment
//! embedded into a few dimensions by t-SNE), picks a continuous action
//! vector, and ranks documents with a linear function of that action. A
//! simulated user rates the returned documents, the ratings become rewards,
//! and the agent is trained with PPO.
//!
//! Module map:
//!
//! * [`corpus`]: tokenization, segmentation, vocabulary and TF-IDF features.
//! * [`embed`]: exact t-SNE and a truncated-SVD compressor.
//! * [`state`]: the global representation and visited-document marking.
//! * [`agent`]: convolutional policy/value networks and PPO.
//! * [`retrieval`]: the linear ranking function and non-learning baselines.
//! * [`sim`]: ground truth, simulated feedback and reward.
//! * [`eval`]: session metrics (precision, recall, aspect recall, nsDCG).
//! * [`harness`]: synthetic topics, episodes, experiments and images.

pub mod agent;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod harness;
pub mod retrieval;
pub mod seed;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
