//! The guide's chapters, included as documentation so that `cargo test`
//! compiles and runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}

#[doc = include_str!("../../../book/src/embedding.md")]
pub mod embedding {}

#[doc = include_str!("../../../book/src/state.md")]
pub mod state {}

#[doc = include_str!("../../../book/src/ranking.md")]
pub mod ranking {}

#[doc = include_str!("../../../book/src/feedback.md")]
pub mod feedback {}

#[doc = include_str!("../../../book/src/agent.md")]
pub mod agent {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
