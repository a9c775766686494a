//! Robust collaborative filtering with personalized-magnitude adversarial
//! training.
//!
//! The crate is organised around the lifecycle of an experiment:
//!
//! - [`dataset`]: loading, filtering and splitting implicit-feedback data
//! - [`model`]: the matrix-factorization embedding store and ranking
//! - [`train`]: BPR training in standard, APR and PamaCF modes
//! - [`attack`]: Random and Bandwagon fake-user injection
//! - [`metrics`]: Recall/NDCG and target-item attack success metrics
//! - [`theory`]: the Gaussian single-item system, its Monte-Carlo error
//!   estimates and the analytic error-reduction bounds
//!
//! Everything is deterministic given a seed.

pub mod attack;
pub mod dataset;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod theory;
pub mod train;

pub use attack::{AttackMethod, AttackSpec, PoisonedDataset};
pub use dataset::{InteractionDataset, SplitConfig};
pub use error::{Error, ErrorKind, Result};
pub use metrics::MetricsReport;
pub use model::EmbeddingModel;
pub use train::{BprTriple, TrainConfig, TrainMode};

/// Dense user identifier.
pub type UserId = usize;
/// Dense item identifier.
pub type ItemId = usize;
