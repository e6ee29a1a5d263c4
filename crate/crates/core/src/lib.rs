//! Contrastive policy gradient and related estimators on tabular
//! contextual bandits.
//!
//! Everything is small enough to enumerate, so objectives, gradients and
//! optima are computed exactly and every sampled estimator can be checked
//! against them.

pub mod bandit;
pub mod cli;
pub mod data;
pub mod error;
pub mod exact;
pub mod losses;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod train;
pub mod verify;

pub use bandit::{BanditSpec, SpecFile};
pub use data::{LabelMode, PairDataset};
pub use error::{Error, Result};
pub use losses::{BaselineKind, RewardTable, ScoredPair};
pub use optim::AdamState;
pub use policy::{GradientEstimate, ReparamLogits, TabularPolicy};
pub use train::{Algorithm, MetricsRecord, TrainConfig, TrainRun};
pub use verify::CheckReport;
