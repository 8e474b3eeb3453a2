//! Federated class unlearning by class-aware representation transformation.
//!
//! The crate trains a small MLP classifier with FedAvg, then makes it forget a set
//! of classes by relabeling their samples toward nearby remaining classes and
//! pulling their representations onto those classes with contrastive terms.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod idx;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod parallel;
pub mod prototype;
pub mod tcs;

pub use data::{BlobSpec, LabeledDataset, Partition};
pub use error::{Error, Result};
pub use evaluation::{GroupMetrics, MiaReport};
pub use federation::{
    derive_seed_for, BaselineKind, Federation, Reassignment, RoundRecord, RunOutput, TrainConfig,
    TransformStrategy, UnlearnConfig,
};
pub use losses::{LossBreakdown, LossConfig};
pub use matrix::Matrix;
pub use nn::{Dims, ModelParams};
pub use parallel::Execution;
pub use prototype::PrototypeBank;
pub use tcs::{GlobalTs, TsThresholds};
