//! Experiment runner: TOML recipes in, checkpoints, JSONL round logs, summaries
//! and embedding CSVs out.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_pretrain, cmd_report, cmd_unlearn, Method, Summary};
pub use config::ExperimentConfig;
pub use error::CliError;
