//! Operator surface for the set VAE: configuration, checkpoints, the training
//! loop and the sample / eval / reconstruct / attention-export commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod schedule;
pub mod train;

pub use checkpoint::{Checkpoint, TrainState};
pub use config::TrainConfig;
pub use error::{CliError, Result};
