//! Experiment harness: configuration, training orchestration, run logs,
//! checkpoints, evaluation, and replay.

pub mod checkpoint;
pub mod config;
pub mod inference;
pub mod records;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, ExperimentId};
pub use inference::{replay_dump, InferenceSession};
pub use records::smoothed_return;
pub use train::{run_training, Trainer};
