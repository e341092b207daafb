//! Experiment workbench: everything around the training loop rather
//! than in it.
//!
//! Three concerns live here: generating manufactured-solution datasets
//! whose exact solution is known (the desk-scale substitute for CFD
//! ground truth), loading run configurations, and reading/writing the
//! artifacts — clouds, source tables, checkpoints — that make a run
//! reproducible after the fact.

mod mms;
mod persist;

pub use mms::{load_mms_spec, mms_generate, MmsDataset, MmsSpec};
pub use persist::{
    assemble_run, load_checkpoint, load_run_config, load_sources_csv, save_checkpoint,
    write_cloud_csv, write_sources_csv, AssembledRun, Checkpoint, CheckpointMeta, RunConfig,
    CHECKPOINT_VERSION, SOURCE_HEADER,
};

use crate::physics::PhysicsError;
use crate::sampler::SamplerError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum WorkbenchError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Config(#[from] toml::de::Error),
    #[error("failed to parse CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("failed to encode checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {message}")]
    Corrupt { message: String },
    #[error("checkpoint format version {found} is unsupported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid configuration: {message}")]
    Validation { message: String },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Train(#[from] TrainError),
}
