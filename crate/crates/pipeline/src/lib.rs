//! Data ingestion, synthetic faces, augmentation, optimisation and the
//! training, evaluation and export drivers behind the `sacl` binary.

pub mod align;
pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod imaging;
pub mod optim;
pub mod run;
pub mod schedule;
pub mod synth;
pub mod train;

pub use config::{DataConfig, RunConfig, TrainConfig};
pub use error::{PipelineError, Result};
