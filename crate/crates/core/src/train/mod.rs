//! Optimizer, masked-reconstruction pretraining, classification
//! finetuning over repeated seeds, evaluation and run reports.

mod batch;
mod config;
mod eval;
mod finetune;
mod optim;
mod pretrain;
mod report;

pub use batch::{classification_step, reconstruction_step, LabeledFeatures, StepOutput};
pub use config::{LossSupport, Profile, RunConfig, RUN_CONFIG_VERSION};
pub use eval::{evaluate, evaluate_chunks, EvalResult};
pub use finetune::{finetune, FinetuneOutcome, FinetuneSet, TrainFeatures};
pub use optim::{AdamConfig, OptimizerState};
pub use pretrain::{pretrain, PretrainOutcome};
pub use report::{comparison_table, mean_and_sample_std, EpochStats, RunReport, SeedResult, REPORT_FILE};

use std::path::Path;

use crate::alter::AlterError;
use crate::audio::AudioError;
use crate::data::{DataError, Label};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Alter(#[from] AlterError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("class {0} has no training examples")]
    MissingClass(Label),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed report {path}: {reason}")]
    Report { path: String, reason: String },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
