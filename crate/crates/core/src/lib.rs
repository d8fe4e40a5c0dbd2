//! MFCC-gram Transformer pipeline for speech-based respiratory insufficiency
//! detection.
//!
//! The crate covers the whole path from audio to accuracy tables:
//!
//! * [`audio`]: WAV ingestion, resampling, STFT, mel and MFCC features,
//!   fixed-length windowing and the feature cache format.
//! * [`augment`]: background-noise injection from a pool of noise clips.
//! * [`alter`]: time, channel and noise alterations for masked acoustic
//!   pretraining.
//! * [`tensor`]: the reverse-mode autodiff core the encoder is built on.
//! * [`model`]: the Transformer encoder with reconstruction and
//!   classification heads.
//! * [`train`]: optimizer, pretraining, finetuning, evaluation and reports.
//! * [`data`]: manifests, balancing, feature caching and a synthetic
//!   two-class corpus.

pub mod alter;
pub mod audio;
pub mod augment;
pub mod data;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use tensor::{Gradients, Graph, NodeId, ParamStore, Scalar, Tensor, TensorError};

