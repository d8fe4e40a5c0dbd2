use std::fmt;
use std::path::Path;

use mfccgram_core::audio::AudioError;
use mfccgram_core::data::DataError;
use mfccgram_core::train::TrainError;
use mfccgram_core::TensorError;

/// A runtime failure, printed as `error<TAB>kind<TAB>message`.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    /// Single line, so the error stays machine-parsable.
    pub fn line(&self) -> String {
        format!("error\t{}\t{}", self.kind, self.message.replace(['\n', '\t'], " "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

fn audio_kind(e: &AudioError) -> &'static str {
    match e {
        AudioError::Io { .. } => "io",
        AudioError::InvalidConfig(_) | AudioError::EmptyMelFilter { .. } => "config",
        _ => "audio",
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        Self::new(audio_kind(&e), e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::Io { .. } => "io",
            DataError::Audio(a) => audio_kind(a),
            DataError::Clip { .. } => "audio",
            _ => "data",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        let kind = match &e {
            TensorError::Checkpoint { .. } => "checkpoint",
            TensorError::Io(_) => "io",
            TensorError::Invalid { .. } => "config",
            _ => "numeric",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Tensor(t) => t.into(),
            TrainError::Audio(a) => a.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Config(m) => Self::config(m),
            TrainError::Io { .. } => Self::new("io", e.to_string()),
            TrainError::Report { .. } => Self::new("report", e.to_string()),
            other => Self::new("train", other.to_string()),
        }
    }
}

impl From<mfccgram_core::alter::AlterError> for CliError {
    fn from(e: mfccgram_core::alter::AlterError) -> Self {
        Self::new("config", e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
