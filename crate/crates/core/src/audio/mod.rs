//! Audio ingestion and feature extraction.
//!
//! Clips are resampled to a working rate, cut into fixed-length chunks and
//! turned into time-major feature matrices (mel power or MFCC), one row per
//! STFT frame.

mod cache;
mod features;
mod resample;
mod wav;
mod window;

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_CACHE_MAGIC, FEATURE_CACHE_VERSION};
pub use features::{mel_filterbank, mel_spectrogram, mfcc, stft_power, FeatureExtractor, MelFilter, Spectrogram};
pub use resample::{resample, KAISER_BETA, ROLLOFF, ZERO_CROSSINGS};
pub use wav::{load_wav, quantize_i16, write_wav};
pub use window::{chunk_starts, window_chunks};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{path}: unsupported codec ({detail})")]
    UnsupportedCodec { path: String, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("audio clip has no samples")]
    EmptyClip,
    #[error("clip sample rate {got} Hz does not match configured {expected} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("mel filter {index} covers no FFT bin (n_mels {n_mels} too large for n_fft {n_fft})")]
    EmptyMelFilter { index: usize, n_mels: usize, n_fft: usize },
    #[error("feature cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

pub type Result<T, E = AudioError> = std::result::Result<T, E>;

/// A mono sample buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, clamping every sample into [−1, 1].
    pub fn new(mut samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(AudioError::EmptyClip);
        }
        for s in &mut samples {
            *s = if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) };
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mel,
    Mfcc,
}

impl std::str::FromStr for FeatureKind {
    type Err = AudioError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mel" => Ok(Self::Mel),
            "mfcc" => Ok(Self::Mfcc),
            other => Err(AudioError::InvalidConfig(format!("unknown feature kind {other:?} (expected mel or mfcc)"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mel => "mel",
            Self::Mfcc => "mfcc",
        })
    }
}

/// STFT / mel / MFCC parameters. Sizes are in samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub sample_rate: u32,
    pub kind: FeatureKind,
    pub log_floor: f64,
    /// Permit mel filters that cover no FFT bin (they produce an all-zero
    /// channel). The 128-mel / 400-point defaults have a few such filters at
    /// the low end, as the reference toolkit does.
    pub allow_empty_filters: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_fft: 400, hop: 200, n_mels: 128, n_mfcc: 128, sample_rate: 16000, kind: FeatureKind::Mfcc, log_floor: 1e-10, allow_empty_filters: true }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(AudioError::InvalidConfig(m.to_string()));
        if self.n_fft < 2 {
            return fail("n_fft must be at least 2");
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return fail("hop must be in 1..=n_fft");
        }
        if self.n_mels == 0 {
            return fail("n_mels must be positive");
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return fail("n_mfcc must be in 1..=n_mels");
        }
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive");
        }
        if !(self.log_floor > 0.0) {
            return fail("log_floor must be positive");
        }
        Ok(())
    }

    /// Feature channels per frame.
    pub fn channels(&self) -> usize {
        match self.kind {
            FeatureKind::Mel => self.n_mels,
            FeatureKind::Mfcc => self.n_mfcc,
        }
    }

    /// Frames produced for a clip of `n_samples` samples.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }

    /// Stable 64-bit hash of every field, used to invalidate caches.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "n_fft={};hop={};n_mels={};n_mfcc={};sample_rate={};kind={};log_floor={:e};allow_empty_filters={}",
            self.n_fft, self.hop, self.n_mels, self.n_mfcc, self.sample_rate, self.kind, self.log_floor, self.allow_empty_filters
        );
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Time-major feature grid: `frames` rows of `channels` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub fingerprint: u64,
    pub source: String,
}

impl FeatureMatrix {
    pub fn new(frames: usize, channels: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * channels, "feature values do not match {frames}x{channels}");
        Self { frames, channels, values, fingerprint: 0, source: String::new() }
    }

    pub fn zeros(frames: usize, channels: usize) -> Self {
        Self::new(frames, channels, vec![0.0; frames * channels])
    }

    pub fn at(&self, frame: usize, channel: usize) -> f64 {
        self.values[frame * self.channels + channel]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.channels..(frame + 1) * self.channels]
    }

    pub fn row_mut(&mut self, frame: usize) -> &mut [f64] {
        &mut self.values[frame * self.channels..(frame + 1) * self.channels]
    }
}
