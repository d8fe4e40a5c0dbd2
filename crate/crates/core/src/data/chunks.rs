use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Label, Manifest, Result, Sex, Split};
use crate::audio::{load_wav, resample, window_chunks, AudioClip};

/// Chunk length and step, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_s: 4.0, hop_s: 1.0 }
    }
}

/// One fixed-length chunk of a manifest record. The chunk inherits its
/// record's label and split.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioChunk {
    /// `<record id>#<chunk index>`
    pub id: String,
    pub record: String,
    pub label: Label,
    pub sex: Sex,
    pub split: Split,
    pub audio: AudioClip,
}

/// Loads, resamples and windows every record of `split`, in manifest order.
pub fn load_chunks(manifest: &Manifest, split: Split, window: &WindowConfig) -> Result<Vec<AudioChunk>> {
    let records: Vec<_> = manifest.split(split).collect();
    let per_record: Vec<Vec<AudioChunk>> = records
        .par_iter()
        .map(|r| {
            let path = manifest.resolve(r);
            let clip_err = |source| DataError::Clip { path: path.display().to_string(), source };
            let clip = load_wav(&path).and_then(|c| resample(&c, manifest.sample_rate)).map_err(clip_err)?;
            let chunks = window_chunks(&clip, window.window_s, window.hop_s)?;
            let id = r.id();
            Ok(chunks
                .into_iter()
                .enumerate()
                .map(|(k, audio)| AudioChunk { id: format!("{id}#{k}"), record: id.clone(), label: r.label, sex: r.sex, split: r.split, audio })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_record.into_iter().flatten().collect())
}
