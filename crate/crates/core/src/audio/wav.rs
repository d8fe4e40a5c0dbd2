use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, AudioError, Result};

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// all channels to mono and scaling integers to [−1, 1].
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let file = File::open(path).map_err(|e| AudioError::Io { path: path.display().to_string(), source: e })?;
    let reader = WavReader::new(BufReader::new(file)).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::Format { path: path.display().to_string(), reason: "zero channels".into() });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(|e| wav_error(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedCodec { path: path.display().to_string(), detail: format!("{fmt:?} with {bits} bits per sample") })
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(AudioError::Format { path: path.display().to_string(), reason: "truncated sample frame".into() });
    }
    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        let inv = 1.0 / channels as f64;
        interleaved.chunks_exact(channels).map(|f| (f.iter().map(|&v| v as f64).sum::<f64>() * inv) as f32).collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV. Samples are clamped to [−1, 1] and
/// quantized as `round(x · 32768)` saturated to the `i16` range, so any clip
/// read from a 16-bit file is written back bit-exactly.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: clip.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let io_err = |e: hound::Error| AudioError::Format { path: path.display().to_string(), reason: e.to_string() };
    let mut w = WavWriter::create(path, spec).map_err(io_err)?;
    let mut i16w = w.get_i16_writer(clip.samples.len() as u32);
    for &s in &clip.samples {
        i16w.write_sample(quantize_i16(s));
    }
    i16w.flush().map_err(io_err)?;
    w.finalize().map_err(io_err)
}

pub fn quantize_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) as f64 * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn wav_error(path: &Path, e: hound::Error) -> AudioError {
    let p = path.display().to_string();
    match e {
        hound::Error::Unsupported => {
            let detail = probe_format_tag(path).map(|t| format!("format tag {t:#06x}")).unwrap_or_else(|| "unknown format tag".into());
            AudioError::UnsupportedCodec { path: p, detail }
        }
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::Format { path: p, reason: "truncated file".into() }
        }
        other => AudioError::Format { path: p, reason: other.to_string() },
    }
}

/// Reads the `fmt ` chunk's format tag (the sub-format tag for
/// WAVE_FORMAT_EXTENSIBLE) so unsupported files can be reported precisely.
fn probe_format_tag(path: &Path) -> Option<u16> {
    let mut bytes = Vec::new();
    File::open(path).ok()?.take(1 << 16).read_to_end(&mut bytes).ok()?;
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        let body = pos + 8;
        if id == b"fmt " && body + 2 <= bytes.len() {
            let tag = u16::from_le_bytes([bytes[body], bytes[body + 1]]);
            if tag == 0xFFFE && body + 26 <= bytes.len() {
                return Some(u16::from_le_bytes([bytes[body + 24], bytes[body + 25]]));
            }
            return Some(tag);
        }
        pos = body + size + (size & 1);
    }
    None
}
