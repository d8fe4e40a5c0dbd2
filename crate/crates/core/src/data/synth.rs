//! Synthetic two-class speech-like corpus and ward-noise stand-ins.
//!
//! Control clips are voiced harmonic complexes: a fundamental in
//! 110–220 Hz (lower range for M, higher for F) with 5 harmonics, vibrato,
//! slow intonation glides and a syllabic amplitude envelope. Patient clips
//! use the same generator with a steeper harmonic roll-off plus band noise
//! in 2–4 kHz whose level follows a slow breathing cycle. Every clip sits
//! on the same kind of low-level background bed (brown noise and mains
//! hum), and durations come from one distribution for both classes.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{io_err, ExampleRecord, Label, Manifest, Result, Sex, Split};
use crate::audio::{write_wav, AudioClip, FeatureConfig, FeatureExtractor};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, seed: u64) -> Self {
        Self { n_per_class, seed, sample_rate: 16000, min_duration_s: 5.0, max_duration_s: 12.0 }
    }
}

const HARMONICS: usize = 5;
const BAND_PARTIALS: usize = 32;

fn background_bed(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut brown = 0.0;
    let hum_phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            brown = 0.995 * brown + 0.004 * rng.random_range(-1.0..1.0);
            brown + 0.006 * (2.0 * PI * 50.0 * i as f64 / sr + hum_phase).sin()
        })
        .collect()
}

fn voiced(rng: &mut ChaCha8Rng, n: usize, sr: f64, sex: Sex, rolloff: f64) -> Vec<f64> {
    let f0 = match sex {
        Sex::Male => rng.random_range(110.0..165.0),
        Sex::Female => rng.random_range(160.0..220.0),
    };
    let (vib_rate, vib_depth) = (rng.random_range(4.0..6.0), rng.random_range(0.005..0.015));
    let (glide_rate, glide_depth) = (rng.random_range(0.1..0.3), rng.random_range(0.03..0.08));
    let (syl_rate, syl_phase) = (rng.random_range(2.5..4.5), rng.random_range(0.0..2.0 * PI));
    let phases: Vec<f64> = (0..HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let amps: Vec<f64> = (1..=HARMONICS).map(|k| (k as f64).powf(-rolloff)).collect();
    let norm: f64 = amps.iter().sum();
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin() + glide_depth * (2.0 * PI * glide_rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let tone: f64 = amps.iter().zip(&phases).enumerate().map(|(k, (a, p))| a * ((k + 1) as f64 * phase + p).sin()).sum();
            let syl = 0.5 + 0.5 * (2.0 * PI * syl_rate * t + syl_phase).sin();
            tone / norm * (0.35 + 0.65 * syl * syl)
        })
        .collect()
}

fn breathing_band(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let partials: Vec<(f64, f64)> = (0..BAND_PARTIALS).map(|_| (rng.random_range(2000.0..4000.0), rng.random_range(0.0..2.0 * PI))).collect();
    let (rate, phase) = (rng.random_range(0.25..0.5), rng.random_range(0.0..2.0 * PI));
    let level = rng.random_range(0.15..0.3) / (BAND_PARTIALS as f64).sqrt();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let s: f64 = partials.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum();
            let breath = 0.4 + 0.6 * (0.5 + 0.5 * (2.0 * PI * rate * t + phase).sin());
            level * breath * s
        })
        .collect()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

fn synth_clip(cfg: &SynthConfig, label: Label, index: usize, sex: Sex) -> AudioClip {
    let mut rng = stream(cfg.seed, "synth", &[label.index() as u64, index as u64]);
    let sr = cfg.sample_rate as f64;
    let duration = rng.random_range(cfg.min_duration_s..=cfg.max_duration_s);
    let n = (duration * sr).round() as usize;
    let rolloff = match label {
        Label::Control => 1.0,
        Label::Patient => 1.8,
    };
    let mut x = voiced(&mut rng, n, sr, sex, rolloff);
    if label == Label::Patient {
        for (v, b) in x.iter_mut().zip(breathing_band(&mut rng, n, sr)) {
            *v += b;
        }
    }
    for (v, b) in x.iter_mut().zip(background_bed(&mut rng, n, sr)) {
        *v += b;
    }
    normalize_peak(&mut x, rng.random_range(0.5..0.8));
    AudioClip::new(x.into_iter().map(|v| v as f32).collect(), cfg.sample_rate).expect("nonempty clip")
}

/// Counts for the 70/10/20 train/validation/test split of `n` items.
fn split_counts(n: usize) -> (usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let val = ((n as f64 * 0.1).round() as usize).min(n - train);
    (train, val)
}

/// Writes `2 · n_per_class` WAVs under `out_dir/wav/` and the manifest at
/// `out_dir/manifest.tsv`. Each class is split 70/10/20 and sexes
/// alternate within a class.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    let mut m = Manifest::new(out_dir, cfg.sample_rate);
    m.provenance.push(format!("synthetic corpus: n_per_class={} seed={}", cfg.n_per_class, cfg.seed));
    let (n_train, n_val) = split_counts(cfg.n_per_class);
    for &label in &[Label::Control, Label::Patient] {
        for i in 0..cfg.n_per_class {
            let sex = if i % 2 == 0 { Sex::Male } else { Sex::Female };
            let clip = synth_clip(cfg, label, i, sex);
            let rel = PathBuf::from(format!("wav/{label}_{i:03}.wav"));
            write_wav(&out_dir.join(&rel), &clip)?;
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            m.records.push(ExampleRecord { path: rel, label, sex, split, duration_s: clip.duration_s() });
        }
    }
    m.save(&out_dir.join("manifest.tsv"))?;
    Ok(m)
}

/// Writes `count` background-noise clips (`ward_NN.wav`) of `seconds`
/// each: brown noise, mains hum with harmonics and periodic monitor beeps.
pub fn synth_noise_clips(out_dir: &Path, count: usize, seconds: f64, sample_rate: u32, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let sr = sample_rate as f64;
    let n = (seconds * sr).round().max(1.0) as usize;
    let mut paths = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = stream(seed, "ward-noise", &[k as u64]);
        let hum = rng.random_range(0.01..0.04);
        let mains = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
        let beep_f = rng.random_range(800.0..1200.0);
        let beep_period = rng.random_range(1.0..2.5);
        let beep_amp = rng.random_range(0.0..0.05);
        let mut brown = 0.0;
        let mut x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                brown = 0.998 * brown + 0.01 * rng.random_range(-1.0..1.0);
                let mut v = brown;
                for h in 1..=3 {
                    v += hum / h as f64 * (2.0 * PI * mains * h as f64 * t).sin();
                }
                if t % beep_period < 0.15 {
                    v += beep_amp * (2.0 * PI * beep_f * t).sin();
                }
                v
            })
            .collect();
        normalize_peak(&mut x, rng.random_range(0.3..0.6));
        let clip = AudioClip::new(x.into_iter().map(|v| v as f32).collect(), sample_rate)?;
        let path = out_dir.join(format!("ward_{k:02}.wav"));
        write_wav(&path, &clip)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Mean per-frame power in `[lo_hz, hi_hz]` from a 400-point STFT.
pub fn band_energy(clip: &AudioClip, lo_hz: f64, hi_hz: f64) -> Result<f64> {
    let cfg = FeatureConfig { sample_rate: clip.sample_rate, ..FeatureConfig::default() };
    let spec = FeatureExtractor::new(&cfg)?.stft_power(clip)?;
    let bin_hz = clip.sample_rate as f64 / cfg.n_fft as f64;
    let bins: Vec<usize> = (0..spec.bins).filter(|&b| (lo_hz..=hi_hz).contains(&(b as f64 * bin_hz))).collect();
    let total: f64 = (0..spec.frames).map(|t| bins.iter().map(|&b| spec.values[t * spec.bins + b]).sum::<f64>()).sum();
    Ok(total / spec.frames as f64)
}
