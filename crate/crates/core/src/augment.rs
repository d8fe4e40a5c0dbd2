//! Background-noise injection.
//!
//! Each injection draw picks a noise clip uniformly from the pool, a uniform
//! start offset inside it (reading wraps around the end of the noise clip),
//! and an intensity factor uniform on `(0, max_amplitude / peak(noise)]`.
//! The scaled noise is added sample by sample and the sum is clamped to
//! [−1, 1], so a single draw never moves any sample by more than
//! `max_amplitude`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, AudioClip, AudioError, Result};
use crate::data::Label;
use crate::rng::{hash_str, stream};

/// Background-noise clips at the working sample rate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoisePool {
    pub clips: Vec<AudioClip>,
    pub ids: Vec<String>,
}

impl NoisePool {
    pub fn from_clips(ids: Vec<String>, clips: Vec<AudioClip>) -> Result<Self> {
        if ids.len() != clips.len() {
            return Err(AudioError::InvalidConfig(format!("{} noise ids for {} clips", ids.len(), clips.len())));
        }
        if let Some(first) = clips.first() {
            if let Some(bad) = clips.iter().find(|c| c.sample_rate != first.sample_rate) {
                return Err(AudioError::SampleRateMismatch { expected: first.sample_rate, got: bad.sample_rate });
            }
        }
        Ok(Self { clips, ids })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Median of the clip peaks (mean of the middle two for even sizes).
    /// `None` for an empty pool.
    pub fn median_peak(&self) -> Option<f32> {
        if self.clips.is_empty() {
            return None;
        }
        let mut peaks: Vec<f32> = self.clips.iter().map(AudioClip::peak).collect();
        peaks.sort_by(f32::total_cmp);
        let n = peaks.len();
        Some(if n % 2 == 1 { peaks[n / 2] } else { 0.5 * (peaks[n / 2 - 1] + peaks[n / 2]) })
    }
}

/// How many noise files each class receives and how loud they may be.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub patient_count: u8,
    pub control_count: u8,
    pub max_amplitude: f32,
    pub seed: u64,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        Self { patient_count: 1, control_count: 1, max_amplitude: 0.2, seed: 0 }
    }
}

impl NoisePolicy {
    pub fn none() -> Self {
        Self { patient_count: 0, control_count: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patient_count > 3 || self.control_count > 3 {
            return Err(AudioError::InvalidConfig("noise counts must be in 0..=3".into()));
        }
        if !(self.max_amplitude > 0.0) || !self.max_amplitude.is_finite() {
            return Err(AudioError::InvalidConfig("max_amplitude must be positive".into()));
        }
        Ok(())
    }

    pub fn count_for(&self, label: Label) -> usize {
        match label {
            Label::Patient => self.patient_count as usize,
            Label::Control => self.control_count as usize,
        }
    }

    pub fn is_active(&self) -> bool {
        self.patient_count > 0 || self.control_count > 0
    }

    /// Stream for training-time draws: a new draw for every epoch.
    pub fn training_rng(&self, clip_id: &str, epoch: u64) -> ChaCha8Rng {
        stream(self.seed, "noise-train", &[hash_str(clip_id), epoch])
    }

    /// Stream for validation and test: one fixed draw per clip.
    pub fn evaluation_rng(&self, clip_id: &str) -> ChaCha8Rng {
        stream(self.seed, "noise-eval", &[hash_str(clip_id)])
    }
}

/// Loads every path and resamples to `sample_rate`. An empty list is only
/// valid when the policy never injects.
pub fn build_noise_pool(paths: &[PathBuf], sample_rate: u32, policy: &NoisePolicy) -> Result<NoisePool> {
    if paths.is_empty() && policy.is_active() {
        return Err(AudioError::InvalidConfig("noise pool is empty but the noise policy injects noise".into()));
    }
    let mut clips = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for p in paths {
        clips.push(resample(&load_wav(p)?, sample_rate)?);
        ids.push(p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string()));
    }
    NoisePool::from_clips(ids, clips)
}

/// Every `.wav` file directly inside `dir`, sorted by name.
pub fn noise_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| AudioError::Io { path: dir.display().to_string(), source: e })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Adds `count` independently drawn noise segments to `clip`.
pub fn inject_noise<R: Rng + ?Sized>(clip: &AudioClip, pool: &NoisePool, count: usize, max_amplitude: f32, rng: &mut R) -> Result<AudioClip> {
    if count == 0 {
        return Ok(clip.clone());
    }
    if pool.is_empty() {
        return Err(AudioError::InvalidConfig("cannot inject noise from an empty pool".into()));
    }
    if !(max_amplitude > 0.0) {
        return Err(AudioError::InvalidConfig("max_amplitude must be positive".into()));
    }
    if let Some(n) = pool.clips.first() {
        if n.sample_rate != clip.sample_rate {
            return Err(AudioError::SampleRateMismatch { expected: clip.sample_rate, got: n.sample_rate });
        }
    }
    let mut added = vec![0.0f64; clip.samples.len()];
    for _ in 0..count {
        let noise = &pool.clips[rng.random_range(0..pool.len())];
        let start = rng.random_range(0..noise.len());
        let peak = noise.peak() as f64;
        // 1 − U[0,1) lies in (0, 1].
        let unit = 1.0 - rng.random::<f64>();
        let factor = if peak > 0.0 { unit * max_amplitude as f64 / peak } else { 0.0 };
        let src = &noise.samples;
        let mut j = start;
        for a in &mut added {
            *a += factor * src[j] as f64;
            j += 1;
            if j == src.len() {
                j = 0;
            }
        }
    }
    let samples = clip.samples.iter().zip(&added).map(|(&x, &a)| (x as f64 + a).clamp(-1.0, 1.0) as f32).collect();
    AudioClip::new(samples, clip.sample_rate)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::audio::write_wav;

    fn pool(seed: u64) -> NoisePool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clips = (0..4)
            .map(|k| AudioClip::new((0..800 + 100 * k).map(|_| rng.random_range(-0.5f32..0.5)).collect(), 16000).unwrap())
            .collect();
        NoisePool::from_clips((0..4).map(|k| format!("n{k}")).collect(), clips).unwrap()
    }

    #[test]
    fn zero_count_is_identity() {
        let clip = AudioClip::new(vec![0.3; 100], 16000).unwrap();
        let out = inject_noise(&clip, &pool(1), 0, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn silent_input_stays_under_the_bound() {
        let clip = AudioClip::new(vec![0.0; 3000], 16000).unwrap();
        let p = pool(2);
        for seed in 0..50 {
            let out = inject_noise(&clip, &p, 1, 0.1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(out.len(), clip.len());
            assert!(out.peak() <= 0.1 + 1e-7, "peak {}", out.peak());
            assert!(out.peak() > 0.0);
        }
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let clip = AudioClip::new((0..2000).map(|i| (i as f32 * 0.01).sin() * 0.5).collect(), 16000).unwrap();
        let p = pool(3);
        let a = inject_noise(&clip, &p, 2, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = inject_noise(&clip, &p, 2, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = inject_noise(&clip, &p, 2, 0.2, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_wraps_when_clip_outlives_it() {
        let noise = AudioClip::new(vec![1.0, -1.0, 0.5], 16000).unwrap();
        let p = NoisePool::from_clips(vec!["n".into()], vec![noise]).unwrap();
        let clip = AudioClip::new(vec![0.0; 10], 16000).unwrap();
        let out = inject_noise(&clip, &p, 1, 0.5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        // Period-3 pattern survives the wrap.
        for i in 3..10 {
            assert_eq!(out.samples[i], out.samples[i - 3]);
        }
    }

    #[test]
    fn empty_pool_rules() {
        assert!(build_noise_pool(&[], 16000, &NoisePolicy::none()).unwrap().is_empty());
        assert!(build_noise_pool(&[], 16000, &NoisePolicy::default()).is_err());
        let clip = AudioClip::new(vec![0.0; 10], 16000).unwrap();
        assert!(inject_noise(&clip, &NoisePool::default(), 1, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn pool_files_are_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ward.wav");
        write_wav(&p, &AudioClip::new(vec![0.1; 4800], 48000).unwrap()).unwrap();
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, "not audio").unwrap();
        let pool = build_noise_pool(&[p.clone()], 16000, &NoisePolicy::default()).unwrap();
        assert_eq!(pool.clips[0].len(), 1600);
        assert_eq!(pool.ids, vec!["ward".to_string()]);
        assert!(build_noise_pool(&[p, junk], 16000, &NoisePolicy::default()).is_err());
    }

    #[test]
    fn median_peak_of_pool() {
        let clips = [0.1f32, 0.4, 0.2].iter().map(|&a| AudioClip::new(vec![a; 4], 16000).unwrap()).collect();
        let p = NoisePool::from_clips(vec!["a".into(), "b".into(), "c".into()], clips).unwrap();
        assert_eq!(p.median_peak(), Some(0.2));
    }

    #[test]
    fn policy_validation() {
        assert!(NoisePolicy { patient_count: 4, ..NoisePolicy::default() }.validate().is_err());
        assert!(NoisePolicy { max_amplitude: 0.0, ..NoisePolicy::default() }.validate().is_err());
        assert!(NoisePolicy::default().validate().is_ok());
    }
}
