//! STFT power, mel filterbank and MFCC.
//!
//! Conventions follow the common speech-toolkit defaults: periodic Hann
//! window of length `n_fft`, centred frames with reflect padding, power
//! spectrum `|X|²`, HTK mel scale `2595·log10(1 + f/700)` with triangular
//! filters from 0 Hz to Nyquist (no area normalization), natural-log
//! compression `ln(mel + log_floor)` and an orthonormal DCT-II.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::tensor::Scalar;

use super::{AudioClip, AudioError, FeatureConfig, FeatureKind, FeatureMatrix, Result};

/// A `frames × bins` nonnegative grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

/// One triangular mel filter stored sparsely from its first nonzero bin.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilter {
    pub start: usize,
    pub weights: Vec<f64>,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Builds the `n_mels` triangular filters over `n_fft/2 + 1` bins.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<Vec<MelFilter>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let (m_lo, m_hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let points: Vec<f64> = (0..cfg.n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let bin_hz: Vec<f64> = (0..n_bins).map(|b| nyquist * b as f64 / (n_bins - 1).max(1) as f64).collect();

    let mut filters = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
        let weight = |f: f64| {
            let rising = (f - lo) / (centre - lo);
            let falling = (hi - f) / (hi - centre);
            rising.min(falling).max(0.0)
        };
        let nonzero: Vec<usize> = (0..n_bins).filter(|&b| weight(bin_hz[b]) > 0.0).collect();
        match (nonzero.first(), nonzero.last()) {
            (Some(&first), Some(&last)) => {
                filters.push(MelFilter { start: first, weights: (first..=last).map(|b| weight(bin_hz[b])).collect() })
            }
            _ if cfg.allow_empty_filters => filters.push(MelFilter { start: 0, weights: Vec::new() }),
            _ => return Err(AudioError::EmptyMelFilter { index: m, n_mels: cfg.n_mels, n_fft: cfg.n_fft }),
        }
    }
    Ok(filters)
}

/// Index into a signal of length `n` for padded position `i - pad`, using
/// reflection without edge repetition (repeated as needed for short clips).
fn reflect_index(pos: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut p = pos.rem_euclid(period);
    if p >= n as i64 {
        p = period - p;
    }
    p as usize
}

/// Reusable extractor holding the FFT plan, window, filterbank and DCT.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    dct: Vec<f64>,
    fingerprint: u64,
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let window = (0..cfg.n_fft).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.n_fft as f64).cos()).collect();
        let filters = mel_filterbank(cfg)?;
        let n = cfg.n_mels as f64;
        let mut dct = vec![0.0; cfg.n_mfcc * cfg.n_mels];
        for k in 0..cfg.n_mfcc {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for i in 0..cfg.n_mels {
                dct[k * cfg.n_mels + i] = scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos();
            }
        }
        Ok(Self { cfg: cfg.clone(), fft, window, filters, dct, fingerprint: cfg.fingerprint() })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    pub fn stft_power(&self, clip: &AudioClip) -> Result<Spectrogram> {
        if clip.samples.is_empty() {
            return Err(AudioError::EmptyClip);
        }
        let n_fft = self.cfg.n_fft;
        let hop = self.cfg.hop;
        let n = clip.samples.len();
        let frames = self.cfg.frame_count(n);
        let bins = n_fft / 2 + 1;
        let pad = (n_fft / 2) as i64;
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut values = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let start = (t * hop) as i64 - pad;
            for (i, slot) in buf.iter_mut().enumerate() {
                let pos = start + i as i64;
                let idx = if (0..n as i64).contains(&pos) { pos as usize } else { reflect_index(pos, n) };
                *slot = Complex::new(clip.samples[idx] as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            values.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
        }
        Ok(Spectrogram { frames, bins, values })
    }

    pub fn mel(&self, power: &Spectrogram) -> Result<Spectrogram> {
        let bins = self.cfg.n_fft / 2 + 1;
        if power.bins != bins {
            return Err(AudioError::InvalidConfig(format!("power spectrum has {} bins, expected {bins}", power.bins)));
        }
        let n_mels = self.filters.len();
        let mut values = vec![0.0; power.frames * n_mels];
        for t in 0..power.frames {
            let row = &power.values[t * bins..(t + 1) * bins];
            for (m, f) in self.filters.iter().enumerate() {
                values[t * n_mels + m] = f.weights.iter().zip(&row[f.start..]).map(|(w, p)| w * p).sum();
            }
        }
        Ok(Spectrogram { frames: power.frames, bins: n_mels, values })
    }

    /// Log compression plus orthonormal DCT-II of each mel frame.
    pub fn cepstrum(&self, mel: &Spectrogram) -> Vec<f64> {
        let (n_mels, n_mfcc) = (self.cfg.n_mels, self.cfg.n_mfcc);
        let logs: Vec<f64> = mel.values.iter().map(|v| (v + self.cfg.log_floor).ln()).collect();
        let mut out = vec![0.0; mel.frames * n_mfcc];
        // out[T × n_mfcc] = logs[T × n_mels] · dctᵀ
        <f64 as Scalar>::gemm(mel.frames, n_mels, n_mfcc, &logs, (n_mels, 1), &self.dct, (1, n_mels), 0.0, &mut out);
        out
    }

    /// Features of the configured kind for one clip.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(AudioError::SampleRateMismatch { expected: self.cfg.sample_rate, got: clip.sample_rate });
        }
        let mel = self.mel(&self.stft_power(clip)?)?;
        let (channels, values) = match self.cfg.kind {
            FeatureKind::Mel => (mel.bins, mel.values),
            FeatureKind::Mfcc => (self.cfg.n_mfcc, self.cepstrum(&mel)),
        };
        Ok(FeatureMatrix { frames: mel.frames, channels, values, fingerprint: self.fingerprint, source: String::new() })
    }
}

/// `frames × (n_fft/2 + 1)` power spectrogram.
pub fn stft_power(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Spectrogram> {
    FeatureExtractor::new(cfg)?.stft_power(clip)
}

/// Projects a power spectrogram onto the mel filterbank.
pub fn mel_spectrogram(power: &Spectrogram, cfg: &FeatureConfig) -> Result<Spectrogram> {
    if power.values.iter().any(|v| *v < 0.0) {
        return Err(AudioError::InvalidConfig("power spectrum has negative entries".into()));
    }
    FeatureExtractor::new(cfg)?.mel(power)
}

/// MFCC features of `clip`; `cfg.kind` must be [`FeatureKind::Mfcc`].
pub fn mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    if cfg.kind != FeatureKind::Mfcc {
        return Err(AudioError::InvalidConfig("mfcc requires feature kind mfcc".into()));
    }
    FeatureExtractor::new(cfg)?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn one_second_gives_81_frames() {
        let clip = AudioClip::new(vec![0.1; 16000], 16000).unwrap();
        let p = stft_power(&clip, &cfg()).unwrap();
        assert_eq!(p.frames, 81);
        assert_eq!(p.bins, 201);
    }

    #[test]
    fn dc_input_peaks_at_bin_zero() {
        let clip = AudioClip::new(vec![1.0; 4000], 16000).unwrap();
        let p = stft_power(&clip, &cfg()).unwrap();
        for row in p.values.chunks(p.bins) {
            let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(arg, 0);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let s = (0..16000).map(|i| (2.0 * PI * 400.0 * i as f64 / 16000.0).sin() as f32 * 0.5).collect();
        let p = stft_power(&AudioClip::new(s, 16000).unwrap(), &cfg()).unwrap();
        for row in p.values.chunks(p.bins).skip(2).take(p.frames - 4) {
            let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(arg, 10);
        }
    }

    #[test]
    fn very_short_clips_still_frame() {
        for n in [1usize, 2, 3, 199, 200, 201] {
            let clip = AudioClip::new(vec![0.3; n], 16000).unwrap();
            assert_eq!(stft_power(&clip, &cfg()).unwrap().frames, n / 200 + 1);
        }
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-9, 5), 1);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn zero_and_doubled_power_are_linear() {
        let c = cfg();
        let zero = Spectrogram { frames: 3, bins: 201, values: vec![0.0; 603] };
        assert!(mel_spectrogram(&zero, &c).unwrap().values.iter().all(|v| *v == 0.0));
        let p = Spectrogram { frames: 2, bins: 201, values: (0..402).map(|i| (i % 17) as f64 * 0.3).collect() };
        let d = Spectrogram { values: p.values.iter().map(|v| v * 2.0).collect(), ..p.clone() };
        let (m1, m2) = (mel_spectrogram(&p, &c).unwrap(), mel_spectrogram(&d, &c).unwrap());
        for (a, b) in m1.values.iter().zip(&m2.values) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn filters_are_single_peaked_and_nonnegative() {
        for f in mel_filterbank(&cfg()).unwrap() {
            assert!(f.weights.iter().all(|w| *w >= 0.0));
            let peak = f.weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|p| p.0).unwrap_or(0);
            assert!(f.weights[..peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(f.weights[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn empty_filter_is_an_error_when_disallowed() {
        let strict = FeatureConfig { allow_empty_filters: false, ..cfg() };
        assert!(matches!(mel_filterbank(&strict), Err(AudioError::EmptyMelFilter { index: 0, .. })));
        let coarse = FeatureConfig { n_mels: 40, n_mfcc: 40, allow_empty_filters: false, ..cfg() };
        assert!(mel_filterbank(&coarse).is_ok());
    }

    #[test]
    fn dct_of_constant_frame() {
        let ex = FeatureExtractor::new(&cfg()).unwrap();
        let c: f64 = 1.7;
        let mel = Spectrogram { frames: 1, bins: 128, values: vec![c.exp() - 1e-10; 128] };
        let out = ex.cepstrum(&mel);
        assert!((out[0] - c * 128f64.sqrt()).abs() < 1e-9);
        assert!(out[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn four_seconds_of_mfcc_is_321_by_128() {
        let s = (0..64000).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect();
        let m = mfcc(&AudioClip::new(s, 16000).unwrap(), &cfg()).unwrap();
        assert_eq!((m.frames, m.channels), (321, 128));
    }

    #[test]
    fn mfcc_rejects_mel_kind_and_rate_mismatch() {
        let clip = AudioClip::new(vec![0.0; 100], 16000).unwrap();
        assert!(mfcc(&clip, &FeatureConfig { kind: FeatureKind::Mel, ..cfg() }).is_err());
        let other = AudioClip::new(vec![0.0; 100], 8000).unwrap();
        assert!(matches!(mfcc(&other, &cfg()), Err(AudioError::SampleRateMismatch { .. })));
    }
}
