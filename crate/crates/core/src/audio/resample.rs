//! Band-limited sample-rate conversion.
//!
//! Kernel: a Kaiser-windowed sinc low-pass with cutoff at
//! [`ROLLOFF`] × the lower of the two Nyquist frequencies, windowed over
//! [`ZERO_CROSSINGS`] sinc zero crossings on each side of the centre
//! (β = [`KAISER_BETA`]). For 48 kHz → 16 kHz the kernel spans ±101 source
//! samples. Rational ratios share one precomputed tap table per output phase.

use super::{AudioClip, AudioError, Result};

pub const ZERO_CROSSINGS: f64 = 32.0;
pub const ROLLOFF: f64 = 0.95;
pub const KAISER_BETA: f64 = 8.6;

/// Largest number of distinct output phases tabulated; beyond it taps are
/// evaluated on the fly.
const MAX_TABLE_PHASES: u64 = 8192;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    /// Cutoff in cycles per source sample.
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(source: u32, target: u32) -> Self {
        let ratio = (target as f64 / source as f64).min(1.0);
        let cutoff = 0.5 * ratio * ROLLOFF;
        Self { cutoff, half_width: ZERO_CROSSINGS / (2.0 * cutoff), i0_beta: bessel_i0(KAISER_BETA) }
    }

    fn at(&self, u: f64) -> f64 {
        if u.abs() >= self.half_width {
            return 0.0;
        }
        let x = 2.0 * self.cutoff * u;
        let sinc = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
        let r = u / self.half_width;
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        2.0 * self.cutoff * sinc * window
    }
}

/// Converts `clip` to `target_rate`. The output has
/// `round(n · target / source)` samples and is clamped to [−1, 1].
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(AudioError::InvalidConfig("target sample rate must be positive".into()));
    }
    let source_rate = clip.sample_rate;
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let n = clip.samples.len() as u64;
    let out_len = ((n * target_rate as u64 + source_rate as u64 / 2) / source_rate as u64).max(1) as usize;

    let kernel = Kernel::new(source_rate, target_rate);
    let reach = kernel.half_width.ceil() as i64 + 1;
    let taps = (2 * reach + 1) as usize;
    let table: Option<Vec<f64>> = (up <= MAX_TABLE_PHASES).then(|| {
        let mut t = vec![0.0; up as usize * taps];
        for p in 0..up {
            let frac = p as f64 / up as f64;
            for (k, slot) in (-reach..=reach).zip(t[p as usize * taps..].iter_mut()) {
                *slot = kernel.at(frac - k as f64);
            }
        }
        t
    });

    let src = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len as u64 {
        let pos = i * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let frac = phase as f64 / up as f64;
        let mut acc = 0.0;
        for (slot, k) in (-reach..=reach).enumerate() {
            let j = base + k;
            if j < 0 || j >= n as i64 {
                continue;
            }
            let w = match &table {
                Some(t) => t[phase as usize * taps + slot],
                None => kernel.at(frac - k as f64),
            };
            acc += w * src[j as usize] as f64;
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> AudioClip {
        let s = (0..n).map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32).collect();
        AudioClip::new(s, rate).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let c = sine(440.0, 16000, 1000, 0.3);
        assert_eq!(resample(&c, 16000).unwrap(), c);
    }

    #[test]
    fn length_arithmetic() {
        let c = AudioClip::new(vec![0.0; 96000], 48000).unwrap();
        assert_eq!(resample(&c, 16000).unwrap().samples.len(), 32000);
        let c = AudioClip::new(vec![0.0; 44100], 44100).unwrap();
        assert_eq!(resample(&c, 16000).unwrap().samples.len(), 16000);
        let c = AudioClip::new(vec![0.0; 7], 48000).unwrap();
        assert_eq!(resample(&c, 16000).unwrap().samples.len(), 2);
    }

    #[test]
    fn downsampled_sine_matches_analytic_sine() {
        let c = sine(1000.0, 48000, 96000, 0.5);
        let r = resample(&c, 16000).unwrap();
        let trim = 64;
        let max_err = r.samples[trim..r.samples.len() - trim]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let i = i + trim;
                let want = 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin();
                (v as f64 - want).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn upsampling_preserves_a_tone() {
        let c = sine(300.0, 8000, 8000, 0.5);
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.samples.len(), 16000);
        let max_err = r.samples[128..15872]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let i = i + 128;
                let want = 0.5 * (2.0 * std::f64::consts::PI * 300.0 * i as f64 / 16000.0).sin();
                (v as f64 - want).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn rejects_zero_rate() {
        assert!(resample(&AudioClip::new(vec![0.0], 8000).unwrap(), 0).is_err());
    }
}
