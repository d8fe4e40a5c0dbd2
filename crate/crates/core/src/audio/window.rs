use super::{AudioClip, AudioError, Result};

/// Start offsets of every full window of `window` samples stepped by `hop`.
///
/// Inputs shorter than one window yield a single start at 0; the caller pads.
pub fn chunk_starts(n_samples: usize, window: usize, hop: usize) -> Vec<usize> {
    if n_samples < window {
        return vec![0];
    }
    (0..=(n_samples - window) / hop).map(|i| i * hop).collect()
}

/// Cuts raw audio into fixed-length chunks.
///
/// Clips at least one window long yield `floor((n − window) / hop) + 1`
/// chunks and never a partial one; shorter clips yield one chunk,
/// zero-padded to the window length.
pub fn window_chunks(clip: &AudioClip, window_s: f64, hop_s: f64) -> Result<Vec<AudioClip>> {
    if !(window_s > 0.0) || !(hop_s > 0.0) {
        return Err(AudioError::InvalidConfig("window and hop durations must be positive".into()));
    }
    let rate = clip.sample_rate as f64;
    let window = (window_s * rate).round().max(1.0) as usize;
    let hop = (hop_s * rate).round().max(1.0) as usize;
    let starts = chunk_starts(clip.samples.len(), window, hop);
    starts
        .into_iter()
        .map(|s| {
            let end = (s + window).min(clip.samples.len());
            let mut samples = clip.samples[s..end].to_vec();
            samples.resize(window, 0.0);
            AudioClip::new(samples, clip.sample_rate)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn clip(seconds: f64) -> AudioClip {
        AudioClip::new(vec![0.1; (seconds * 16000.0) as usize], 16000).unwrap()
    }

    #[test]
    fn eight_seconds_make_five_chunks() {
        let chunks = window_chunks(&clip(8.0), 4.0, 1.0).unwrap();
        assert_eq!(chunks.len(), 5);
        assert!(chunks.iter().all(|c| c.samples.len() == 64000));
    }

    #[test]
    fn exact_window_makes_one_chunk() {
        assert_eq!(window_chunks(&clip(4.0), 4.0, 1.0).unwrap().len(), 1);
    }

    #[test]
    fn five_and_a_half_seconds_start_at_zero_and_one() {
        assert_eq!(chunk_starts(88000, 64000, 16000), vec![0, 16000]);
        assert_eq!(window_chunks(&clip(5.5), 4.0, 1.0).unwrap().len(), 2);
    }

    #[test]
    fn short_clip_is_zero_padded() {
        let c = AudioClip::new(vec![0.5; 1000], 16000).unwrap();
        let chunks = window_chunks(&c, 4.0, 1.0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].samples.len(), 64000);
        assert_eq!(chunks[0].samples[999], 0.5);
        assert_eq!(chunks[0].samples[1000], 0.0);
    }

    #[test]
    fn rejects_nonpositive_durations() {
        assert!(window_chunks(&clip(5.0), 0.0, 1.0).is_err());
        assert!(window_chunks(&clip(5.0), 4.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn starts_step_by_hop_and_chunks_share_length(n in 1usize..200_000, window in 1usize..70_000, hop in 1usize..20_000) {
            let starts = chunk_starts(n, window, hop);
            prop_assert!(starts.windows(2).all(|w| w[1] == w[0] + hop));
            if n >= window {
                prop_assert_eq!(starts.len(), (n - window) / hop + 1);
                prop_assert!(starts.iter().all(|s| s + window <= n));
            } else {
                prop_assert_eq!(starts, vec![0]);
            }
        }
    }
}
