//! Fixtures shared by the benchmarks in `benches/`.

use mfccgram_core::audio::{AudioClip, FeatureConfig, FeatureExtractor};
use mfccgram_core::train::LabeledFeatures;

/// A deterministic 4 s clip: two tones under a little pseudo-random noise.
pub fn clip(seconds: f64) -> AudioClip {
    let n = (seconds * 16000.0) as usize;
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let samples = (0..n)
        .map(|i| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let t = i as f64 / 16000.0;
            let noise = (state >> 40) as f64 / (1u64 << 24) as f64 - 0.5;
            (0.3 * (2.0 * std::f64::consts::PI * 180.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 2500.0 * t).sin() + 0.02 * noise) as f32
        })
        .collect();
    AudioClip::new(samples, 16000).expect("valid clip")
}

/// `n` labelled 4 s MFCC chunks with alternating labels.
pub fn batch(n: usize) -> Vec<LabeledFeatures> {
    let extractor = FeatureExtractor::new(&FeatureConfig::default()).expect("default config");
    let feat = extractor.extract(&clip(4.0)).expect("features");
    (0..n)
        .map(|i| LabeledFeatures { id: format!("bench{i}#0"), record: format!("bench{i}"), label: i % 2, feat: feat.clone() })
        .collect()
}
