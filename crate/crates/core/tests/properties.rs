//! Randomized invariants across the pipeline.

mod common;

use std::collections::BTreeSet;

use mfccgram_core::alter::{
    channel_alteration, compose_alterations, noise_alteration, time_alteration, AlterationConfigs, ChannelAlterationConfig, NoiseAlterationConfig,
    TimeAlterationConfig,
};
use mfccgram_core::audio::{window_chunks, AudioClip, FeatureConfig, FeatureExtractor, FeatureMatrix};
use mfccgram_core::augment::{inject_noise, NoisePool};
use mfccgram_core::data::{balance, ExampleRecord, Label, Manifest, Sex, Split};
use mfccgram_core::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feat(t: usize, h: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::new(t, h, (0..t * h).map(|_| rng.random_range(-20.0..20.0)).collect())
}

fn pool(seed: u64) -> NoisePool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips = (0..3).map(|k| AudioClip::new((0..500 + 300 * k).map(|_| rng.random_range(-0.8f32..0.8)).collect(), 16000).unwrap()).collect();
    NoisePool::from_clips(vec!["a".into(), "b".into(), "c".into()], clips).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_law(n in 1usize..20_000, hop_idx in 0usize..3) {
        let hop = [80, 160, 200][hop_idx];
        let cfg = FeatureConfig { n_fft: 400, hop, n_mels: 32, n_mfcc: 20, ..FeatureConfig::default() };
        let clip = AudioClip::new(vec![0.01; n], 16000).unwrap();
        let f = FeatureExtractor::new(&cfg).unwrap().extract(&clip).unwrap();
        prop_assert_eq!(f.frames, n / hop + 1);
        prop_assert_eq!(f.channels, 20);
    }

    #[test]
    fn extraction_is_pure(seed in any::<u64>(), secs in 0.05f64..0.5) {
        let cfg = FeatureConfig { n_mels: 40, n_mfcc: 40, ..FeatureConfig::default() };
        let clip = common::random_clip(&mut ChaCha8Rng::seed_from_u64(seed), secs, 16000);
        let a = FeatureExtractor::new(&cfg).unwrap().extract(&clip).unwrap();
        let b = FeatureExtractor::new(&cfg).unwrap().extract(&clip).unwrap();
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn window_chunks_share_length(n in 1usize..200_000) {
        let clip = AudioClip::new(vec![0.2; n], 16000).unwrap();
        let chunks = window_chunks(&clip, 4.0, 1.0).unwrap();
        prop_assert!(chunks.iter().all(|c| c.samples.len() == 64000));
        let expected = if n < 64000 { 1 } else { (n - 64000) / 16000 + 1 };
        prop_assert_eq!(chunks.len(), expected);
    }

    #[test]
    fn injection_preserves_length_and_bound(seed in any::<u64>(), n in 1usize..3000, count in 1usize..4, amp in 0.01f32..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = AudioClip::new((0..n).map(|_| rng.random_range(-0.3f32..0.3)).collect(), 16000).unwrap();
        let p = pool(seed ^ 1);
        let out = inject_noise(&clip, &p, count, amp, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(out.samples.len(), n);
        let peak = out.samples.iter().zip(&clip.samples).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(peak as f64 <= (count as f64 * amp as f64) + 1.0 / 32768.0, "{} > {} x {}", peak, count, amp);
        let again = inject_noise(&clip, &p, count, amp, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again, out);
    }

    #[test]
    fn time_alteration_stays_under_fraction(t in 7usize..400, fraction in 0.0f64..0.99, chunk in 1usize..12, seed in any::<u64>()) {
        prop_assume!(t >= chunk);
        let cfg = TimeAlterationConfig { fraction, chunk_size: chunk, ..TimeAlterationConfig::default() };
        let out = time_alteration(&feat(t, 4, seed), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(out.masked_rows() as f64 <= fraction * t as f64 + 1e-9);
        prop_assert_eq!(out.masked_rows(), cfg.chunk_count(t) * chunk);
    }

    #[test]
    fn channel_alteration_touches_one_contiguous_block(t in 1usize..30, h in 2usize..160, wf in 0.0f64..0.99, seed in any::<u64>()) {
        let cfg = ChannelAlterationConfig { width_fraction: wf };
        let input = feat(t, h, seed);
        let out = channel_alteration(&input, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (start, width) = out.record.channel_block.unwrap();
        prop_assert!(width <= cfg.max_width(h));
        prop_assert!(start + width < h || width == 0);
        for f in 0..t {
            for c in 0..h {
                let inside = (start..start + width).contains(&c);
                prop_assert_eq!(out.mask[f * h + c], inside);
                if inside {
                    prop_assert_eq!(out.altered.at(f, c), 0.0);
                } else {
                    prop_assert_eq!(out.altered.at(f, c).to_bits(), input.at(f, c).to_bits());
                }
            }
        }
    }

    #[test]
    fn unmasked_positions_are_untouched(t in 7usize..200, h in 2usize..40, seed in any::<u64>(), noise_p in 0.0f64..1.0) {
        let cfgs = AlterationConfigs {
            noise: Some(NoiseAlterationConfig { apply_prob: noise_p, ..NoiseAlterationConfig::default() }),
            ..AlterationConfigs::all()
        };
        let input = feat(t, h, seed);
        let out = compose_alterations(&input, &cfgs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&out.target, &input);
        if !out.record.noise_applied {
            for (i, m) in out.mask.iter().enumerate() {
                if !m {
                    prop_assert_eq!(out.altered.values[i].to_bits(), input.values[i].to_bits());
                }
            }
        }
        let again = compose_alterations(&input, &cfgs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again, out);
    }

    #[test]
    fn composed_mask_is_the_union_of_its_stages(t in 7usize..200, h in 2usize..40, seed in any::<u64>()) {
        let time = TimeAlterationConfig::default();
        let cfgs = AlterationConfigs { noise: Some(NoiseAlterationConfig { apply_prob: 0.0, ..NoiseAlterationConfig::default() }), ..AlterationConfigs::all() };
        let out = compose_alterations(&feat(t, h, seed), &cfgs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut union = BTreeSet::new();
        for (first, _) in &out.record.time_chunks {
            for f in *first..first + time.chunk_size {
                union.extend(f * h..(f + 1) * h);
            }
        }
        let (start, width) = out.record.channel_block.unwrap();
        let time_count = union.len();
        for f in 0..t {
            union.extend(f * h + start..f * h + start + width);
        }
        let marked: BTreeSet<usize> = out.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
        prop_assert_eq!(&marked, &union);
        prop_assert!(marked.len() >= time_count.max(t * width));
    }

    #[test]
    fn noise_alteration_is_pure(seed in any::<u64>()) {
        let cfg = NoiseAlterationConfig { apply_prob: 0.5, ..NoiseAlterationConfig::default() };
        let input = feat(10, 6, seed);
        let a = noise_alteration(&input, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = noise_alteration(&input, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..40, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(vec![rows, cols], |_| rng.random_range(-scale..scale))).unwrap();
        let s = g.softmax(x).unwrap();
        for row in g.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_fn(vec![6, 5], |_| rng.random_range(-1.0..1.0)));
        p.insert("x", Tensor::from_fn(vec![2, 3, 6], |_| rng.random_range(-1.0..1.0)));
        let run = || {
            let mut g = Graph::<f64>::new();
            let w = g.param_from(&p, "w").unwrap();
            let x = g.param_from(&p, "x").unwrap();
            let y = g.matmul(x, w).unwrap();
            let s = g.softmax(y).unwrap();
            // Mean over frames leaves `[batch, classes]` logits.
            let pooled = g.mean(s, 1).unwrap();
            let loss = g.cross_entropy(pooled, &[0, 4]).unwrap();
            g.backward(loss).unwrap()
        };
        let (a, b) = (run(), run());
        for (name, t) in a.iter() {
            let u = b.get(name).unwrap();
            prop_assert!(t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn balance_keeps_splits_and_equalizes_cells(counts in proptest::collection::vec(1usize..8, 12), seed in any::<u64>()) {
        let mut m = Manifest::new("/data", 16000);
        let mut k = 0;
        for (s, &split) in Split::ALL.iter().enumerate() {
            for (c, (label, sex)) in [(Label::Control, Sex::Male), (Label::Control, Sex::Female), (Label::Patient, Sex::Male), (Label::Patient, Sex::Female)].into_iter().enumerate() {
                for _ in 0..counts[s * 4 + c] {
                    m.records.push(ExampleRecord { path: format!("r{k}.wav").into(), label, sex, split, duration_s: 5.0 });
                    k += 1;
                }
            }
        }
        let out = balance(&m, seed).unwrap();
        for r in &out.records {
            let orig = m.records.iter().find(|o| o.path == r.path).unwrap();
            prop_assert_eq!(orig.split, r.split);
        }
        for (s, &split) in Split::ALL.iter().enumerate() {
            let min = *counts[s * 4..s * 4 + 4].iter().min().unwrap();
            prop_assert_eq!(out.split(split).count(), 4 * min);
        }
        prop_assert_eq!(balance(&m, seed).unwrap(), out);
    }
}
