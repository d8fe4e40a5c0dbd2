//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use mfccgram_core::audio::{AudioClip, FeatureConfig};
use mfccgram_core::model::{batch_tensor, classify, encode, init_params, reconstruct, HeadInit, Mode, ModelConfig};
use mfccgram_core::tensor::{finite_difference_grad, relative_error};
use mfccgram_core::{Graph, ParamStore, TensorError};
use rand::Rng;

/// Brute-force MFCC: reflect-padded centred frames, periodic Hann window,
/// O(n²) DFT, HTK triangular filters and a DCT-II evaluated term by term.
pub fn naive_mfcc(samples: &[f64], cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n = samples.len() as i64;
    let n_fft = cfg.n_fft;
    let pad = (n_fft / 2) as i64;
    let frames = samples.len() / cfg.hop + 1;
    let bins = n_fft / 2 + 1;
    let reflect = |mut i: i64| -> f64 {
        // Mirror without repeating the edge sample until in range.
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return samples[i as usize];
            }
        }
    };

    let sr = cfg.sample_rate as f64;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(sr / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|i| hz(top * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let bank: Vec<Vec<f64>> = (0..cfg.n_mels)
        .map(|m| {
            (0..bins)
                .map(|b| {
                    let f = b as f64 * sr / n_fft as f64;
                    let up = (f - edges[m]) / (edges[m + 1] - edges[m]);
                    let down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect();

    let cos: Vec<f64> = (0..n_fft).map(|j| (-2.0 * PI * j as f64 / n_fft as f64).cos()).collect();
    let sin: Vec<f64> = (0..n_fft).map(|j| (-2.0 * PI * j as f64 / n_fft as f64).sin()).collect();
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = (t * cfg.hop) as i64 - pad;
        let frame: Vec<f64> = (0..n_fft).map(|i| reflect(start + i as i64) * (0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())).collect();
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in frame.iter().enumerate() {
                    let j = k * i % n_fft;
                    re += x * cos[j];
                    im += x * sin[j];
                }
                re * re + im * im
            })
            .collect();
        let logmel: Vec<f64> = bank.iter().map(|w| (w.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>() + cfg.log_floor).ln()).collect();
        let m = cfg.n_mels as f64;
        let coeffs = (0..cfg.n_mfcc)
            .map(|k| {
                let s: f64 = logmel.iter().enumerate().map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / m).cos()).sum();
                s * if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() }
            })
            .collect();
        out.push(coeffs);
    }
    out
}

/// Uniform white noise plus a couple of random tones, `seconds` long.
pub fn random_clip<R: Rng>(rng: &mut R, seconds: f64, sample_rate: u32) -> AudioClip {
    let n = (seconds * sample_rate as f64) as usize;
    let tones: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(80.0..6000.0), rng.random_range(0.05..0.3))).collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let tone: f64 = tones.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum();
            (tone + rng.random_range(-0.1..0.1)) as f32
        })
        .collect();
    AudioClip::new(samples, sample_rate).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Reconstruction,
    Classification,
}

/// Loss of the tiny encoder on a fixed batch through one head.
pub fn head_loss(g: &mut Graph<f64>, params: &ParamStore<f64>, cfg: &ModelConfig, head: Head, inputs: &[Vec<f64>], frames: usize) -> Result<mfccgram_core::NodeId, TensorError> {
    let rows: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let x = g.input(batch_tensor(frames, cfg.input_dim, &rows)?)?;
    let enc = encode(g, params, cfg, x, Mode::EVAL)?;
    match head {
        Head::Reconstruction => {
            let rec = reconstruct(g, params, enc)?;
            // Targets shifted away from the inputs so no residual sits on an
            // L1 kink.
            let targets: Vec<Vec<f64>> = inputs.iter().map(|v| v.iter().map(|x| x * 0.5 + 0.3).collect()).collect();
            let trows: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
            let y = g.input(batch_tensor(frames, cfg.input_dim, &trows)?)?;
            let mask: Vec<bool> = (0..inputs.len() * frames * cfg.input_dim).map(|i| i % 3 != 1).collect();
            g.l1_loss(rec, y, &mask)
        }
        Head::Classification => {
            let logits = classify(g, params, enc)?;
            let labels: Vec<usize> = (0..inputs.len()).map(|i| i % cfg.n_classes).collect();
            g.cross_entropy(logits, &labels)
        }
    }
}

/// Relative error, except that gradients which vanish analytically (the
/// key bias cannot move a softmax) compare as absolute differences once both
/// norms fall below `1e-7`.
pub fn gradient_error(backward: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(backward).max(norm(numeric)) < 1e-7 {
        backward.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        relative_error(backward, numeric)
    }
}

/// Per-parameter relative error between backward and central differences
/// for the tiny 64-bit encoder. Parameters the head does not touch must
/// have a zero finite-difference gradient.
pub fn tiny_gradient_errors(head: Head, seed: u64) -> Vec<(String, f64)> {
    let cfg = ModelConfig::tiny();
    let frames = 5;
    let params = init_params::<f64>(&cfg, seed, HeadInit::Xavier).unwrap();
    let mut rng = mfccgram_core::rng::stream(seed, "gradcheck-inputs", &[]);
    let inputs: Vec<Vec<f64>> = (0..2).map(|_| (0..frames * cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

    let mut g = Graph::new();
    let loss = head_loss(&mut g, &params, &cfg, head, &inputs, frames).unwrap();
    let grads = g.backward(loss).unwrap();
    let f = |p: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = head_loss(&mut g, p, &cfg, head, &inputs, frames)?;
        Ok(g.value(l).item())
    };
    let numeric = finite_difference_grad(f, &params, 1e-5).unwrap();
    numeric
        .iter()
        .map(|(name, fd)| {
            let err = match grads.get(name) {
                Some(bw) => gradient_error(bw.data(), fd.data()),
                None => fd.data().iter().fold(0.0f64, |m, v| m.max(v.abs())),
            };
            (name.clone(), err)
        })
        .collect()
}

/// MFCC matrices of the windowed chunks of a fresh synthetic corpus, all
/// splits in manifest order, truncated to `limit`.
pub fn synthetic_features(dir: &std::path::Path, n_per_class: usize, seed: u64, limit: usize) -> Vec<mfccgram_core::audio::FeatureMatrix> {
    use mfccgram_core::audio::FeatureExtractor;
    use mfccgram_core::data::{load_chunks, synth_corpus, Split, SynthConfig, WindowConfig};
    let manifest = synth_corpus(&SynthConfig::new(n_per_class, seed), dir).unwrap();
    let extractor = FeatureExtractor::new(&FeatureConfig::default()).unwrap();
    let mut out = Vec::new();
    for &split in Split::ALL {
        for c in load_chunks(&manifest, split, &WindowConfig::default()).unwrap() {
            out.push(extractor.extract(&c.audio).unwrap());
        }
    }
    assert!(out.len() >= limit, "corpus gave {} chunks, wanted {limit}", out.len());
    out.truncate(limit);
    out
}
