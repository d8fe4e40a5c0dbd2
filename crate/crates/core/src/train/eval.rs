//! Chunk-level and file-level accuracy in evaluation mode.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{LabeledFeatures, Result, RunConfig, TrainError};
use crate::augment::{inject_noise, NoisePolicy, NoisePool};
use crate::audio::{FeatureConfig, FeatureExtractor};
use crate::data::AudioChunk;
use crate::model::{batch_tensor, predict_logits, ModelConfig};
use crate::tensor::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Percent of chunks whose argmax logit matches the label.
    pub accuracy: f64,
    /// Percent of records whose majority chunk vote matches the label.
    pub file_accuracy: f64,
    pub predictions: Vec<usize>,
}

fn argmax(row: &[f32]) -> usize {
    // First maximum wins, so constant logits pick class 0.
    row.iter().enumerate().fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
}

fn cross_entropy(row: &[f32], label: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    lse - row[label] as f64
}

/// Deterministic eval-mode pass over `set` in batches of `batch_size`.
pub fn evaluate(params: &ParamStore<f32>, cfg: &ModelConfig, set: &[LabeledFeatures], batch_size: usize) -> Result<EvalResult> {
    if set.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let logits: Vec<Vec<f32>> = set
        .par_chunks(batch_size.max(1))
        .map(|b| {
            let rows: Vec<&[f64]> = b.iter().map(|x| x.feat.values.as_slice()).collect();
            predict_logits(params, cfg, batch_tensor(b[0].feat.frames, b[0].feat.channels, &rows)?)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let predictions: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
    let correct = predictions.iter().zip(set).filter(|(p, x)| **p == x.label).count();
    let loss = logits.iter().zip(set).map(|(r, x)| cross_entropy(r, x.label)).sum::<f64>() / set.len() as f64;

    // Per record: votes per class, then summed logits to break ties.
    let mut files: BTreeMap<&str, (Vec<usize>, Vec<f64>, usize)> = BTreeMap::new();
    for ((x, p), r) in set.iter().zip(&predictions).zip(&logits) {
        let e = files.entry(&x.record).or_insert_with(|| (vec![0; r.len()], vec![0.0; r.len()], x.label));
        e.0[*p] += 1;
        for (s, v) in e.1.iter_mut().zip(r) {
            *s += *v as f64;
        }
    }
    let file_correct = files
        .values()
        .filter(|(votes, sums, label)| {
            let top = *votes.iter().max().unwrap();
            let tied: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] == top).collect();
            let winner = *tied.iter().max_by(|&&a, &&b| sums[a].total_cmp(&sums[b]).then(b.cmp(&a))).unwrap();
            winner == *label
        })
        .count();

    Ok(EvalResult {
        loss,
        accuracy: 100.0 * correct as f64 / set.len() as f64,
        file_accuracy: 100.0 * file_correct as f64 / files.len() as f64,
        predictions,
    })
}

/// Which noise, if any, is mixed into chunks before feature extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NoiseDraw {
    Clean,
    /// One fixed draw per chunk.
    Evaluation,
    /// A fresh draw per chunk and epoch.
    Training(u64),
}

pub(crate) fn featurize_chunks(
    chunks: &[AudioChunk],
    features: &FeatureConfig,
    pool: &NoisePool,
    policy: &NoisePolicy,
    draw: NoiseDraw,
) -> Result<Vec<LabeledFeatures>> {
    let sample_rate = chunks.first().map_or(features.sample_rate, |c| c.audio.sample_rate);
    let extractor = FeatureExtractor::new(&FeatureConfig { sample_rate, ..features.clone() })?;
    chunks
        .par_iter()
        .map(|c| {
            let count = policy.count_for(c.label);
            let audio = match draw {
                NoiseDraw::Clean => c.audio.clone(),
                _ if count == 0 => c.audio.clone(),
                NoiseDraw::Evaluation => inject_noise(&c.audio, pool, count, policy.max_amplitude, &mut policy.evaluation_rng(&c.id))?,
                NoiseDraw::Training(epoch) => inject_noise(&c.audio, pool, count, policy.max_amplitude, &mut policy.training_rng(&c.id, epoch))?,
            };
            let mut feat = extractor.extract(&audio)?;
            feat.source = c.id.clone();
            Ok(LabeledFeatures { id: c.id.clone(), record: c.record.clone(), label: c.label.index(), feat })
        })
        .collect()
}

/// Accuracy of `params` on audio chunks, with or without the fixed
/// evaluation noise draw.
pub fn evaluate_chunks(params: &ParamStore<f32>, cfg: &RunConfig, chunks: &[AudioChunk], pool: &NoisePool, with_noise: bool) -> Result<EvalResult> {
    let draw = if with_noise { NoiseDraw::Evaluation } else { NoiseDraw::Clean };
    let set = featurize_chunks(chunks, &cfg.features, pool, &cfg.noise, draw)?;
    evaluate(params, &cfg.model, &set, cfg.batch_size)
}
