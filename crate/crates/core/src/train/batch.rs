//! Loss and gradient of one batch, evaluated as fixed-size shards.

use rayon::prelude::*;

use super::{LossSupport, Result};
use crate::alter::AlterationOutcome;
use crate::audio::FeatureMatrix;
use crate::model::{batch_tensor, classify, encode, reconstruct, ModelConfig, Mode};
use crate::rng::derive_seed;
use crate::tensor::{Gradients, Graph, ParamStore};

/// A feature matrix with its class index and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    /// Chunk id, `<record>#<k>`.
    pub id: String,
    pub record: String,
    pub label: usize,
    pub feat: FeatureMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: Gradients<f32>,
}

fn shard_mode(dropout_seed: Option<u64>, shard: usize) -> Mode {
    Mode { dropout_seed: dropout_seed.map(|s| derive_seed(s, &[shard as u64])) }
}

/// Combines per-shard `(loss, grads, weight)` in shard order, normalizing
/// the weights to sum to one. All-zero weights give a zero loss and
/// all-zero gradients.
fn reduce(parts: Vec<(f64, Gradients<f32>, f64)>) -> StepOutput {
    let total: f64 = parts.iter().map(|p| p.2).sum();
    let mut grads = Gradients::default();
    let mut loss = 0.0;
    for (l, g, w) in parts {
        let w = if total > 0.0 { w / total } else { 0.0 };
        loss += w * l;
        grads.accumulate(&g, w as f32);
    }
    StepOutput { loss, grads }
}

/// Mean cross-entropy of the batch and its gradient.
pub fn classification_step(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    batch: &[&LabeledFeatures],
    shard_size: usize,
    dropout_seed: Option<u64>,
) -> Result<StepOutput> {
    let parts = batch
        .par_chunks(shard_size.max(1))
        .enumerate()
        .map(|(s, shard)| {
            let (t, h) = (shard[0].feat.frames, shard[0].feat.channels);
            let rows: Vec<&[f64]> = shard.iter().map(|x| x.feat.values.as_slice()).collect();
            let labels: Vec<usize> = shard.iter().map(|x| x.label).collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor(t, h, &rows)?)?;
            let enc = encode(&mut g, params, cfg, x, shard_mode(dropout_seed, s))?;
            let logits = classify(&mut g, params, enc)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).item() as f64;
            let grads = g.backward(loss)?;
            Ok((value, grads, shard.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(parts))
}

/// Mean absolute reconstruction error over the loss support of the whole
/// batch, and its gradient.
pub fn reconstruction_step(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    batch: &[&AlterationOutcome],
    support: LossSupport,
    shard_size: usize,
    dropout_seed: Option<u64>,
) -> Result<StepOutput> {
    let parts = batch
        .par_chunks(shard_size.max(1))
        .enumerate()
        .map(|(s, shard)| {
            let (t, h) = (shard[0].target.frames, shard[0].target.channels);
            let inputs: Vec<&[f64]> = shard.iter().map(|o| o.altered.values.as_slice()).collect();
            let targets: Vec<&[f64]> = shard.iter().map(|o| o.target.values.as_slice()).collect();
            let mask: Vec<bool> = match support {
                LossSupport::MaskedOnly => shard.iter().flat_map(|o| o.mask.iter().copied()).collect(),
                LossSupport::AllFrames => vec![true; shard.len() * t * h],
            };
            let count = mask.iter().filter(|m| **m).count();
            let mut g = Graph::new();
            let x = g.input(batch_tensor(t, h, &inputs)?)?;
            let y = g.input(batch_tensor(t, h, &targets)?)?;
            let enc = encode(&mut g, params, cfg, x, shard_mode(dropout_seed, s))?;
            let rec = reconstruct(&mut g, params, enc)?;
            let loss = g.l1_loss(rec, y, &mask)?;
            let value = g.value(loss).item() as f64;
            let grads = g.backward(loss)?;
            Ok((value, grads, count as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(parts))
}
