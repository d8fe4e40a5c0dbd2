//! Self-supervised pretraining by reconstructing altered feature matrices.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{reconstruction_step, OptimizerState, Result, RunConfig, TrainError};
use crate::alter::{compose_alterations, AlterationOutcome};
use crate::audio::FeatureMatrix;
use crate::model::{init_params, HeadInit};
use crate::rng::{derive_seed, hash_str, stream};
use crate::tensor::ParamStore;

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ParamStore<f32>,
    /// Mean step loss per epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

/// Pretrains from `init`, or from a fresh initialization derived from
/// `seed`, for `cfg.pretrain_epochs` passes over `corpus`. Each example gets
/// a fresh alteration every epoch.
pub fn pretrain(init: Option<&ParamStore<f32>>, corpus: &[FeatureMatrix], cfg: &RunConfig, seed: u64) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut params = match init {
        Some(p) => p.clone(),
        None => init_params(&cfg.model, seed, HeadInit::Xavier)?,
    };
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let mut epoch_losses = Vec::with_capacity(cfg.pretrain_epochs);
    let mut step_losses = Vec::new();

    for epoch in 0..cfg.pretrain_epochs as u64 {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut stream(seed, "pretrain-shuffle", &[epoch]));
        let altered: Vec<AlterationOutcome> = corpus
            .par_iter()
            .enumerate()
            .map(|(i, feat)| compose_alterations(feat, &cfg.alterations, &mut stream(seed, "alter", &[epoch, i as u64])))
            .collect::<Result<_, _>>()?;

        let mut sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&AlterationOutcome> = idx.iter().map(|&i| &altered[i]).collect();
            let dropout = derive_seed(seed, &[hash_str("pretrain-dropout"), epoch, b as u64]);
            let out = reconstruction_step(&params, &cfg.model, &batch, cfg.loss_support, cfg.shard_size, Some(dropout))?;
            opt.step(&mut params, &out.grads)?;
            step_losses.push(out.loss);
            sum += out.loss * batch.len() as f64;
        }
        epoch_losses.push(sum / corpus.len() as f64);
    }
    Ok(PretrainOutcome { params, epoch_losses, steps: step_losses.len(), step_losses })
}
