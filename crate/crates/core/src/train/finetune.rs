//! Supervised finetuning repeated over seeds.
//!
//! All seeds advance epoch by epoch together so the noisy training
//! features of an epoch are computed once and shared, and seeds train in
//! parallel within an epoch. Every seed still has
//! its own initialization, shuffling and dropout streams, so its result
//! does not depend on which other seeds run alongside it.

use std::borrow::Cow;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::eval::{featurize_chunks, NoiseDraw};
use super::{classification_step, evaluate, EpochStats, LabeledFeatures, OptimizerState, Result, RunConfig, RunReport, SeedResult, TrainError};
use crate::augment::NoisePool;
use crate::data::{load_chunks, AudioChunk, Label, Manifest, Split};
use crate::model::{init_params, reset_classifier};
use crate::rng::{derive_seed, hash_str, stream};
use crate::tensor::ParamStore;

/// Training features, either fixed or re-noised every epoch.
#[derive(Clone, Debug)]
pub enum TrainFeatures {
    Fixed(Vec<LabeledFeatures>),
    Noisy { chunks: Vec<AudioChunk>, pool: NoisePool },
}

impl TrainFeatures {
    fn for_epoch(&self, cfg: &RunConfig, epoch: usize) -> Result<Cow<'_, [LabeledFeatures]>> {
        match self {
            Self::Fixed(v) => Ok(Cow::Borrowed(v)),
            Self::Noisy { chunks, pool } => Ok(Cow::Owned(featurize_chunks(chunks, &cfg.features, pool, &cfg.noise, NoiseDraw::Training(epoch as u64))?)),
        }
    }

    fn labels(&self) -> Vec<usize> {
        match self {
            Self::Fixed(v) => v.iter().map(|x| x.label).collect(),
            Self::Noisy { chunks, .. } => chunks.iter().map(|c| c.label.index()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneSet {
    pub train: TrainFeatures,
    pub validation: Vec<LabeledFeatures>,
    pub test_with_noise: Vec<LabeledFeatures>,
    pub test_without_noise: Vec<LabeledFeatures>,
}

impl FinetuneSet {
    /// Noise-free features; both test columns see the same data.
    pub fn from_features(train: Vec<LabeledFeatures>, validation: Vec<LabeledFeatures>, test: Vec<LabeledFeatures>) -> Self {
        Self { train: TrainFeatures::Fixed(train), validation, test_with_noise: test.clone(), test_without_noise: test }
    }

    /// Training chunks get fresh noise every epoch; validation and the noisy
    /// test column get one fixed draw per chunk.
    pub fn from_chunks(train: Vec<AudioChunk>, validation: &[AudioChunk], test: &[AudioChunk], pool: NoisePool, cfg: &RunConfig) -> Result<Self> {
        let feats = |chunks: &[AudioChunk], draw| featurize_chunks(chunks, &cfg.features, &pool, &cfg.noise, draw);
        let validation = feats(validation, NoiseDraw::Evaluation)?;
        let test_with_noise = feats(test, NoiseDraw::Evaluation)?;
        let test_without_noise = feats(test, NoiseDraw::Clean)?;
        let train = if cfg.noise.is_active() {
            TrainFeatures::Noisy { chunks: train, pool }
        } else {
            TrainFeatures::Fixed(feats(&train, NoiseDraw::Clean)?)
        };
        Ok(Self { train, validation, test_with_noise, test_without_noise })
    }

    pub fn from_manifest(manifest: &Manifest, pool: NoisePool, cfg: &RunConfig) -> Result<Self> {
        let train = load_chunks(manifest, Split::Train, &cfg.window)?;
        let validation = load_chunks(manifest, Split::Validation, &cfg.window)?;
        let test = load_chunks(manifest, Split::Test, &cfg.window)?;
        Self::from_chunks(train, &validation, &test, pool, cfg)
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub report: RunReport,
    /// Selected parameters per seed, in seed order.
    pub params: Vec<ParamStore<f32>>,
}

struct SeedRun {
    seed: u64,
    params: ParamStore<f32>,
    opt: OptimizerState,
    best: Option<(usize, f64, f64, ParamStore<f32>)>,
    curve: Vec<EpochStats>,
}

/// Trains one classifier per seed, keeps each seed's best-validation-
/// accuracy epoch (lower validation loss breaks ties) and scores it on the
/// test set with and without noise.
pub fn finetune(init: Option<&ParamStore<f32>>, set: &FinetuneSet, cfg: &RunConfig) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let labels = set.train.labels();
    if labels.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for class in 0..cfg.model.n_classes {
        if !labels.contains(&class) {
            let label = Label::from_index(class).ok_or_else(|| TrainError::Config(format!("class {class} has no training examples")))?;
            return Err(TrainError::MissingClass(label));
        }
    }
    if set.validation.is_empty() || set.test_without_noise.is_empty() {
        return Err(TrainError::Config("validation and test splits must be nonempty".into()));
    }

    let mut runs = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let params = match init {
                Some(p) => {
                    let mut p = p.clone();
                    reset_classifier(&mut p, &cfg.model, seed, cfg.head_init);
                    p
                }
                None => init_params(&cfg.model, seed, cfg.head_init)?,
            };
            Ok(SeedRun { seed, params, opt: OptimizerState::new(cfg.optimizer.clone()), best: None, curve: Vec::new() })
        })
        .collect::<Result<Vec<_>>>()?;

    for epoch in 0..cfg.finetune_epochs {
        let train = set.train.for_epoch(cfg, epoch)?;
        runs.par_iter_mut().try_for_each(|run| -> Result<()> {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut stream(run.seed, "shuffle", &[epoch as u64]));
            let mut loss_sum = 0.0;
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<&LabeledFeatures> = idx.iter().map(|&i| &train[i]).collect();
                let dropout = derive_seed(run.seed, &[hash_str("dropout"), epoch as u64, b as u64]);
                let out = classification_step(&run.params, &cfg.model, &batch, cfg.shard_size, Some(dropout))?;
                run.opt.step(&mut run.params, &out.grads)?;
                loss_sum += out.loss * batch.len() as f64;
            }
            let val = evaluate(&run.params, &cfg.model, &set.validation, cfg.batch_size)?;
            run.curve.push(EpochStats { epoch: epoch + 1, train_loss: loss_sum / train.len() as f64, val_loss: val.loss, val_acc: val.accuracy });
            let better = match &run.best {
                None => true,
                Some((_, acc, loss, _)) => val.accuracy > *acc || (val.accuracy == *acc && val.loss < *loss),
            };
            if better {
                run.best = Some((epoch + 1, val.accuracy, val.loss, run.params.clone()));
            }
            Ok(())
        })?;
    }

    let mut seeds = Vec::with_capacity(runs.len());
    let mut params = Vec::with_capacity(runs.len());
    for run in runs {
        let (best_epoch, _, _, best) = run.best.expect("at least one epoch ran");
        let noisy = evaluate(&best, &cfg.model, &set.test_with_noise, cfg.batch_size)?;
        let clean = evaluate(&best, &cfg.model, &set.test_without_noise, cfg.batch_size)?;
        seeds.push(SeedResult {
            seed: run.seed,
            acc_with_noise: noisy.accuracy,
            acc_without_noise: clean.accuracy,
            file_acc_with_noise: noisy.file_accuracy,
            file_acc_without_noise: clean.file_accuracy,
            best_epoch,
            curve: run.curve,
        });
        params.push(best);
    }
    Ok(FinetuneOutcome { report: RunReport { fingerprint: cfg.fingerprint(), seeds }, params })
}
