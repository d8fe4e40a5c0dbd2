//! Run configuration, stored as versioned TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamConfig, Result, TrainError};
use crate::alter::AlterationConfigs;
use crate::audio::FeatureConfig;
use crate::augment::NoisePolicy;
use crate::data::WindowConfig;
use crate::model::{HeadInit, ModelConfig};

pub const RUN_CONFIG_VERSION: u32 = 1;

/// Positions that contribute to the reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSupport {
    /// Only altered positions; an empty mask gives a loss of zero.
    #[default]
    MaskedOnly,
    AllFrames,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(TrainError::Config(format!("unknown profile {other:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub seeds: Vec<u64>,
    pub finetune_epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    /// Examples per independently evaluated sub-batch. Gradients of the
    /// shards are combined in a fixed order, so results do not depend on
    /// the number of worker threads.
    pub shard_size: usize,
    pub loss_support: LossSupport,
    pub head_init: HeadInit,
    pub optimizer: AdamConfig,
    pub noise: NoisePolicy,
    pub window: WindowConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub alterations: AlterationConfigs,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// 512/3/2048 encoder, batch 16, 20 finetuning and 5 pretraining epochs,
    /// 10 seeds.
    pub fn paper() -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            seeds: (0..10).collect(),
            finetune_epochs: 20,
            pretrain_epochs: 5,
            batch_size: 16,
            shard_size: 4,
            loss_support: LossSupport::MaskedOnly,
            head_init: HeadInit::Xavier,
            optimizer: AdamConfig { base_lr: 7e-4, warmup_steps: 4000, ..AdamConfig::default() },
            noise: NoisePolicy::default(),
            window: WindowConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::paper(),
            alterations: AlterationConfigs::all(),
        }
    }

    /// The paper protocol with the reduced encoder and a short warmup.
    pub fn desk() -> Self {
        Self { model: ModelConfig::desk(), optimizer: AdamConfig { base_lr: 1e-3, warmup_steps: 200, ..AdamConfig::default() }, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(TrainError::Config(format!("unsupported run config version {}", self.version)));
        }
        if self.batch_size == 0 || self.shard_size == 0 {
            return Err(TrainError::Config("batch_size and shard_size must be at least 1".into()));
        }
        if self.finetune_epochs == 0 || self.pretrain_epochs == 0 {
            return Err(TrainError::Config("epoch counts must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::Config("at least one seed is required".into()));
        }
        if self.features.channels() != self.model.input_dim {
            return Err(TrainError::Config(format!(
                "feature channels {} do not match model input_dim {}",
                self.features.channels(),
                self.model.input_dim
            )));
        }
        self.optimizer.validate()?;
        self.noise.validate()?;
        self.features.validate()?;
        self.model.validate()?;
        self.alterations.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| TrainError::io(path, e))
    }

    /// First 16 hex digits of the SHA-256 of the TOML text.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
