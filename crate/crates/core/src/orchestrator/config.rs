use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddpo::DdpoConfig;
use crate::diffusion::{DatasetSpec, DenoiserConfig, PretrainConfig, SamplerConfig, ScheduleParams};
use crate::error::{HeroError, Result};
use crate::feedback::OracleSpec;
use crate::representation::{EmbeddingConfig, RewardVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Probability mass on the best noise.
    pub beta: f64,
    /// Component variance.
    pub eps0_sq: f64,
    /// When false every epoch samples from the standard normal prior.
    pub refined: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            eps0_sq: 0.1,
            refined: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "source")]
pub enum FeedbackSource {
    Oracle { oracle: OracleSpec },
    Service { port: u16 },
}

impl Default for FeedbackSource {
    fn default() -> Self {
        FeedbackSource::Oracle {
            oracle: OracleSpec::mode(0),
        }
    }
}

/// One JSON document drives pretraining, training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub schedule: ScheduleParams,
    pub hidden: Vec<usize>,
    pub adapter_rank: usize,
    pub pretrain: PretrainConfig,
    /// Samples drawn from the dataset for pretraining.
    pub pretrain_samples: usize,
    pub sampler: SamplerConfig,
    pub embedding: EmbeddingConfig,
    pub ddpo: DdpoConfig,
    pub prior: PriorConfig,
    pub reward: RewardVariant,
    pub feedback: FeedbackSource,
    /// Total annotations allowed (`N_fb`).
    pub budget: usize,
    /// Samples per epoch (`n_batch`).
    pub batch: usize,
    /// Condition label used for every trajectory.
    pub condition: usize,
    pub seed: u64,
    /// Pretrained model written by `pretrain`.
    pub base_checkpoint: PathBuf,
    pub run_dir: PathBuf,
    /// Stop early once an epoch's good fraction reaches this value.
    pub stop_at_success: Option<f64>,
    /// Samples generated after training to measure final success.
    pub final_eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            schedule: ScheduleParams::default(),
            hidden: vec![128, 128],
            adapter_rank: 4,
            pretrain: PretrainConfig::default(),
            pretrain_samples: 8192,
            sampler: SamplerConfig::default(),
            embedding: EmbeddingConfig::default(),
            ddpo: DdpoConfig::default(),
            prior: PriorConfig::default(),
            reward: RewardVariant::Best,
            feedback: FeedbackSource::default(),
            budget: 512,
            batch: 64,
            condition: 0,
            seed: 0,
            base_checkpoint: PathBuf::from("base/model.json"),
            run_dir: PathBuf::from("run"),
            stop_at_success: None,
            final_eval_samples: 64,
        }
    }
}

impl RunConfig {
    /// 9 epochs of 128 annotations.
    pub fn large() -> Self {
        Self {
            budget: 1152,
            batch: 128,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "large" => Ok(Self::large()),
            _ => Err(HeroError::InvalidArgument(format!("unknown preset `{name}`"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(HeroError::InvalidArgument(format!(
                "batch size {} must be at least 2",
                self.batch
            )));
        }
        if self.budget < self.batch {
            return Err(HeroError::InvalidArgument(format!(
                "feedback budget {} is smaller than one batch of {}",
                self.budget, self.batch
            )));
        }
        if self.condition >= self.dataset.n_conditions() {
            return Err(HeroError::InvalidArgument(format!(
                "condition {} not defined for {}",
                self.condition,
                self.dataset.name()
            )));
        }
        if !(0.0..=1.0).contains(&self.prior.beta) {
            return Err(HeroError::InvalidArgument(format!(
                "beta {} not in [0, 1]",
                self.prior.beta
            )));
        }
        self.ddpo.validate()
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            hidden: self.hidden.clone(),
            adapter_rank: self.adapter_rank,
            ..DenoiserConfig::new(self.dataset.dim(), self.dataset.n_conditions())
        }
    }

    /// Number of epochs a full run takes.
    pub fn epochs(&self) -> usize {
        self.budget / self.batch
    }

    pub fn oracle(&self) -> Option<&OracleSpec> {
        match &self.feedback {
            FeedbackSource::Oracle { oracle } => Some(oracle),
            FeedbackSource::Service { .. } => None,
        }
    }
}
