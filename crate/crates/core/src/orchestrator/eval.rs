use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::RunCheckpoint;
use super::train::{generate_samples, rng_for, STREAM_EVAL, STREAM_GENERATE};
use crate::diffusion::{write_json_atomic, Denoiser, ModelCheckpoint, NoiseSchedule, SamplerConfig};
use crate::error::{HeroError, Result};
use crate::feedback::{success_rate, OracleSpec};
use crate::noise_refine::PiHeroState;

/// Name of the model file `pretrain` writes into its output directory.
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesFile {
    pub refined_prior: bool,
    pub seed: u64,
    pub samples: Vec<Vec<f64>>,
}

/// Model and sampling setup for a directory holding either a training run
/// or a pretrained model.
pub struct LoadedModel {
    pub net: Denoiser,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub prior: Option<PiHeroState>,
    pub condition: usize,
    pub seed: u64,
    pub source: &'static str,
}

pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    if RunCheckpoint::exists(dir) {
        let ck = RunCheckpoint::load(dir)?;
        let (net, schedule) = ck.model.to_model()?;
        return Ok(LoadedModel {
            net,
            schedule,
            sampler: ck.config.sampler,
            prior: Some(ck.state.prior),
            condition: ck.config.condition,
            seed: ck.config.seed,
            source: "run",
        });
    }
    let path = if dir.is_file() { dir.to_path_buf() } else { dir.join(MODEL_FILE) };
    if !path.exists() {
        return Err(HeroError::Checkpoint(format!(
            "no run checkpoint or model found at {}",
            dir.display()
        )));
    }
    let ck = ModelCheckpoint::load(&path)?;
    let (net, schedule) = ck.to_model()?;
    Ok(LoadedModel {
        net,
        schedule,
        sampler: SamplerConfig::default(),
        prior: None,
        condition: 0,
        seed: ck.seed,
        source: "base",
    })
}

pub fn samples_path(run_dir: &Path, refined: bool) -> PathBuf {
    run_dir.join(if refined { "samples.json" } else { "samples-standard-prior.json" })
}

/// Samples `n` outputs from a finished run, from its refined prior or (for
/// comparison) the standard one, and writes them next to the checkpoint.
pub fn generate_final(run_dir: &Path, n: usize, use_refined_prior: bool) -> Result<(PathBuf, SamplesFile)> {
    if !RunCheckpoint::exists(run_dir) {
        return Err(HeroError::Checkpoint(format!(
            "no run checkpoint in {}",
            run_dir.display()
        )));
    }
    let m = load_model(run_dir)?;
    let mut rng = rng_for(m.seed, STREAM_GENERATE);
    let prior = if use_refined_prior { m.prior.as_ref() } else { None };
    let samples = generate_samples(&m.net, &m.schedule, &m.sampler, prior, m.condition, n, &mut rng)?;
    let file = SamplesFile {
        refined_prior: use_refined_prior,
        seed: m.seed,
        samples,
    };
    let path = samples_path(run_dir, use_refined_prior);
    write_json_atomic(&path, &file)?;
    Ok((path, file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `run` or `base`.
    pub source: String,
    pub oracle: OracleSpec,
    pub n: usize,
    pub success_rate: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub std_error: f64,
}

pub fn binomial_std_error(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Generates `n` fresh samples (refined prior for a run, standard prior for
/// a base model) and scores them with `oracle`.
pub fn evaluate(dir: &Path, oracle: &OracleSpec, n: usize) -> Result<EvalReport> {
    if n == 0 {
        return Err(HeroError::Empty("evaluation sample count"));
    }
    let m = load_model(dir)?;
    let mut rng = rng_for(m.seed, STREAM_EVAL);
    let samples = generate_samples(&m.net, &m.schedule, &m.sampler, m.prior.as_ref(), m.condition, n, &mut rng)?;
    let p = success_rate(&samples, oracle)?;
    Ok(EvalReport {
        source: m.source.to_string(),
        oracle: oracle.clone(),
        n,
        success_rate: p,
        std_error: binomial_std_error(p, n),
    })
}
