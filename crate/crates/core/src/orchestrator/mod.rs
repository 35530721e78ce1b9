//! The outer training loop and everything around it: configuration, run
//! persistence, the feedback service, generation, evaluation and ablations.
//!
//! A run directory holds `config.json`, `checkpoint.json` (rewritten after
//! every epoch), `metrics.csv` and `feedback.jsonl`.

mod ablate;
mod config;
mod eval;
mod service;
mod state;
mod train;

pub use ablate::{ablate, epochs_to_reach, run_dir_for, AblationCell, AblationGrid, AblationReport, AblationRun};
pub use config::{FeedbackSource, PriorConfig, RunConfig};
pub use eval::{
    binomial_std_error, evaluate, generate_final, load_model, samples_path, EvalReport, LoadedModel,
    SamplesFile, MODEL_FILE,
};
pub use service::{
    BatchView, FeedbackService, FeedbackSubmission, LabelSubmission, RunStatus, ServiceProvider,
};
pub use state::{
    append_metrics, load_metrics, replay_run_state, MetricsRow, Phase, RunCheckpoint, RunState,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, METRICS_HEADER,
};
pub use train::{generate_samples, hero_train, hero_train_with, RunSummary};

use std::path::Path;

use crate::diffusion::{pretrain, Denoiser, ModelCheckpoint, NoiseSchedule};
use crate::error::Result;

/// Pretrains a base denoiser on the configured dataset and writes
/// `out_dir/model.json`.
pub fn pretrain_base(config: &RunConfig, out_dir: &Path) -> Result<ModelCheckpoint> {
    let mut rng = train::rng_for(config.seed, train::STREAM_PRETRAIN);
    let schedule = NoiseSchedule::from_params(config.schedule)?;
    let data = config.dataset.generate(config.pretrain_samples, &mut rng);
    let mut net = Denoiser::new(config.denoiser_config(), &mut rng);
    let history = pretrain(&mut net, &schedule, &data, &config.pretrain, &mut rng)?;
    let ck = ModelCheckpoint::from_model(&net, &schedule, &config.dataset, config.seed, history);
    std::fs::create_dir_all(out_dir)?;
    ck.save(&out_dir.join(MODEL_FILE))?;
    Ok(ck)
}
