use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::service::{FeedbackService, RunStatus};
use super::state::{
    append_metrics, load_metrics, truncate_metrics, MetricsRow, Phase, RunCheckpoint, RunState,
    CONFIG_FILE, RUN_FORMAT_VERSION,
};
use super::{FeedbackSource, RunConfig};
use crate::autodiff::AdamState;
use crate::ddpo::{ddpo_update, normalize_advantages};
use crate::diffusion::{
    sample_trajectories, write_json_atomic, Denoiser, ModelCheckpoint, NoiseSchedule,
    SamplerConfig,
};
use crate::error::{HeroError, Result};
use crate::feedback::{
    await_feedback, load_feedback, log_feedback, success_rate, FeedbackLogEntry,
    FeedbackProvider, OracleProvider, PendingBatch, FEEDBACK_FILE,
};
use crate::noise_refine::{pi_hero_sample, PiHeroState};
use crate::representation::{
    rewards_binary, rewards_noembed, rewards_similarity_to_best, rewards_similarity_to_positives,
    FeedbackEmbedding, RewardVariant, TripletBatch,
};

/// Random stream used for one-off initialisation.
pub(crate) const STREAM_INIT: u64 = u64::MAX;
pub(crate) const STREAM_GENERATE: u64 = u64::MAX - 1;
pub(crate) const STREAM_EVAL: u64 = u64::MAX - 2;
pub(crate) const STREAM_PRETRAIN: u64 = u64::MAX - 3;

/// Independent generator per `(seed, stream)`; epoch `e` uses stream `e`, so a
/// resumed run draws the same numbers as an uninterrupted one.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn standard_normal_rows<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Clean samples from `net`, starting from the refined prior when given and
/// the standard normal otherwise.
pub fn generate_samples<R: Rng + ?Sized>(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    prior: Option<&PiHeroState>,
    condition: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let z_init = match prior {
        Some(p) => pi_hero_sample(p, n, rng)?,
        None => standard_normal_rows(n, net.config.dim, rng),
    };
    let trajs = sample_trajectories(net, schedule, &z_init, &vec![condition; n], sampler, rng)?;
    Ok(trajs.iter().map(|t| t.z0().to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub state: RunState,
    pub metrics: Vec<MetricsRow>,
    /// Oracle success on fresh samples from the final model, oracle runs only.
    pub final_success: Option<f64>,
}

struct Session {
    net: Denoiser,
    schedule: NoiseSchedule,
    embedding: FeedbackEmbedding,
    embedding_adam: AdamState,
    ddpo_adam: AdamState,
    state: RunState,
}

fn load_base(config: &RunConfig) -> Result<(Denoiser, NoiseSchedule)> {
    let path = &config.base_checkpoint;
    if !path.exists() {
        return Err(HeroError::Checkpoint(format!(
            "base checkpoint {} not found; run `pretrain` first",
            path.display()
        )));
    }
    let ck = ModelCheckpoint::load(path)?;
    if ck.denoiser.dim != config.dataset.dim() {
        return Err(HeroError::Checkpoint(format!(
            "base checkpoint has dimension {}, config dataset has {}",
            ck.denoiser.dim,
            config.dataset.dim()
        )));
    }
    ck.to_model()
}

fn truncate_feedback(config: &RunConfig, epochs: usize) -> Result<()> {
    let entries = load_feedback(&config.run_dir)?;
    if entries.len() <= epochs {
        return Ok(());
    }
    warn!(
        "dropping {} feedback entries written after the last checkpoint",
        entries.len() - epochs
    );
    std::fs::remove_file(config.run_dir.join(FEEDBACK_FILE))?;
    for e in &entries[..epochs] {
        log_feedback(e, &config.run_dir)?;
    }
    Ok(())
}

fn open_session(config: &RunConfig) -> Result<Session> {
    let mut init_rng = rng_for(config.seed, STREAM_INIT);
    let session = if RunCheckpoint::exists(&config.run_dir) {
        let ck = RunCheckpoint::load(&config.run_dir)?;
        let (mut net, schedule) = ck.model.to_model()?;
        net.attach_adapters(&mut init_rng);
        let mut state = ck.state;
        state.phase = if state.wants_epoch(config) {
            Phase::Sampling
        } else {
            Phase::Done
        };
        info!("resuming {} at epoch {}", config.run_dir.display(), state.epoch);
        Session {
            net,
            schedule,
            embedding: ck.embedding,
            embedding_adam: ck.embedding_adam,
            ddpo_adam: ck.ddpo_adam,
            state,
        }
    } else {
        let (mut net, schedule) = load_base(config)?;
        net.attach_adapters(&mut init_rng);
        let embedding =
            FeedbackEmbedding::new(config.dataset.dim(), config.embedding.clone(), &mut init_rng);
        Session {
            net,
            schedule,
            embedding_adam: embedding.optimizer(),
            embedding,
            ddpo_adam: config.ddpo.optimizer(),
            state: RunState::new(config)?,
        }
    };
    truncate_feedback(config, session.state.epoch)?;
    truncate_metrics(&config.run_dir, session.state.epoch)?;
    Ok(session)
}

fn save_session(config: &RunConfig, s: &Session) -> Result<()> {
    let model = ModelCheckpoint::from_model(
        &s.net,
        &s.schedule,
        &config.dataset,
        config.seed,
        Vec::new(),
    );
    let mut embedding = s.embedding.clone();
    embedding.params = embedding.params.snapshot();
    RunCheckpoint {
        format_version: RUN_FORMAT_VERSION,
        config: config.clone(),
        state: s.state.clone(),
        model,
        embedding,
        embedding_adam: s.embedding_adam.clone(),
        ddpo_adam: s.ddpo_adam.clone(),
    }
    .save(&config.run_dir)
}

fn report(provider: &mut dyn FeedbackProvider, config: &RunConfig, state: &RunState) {
    provider.report(&RunStatus::new(state, config));
}

fn set_phase(provider: &mut dyn FeedbackProvider, config: &RunConfig, state: &mut RunState, phase: Phase) {
    state.phase = phase;
    report(provider, config, state);
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One epoch: sample, collect feedback, update the embedding, the adapters
/// and the refined prior, then persist.
fn run_epoch(
    config: &RunConfig,
    s: &mut Session,
    provider: &mut dyn FeedbackProvider,
) -> Result<()> {
    let epoch = s.state.epoch;
    let n = config.batch;
    let mut rng = rng_for(config.seed, epoch as u64);

    set_phase(provider, config, &mut s.state, Phase::Sampling);
    let z_init = if config.prior.refined {
        pi_hero_sample(&s.state.prior, n, &mut rng)?
    } else {
        standard_normal_rows(n, config.dataset.dim(), &mut rng)
    };
    let cond = vec![config.condition; n];
    let trajs = sample_trajectories(&s.net, &s.schedule, &z_init, &cond, &config.sampler, &mut rng)?;
    let z0: Vec<Vec<f64>> = trajs.iter().map(|t| t.z0().to_vec()).collect();
    let pending = PendingBatch::new(epoch, z0.iter().cloned().enumerate().collect());

    set_phase(provider, config, &mut s.state, Phase::AwaitingFeedback);
    let ann = await_feedback(provider, &pending)?;
    if ann.epoch != epoch || ann.ids != pending.ids() {
        return Err(HeroError::InvalidArgument(format!(
            "annotation for epoch {} does not match the published batch of epoch {epoch}",
            ann.epoch
        )));
    }

    let mut row = MetricsRow {
        epoch,
        n_fb: s.state.n_fb + n,
        n_good: ann.good.len(),
        n_bad: ann.bad.len(),
        success_rate: ann.good_fraction(),
        ..MetricsRow::default()
    };
    match ann.best {
        None => {
            warn!("epoch {epoch}: no good samples, skipping the update");
            row.skipped = true;
        }
        Some(best) => {
            set_phase(provider, config, &mut s.state, Phase::TrainingEmbedding);
            let good_z0: Vec<Vec<f64>> = ann.good.iter().map(|&i| z0[i].clone()).collect();
            let bad_z0: Vec<Vec<f64>> = ann.bad.iter().map(|&i| z0[i].clone()).collect();
            let best_z0 = &z0[best];
            if config.reward.uses_embedding() && !bad_z0.is_empty() {
                let batch = TripletBatch {
                    anchor: best_z0.clone(),
                    positives: good_z0.clone(),
                    negatives: bad_z0,
                    margin: config.embedding.margin,
                };
                let hist = s.embedding.train(&batch, &mut s.embedding_adam, &mut rng)?;
                row.embedding_loss = mean(&hist);
            }
            let rewards = match config.reward {
                RewardVariant::Best => rewards_similarity_to_best(&s.embedding, &z0, best_z0)?,
                RewardVariant::Positives => {
                    rewards_similarity_to_positives(&s.embedding, &z0, &good_z0)?
                }
                RewardVariant::Binary => rewards_binary(&ann),
                RewardVariant::Noembed => rewards_noembed(&z0, &good_z0)?,
            };
            let adv = normalize_advantages(&rewards.values, config.ddpo.normalize_advantages)?;
            row.mean_reward = rewards.mean();
            row.mean_advantage = mean(&adv);

            set_phase(provider, config, &mut s.state, Phase::TrainingDdpo);
            let stats = ddpo_update(
                &mut s.net,
                &s.schedule,
                &config.sampler,
                &trajs,
                &adv,
                &config.ddpo,
                &mut s.ddpo_adam,
                &mut rng,
            )?;
            row.ddpo_loss = stats.loss;
            row.mean_ratio = stats.mean_ratio;
            row.clip_fraction = stats.clip_fraction;
        }
    }

    let entry = FeedbackLogEntry::new(&ann, &z_init, &z0)?;
    log_feedback(&entry, &config.run_dir)?;
    s.state.apply_feedback(&entry, config)?;
    append_metrics(&config.run_dir, &row)?;
    save_session(config, s)?;
    info!(
        "epoch {epoch}: success {:.3}, n_fb {}/{}",
        row.success_rate, s.state.n_fb, config.budget
    );
    report(provider, config, &s.state);
    Ok(())
}

/// Trains until the feedback budget is spent, taking verdicts from
/// `provider`. Resumes from the run directory's checkpoint when present.
pub fn hero_train_with(config: &RunConfig, provider: &mut dyn FeedbackProvider) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.run_dir)?;
    write_json_atomic(&config.run_dir.join(CONFIG_FILE), config)?;
    let mut session = open_session(config)?;
    report(provider, config, &session.state);
    while session.state.wants_epoch(config) {
        run_epoch(config, &mut session, provider)?;
    }
    session.state.phase = Phase::Done;
    report(provider, config, &session.state);

    let final_success = match config.oracle() {
        Some(oracle) if config.final_eval_samples > 0 => {
            let mut rng = rng_for(config.seed, STREAM_EVAL);
            let prior = config.prior.refined.then_some(&session.state.prior);
            let samples = generate_samples(
                &session.net,
                &session.schedule,
                &config.sampler,
                prior,
                config.condition,
                config.final_eval_samples,
                &mut rng,
            )?;
            Some(success_rate(&samples, oracle)?)
        }
        _ => None,
    };
    Ok(RunSummary {
        state: session.state,
        metrics: load_metrics(&config.run_dir)?,
        final_success,
    })
}

/// Trains with the feedback source named in the config; service mode
/// listens on localhost at the configured port.
pub fn hero_train(config: &RunConfig) -> Result<RunSummary> {
    match &config.feedback {
        FeedbackSource::Oracle { oracle } => {
            hero_train_with(config, &mut OracleProvider(oracle.clone()))
        }
        FeedbackSource::Service { port } => {
            let service = FeedbackService::start(&format!("127.0.0.1:{port}"))?;
            info!("feedback service listening on port {}", service.port());
            let mut provider = service.provider();
            let out = hero_train_with(config, &mut provider);
            service.shutdown();
            out
        }
    }
}
