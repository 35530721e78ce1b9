use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::autodiff::AdamState;
use crate::diffusion::{write_json_atomic, ModelCheckpoint};
use crate::error::{HeroError, Result};
use crate::feedback::{load_feedback, FeedbackLogEntry};
use crate::noise_refine::PiHeroState;
use crate::representation::FeedbackEmbedding;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sampling,
    AwaitingFeedback,
    TrainingEmbedding,
    TrainingDdpo,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Sampling => "sampling",
            Phase::AwaitingFeedback => "awaiting_feedback",
            Phase::TrainingEmbedding => "training_embedding",
            Phase::TrainingDdpo => "training_ddpo",
            Phase::Done => "done",
        }
    }
}

/// Progress of a run. `epoch` counts completed epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub epoch: usize,
    pub n_fb: usize,
    pub phase: Phase,
    /// Good fraction of each epoch's batch.
    pub success_history: Vec<f64>,
    pub prior: PiHeroState,
    pub base_checkpoint: PathBuf,
}

impl RunState {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            epoch: 0,
            n_fb: 0,
            phase: Phase::Sampling,
            success_history: Vec::new(),
            prior: PiHeroState::new(config.dataset.dim(), config.prior.beta, config.prior.eps0_sq)?,
            base_checkpoint: config.base_checkpoint.clone(),
        })
    }

    /// Whether another epoch fits into the budget and no early stop fired.
    pub fn wants_epoch(&self, config: &RunConfig) -> bool {
        if self.n_fb + config.batch > config.budget {
            return false;
        }
        match (config.stop_at_success, self.success_history.last()) {
            (Some(th), Some(&s)) => s < th,
            _ => true,
        }
    }

    /// Folds one logged epoch into the state, exactly as the training loop
    /// does.
    pub fn apply_feedback(&mut self, entry: &FeedbackLogEntry, config: &RunConfig) -> Result<()> {
        let ann = entry.annotation()?;
        self.epoch += 1;
        self.n_fb += entry.records.len();
        self.success_history.push(ann.good_fraction());
        let best = ann
            .best
            .and_then(|b| entry.record(b))
            .map(|r| r.z_init.clone());
        let goods: Vec<Vec<f64>> = entry
            .records
            .iter()
            .filter(|r| r.good && Some(r.id) != ann.best)
            .map(|r| r.z_init.clone())
            .collect();
        self.prior.update(goods, best);
        self.phase = if self.wants_epoch(config) {
            Phase::Sampling
        } else {
            Phase::Done
        };
        Ok(())
    }
}

/// Rebuilds the run state from the configuration and the feedback log.
pub fn replay_run_state(config: &RunConfig) -> Result<RunState> {
    let mut state = RunState::new(config)?;
    for entry in load_feedback(&config.run_dir)? {
        state.apply_feedback(&entry, config)?;
    }
    if state.epoch == 0 && !state.wants_epoch(config) {
        state.phase = Phase::Done;
    }
    Ok(state)
}

/// Everything needed to continue a run after its last completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub state: RunState,
    pub model: ModelCheckpoint,
    pub embedding: FeedbackEmbedding,
    pub embedding_adam: AdamState,
    pub ddpo_adam: AdamState,
}

impl RunCheckpoint {
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_json_atomic(&run_dir.join(CHECKPOINT_FILE), self)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(CHECKPOINT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            HeroError::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        let ck: RunCheckpoint = serde_json::from_str(&text)?;
        if ck.format_version != RUN_FORMAT_VERSION {
            return Err(HeroError::Checkpoint(format!(
                "unsupported run format version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn exists(run_dir: &Path) -> bool {
        run_dir.join(CHECKPOINT_FILE).exists()
    }
}

pub const METRICS_HEADER: &str = "epoch,n_fb,n_good,n_bad,success_rate,mean_reward,mean_advantage,ddpo_loss,mean_ratio,clip_fraction,embedding_loss,skipped";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub n_fb: usize,
    pub n_good: usize,
    pub n_bad: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_advantage: f64,
    pub ddpo_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub embedding_loss: f64,
    /// Set when the epoch had no good sample and no update ran.
    pub skipped: bool,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.n_fb,
            self.n_good,
            self.n_bad,
            self.success_rate,
            self.mean_reward,
            self.mean_advantage,
            self.ddpo_loss,
            self.mean_ratio,
            self.clip_fraction,
            self.embedding_loss,
            u8::from(self.skipped)
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(HeroError::InvalidArgument(format!(
                "metrics row has {} fields, expected 12",
                f.len()
            )));
        }
        let bad = |i: usize| HeroError::InvalidArgument(format!("metrics field {i} malformed: `{}`", f[i]));
        let u = |i: usize| f[i].parse::<usize>().map_err(|_| bad(i));
        let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad(i));
        Ok(Self {
            epoch: u(0)?,
            n_fb: u(1)?,
            n_good: u(2)?,
            n_bad: u(3)?,
            success_rate: x(4)?,
            mean_reward: x(5)?,
            mean_advantage: x(6)?,
            ddpo_loss: x(7)?,
            mean_ratio: x(8)?,
            clip_fraction: x(9)?,
            embedding_loss: x(10)?,
            skipped: match f[11] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(11)),
            },
        })
    }
}

pub fn append_metrics(run_dir: &Path, row: &MetricsRow) -> Result<()> {
    let path = run_dir.join(METRICS_FILE);
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    writeln!(f, "{}", row.to_csv())?;
    Ok(())
}

/// Rows of `metrics.csv`; a missing file has none.
pub fn load_metrics(run_dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = run_dir.join(METRICS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        None => return Ok(Vec::new()),
        Some(h) => {
            return Err(HeroError::InvalidArgument(format!("unexpected metrics header `{h}`")))
        }
    }
    lines.map(MetricsRow::from_csv).collect()
}

/// Keeps the first `rows` data rows, discarding any written after the last
/// checkpoint.
pub(crate) fn truncate_metrics(run_dir: &Path, rows: usize) -> Result<()> {
    let path = run_dir.join(METRICS_FILE);
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&path)?;
    let kept: Vec<&str> = text.lines().take(rows + 1).collect();
    std::fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}
