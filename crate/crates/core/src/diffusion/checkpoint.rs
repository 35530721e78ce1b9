use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSpec, Denoiser, DenoiserConfig, NoiseSchedule, ScheduleParams};
use crate::autodiff::{FlatParam, ParamStore};
use crate::error::{HeroError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Versioned JSON document holding a denoiser, its schedule and the
/// dataset it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserConfig,
    pub params: BTreeMap<String, FlatParam>,
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

impl ModelCheckpoint {
    pub fn from_model(
        net: &Denoiser,
        schedule: &NoiseSchedule,
        dataset: &DatasetSpec,
        seed: u64,
        loss_history: Vec<f64>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            schedule: schedule.params(),
            denoiser: net.config.clone(),
            params: net.params.to_flat(),
            seed,
            dataset: dataset.clone(),
            loss_history,
        }
    }

    pub fn to_model(&self) -> Result<(Denoiser, NoiseSchedule)> {
        let schedule = NoiseSchedule::from_params(self.schedule)?;
        let params = ParamStore::from_flat(&self.params)?;
        Ok((
            Denoiser {
                config: self.denoiser.clone(),
                params,
            },
            schedule,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HeroError::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        let ck: ModelCheckpoint = serde_json::from_str(&text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(HeroError::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

/// Writes JSON via a sibling temp file and rename.
pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(value)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
