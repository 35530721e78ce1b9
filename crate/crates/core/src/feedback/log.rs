use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BatchAnnotation;
use crate::error::{HeroError, Result};

pub const FEEDBACK_FILE: &str = "feedback.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub good: bool,
    pub z_init: Vec<f64>,
    pub z0: Vec<f64>,
}

/// One line of `feedback.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLogEntry {
    pub epoch: usize,
    pub records: Vec<SampleRecord>,
    pub best_id: Option<usize>,
    pub annotator: String,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl FeedbackLogEntry {
    pub fn new(
        annotation: &BatchAnnotation,
        z_init: &[Vec<f64>],
        z0: &[Vec<f64>],
    ) -> Result<Self> {
        if z_init.len() != annotation.ids.len() || z0.len() != annotation.ids.len() {
            return Err(HeroError::InvalidArgument(
                "one z_init and z0 per annotated id required".into(),
            ));
        }
        let records = annotation
            .ids
            .iter()
            .enumerate()
            .map(|(k, &id)| SampleRecord {
                id,
                good: annotation.is_good(id),
                z_init: z_init[k].clone(),
                z0: z0[k].clone(),
            })
            .collect();
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Ok(Self {
            epoch: annotation.epoch,
            records,
            best_id: annotation.best,
            annotator: annotation.annotator.clone(),
            timestamp,
        })
    }

    pub fn annotation(&self) -> Result<BatchAnnotation> {
        let ids: Vec<usize> = self.records.iter().map(|r| r.id).collect();
        let labels: Vec<(usize, bool)> = self.records.iter().map(|r| (r.id, r.good)).collect();
        BatchAnnotation::from_labels(self.epoch, &ids, &labels, self.best_id, self.annotator.clone())
    }

    pub fn record(&self, id: usize) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Appends one entry as a JSON line.
pub fn log_feedback(entry: &FeedbackLogEntry, run_dir: &Path) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(FEEDBACK_FILE))?;
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Entries in append order. A missing or empty log yields no entries.
pub fn load_feedback(run_dir: &Path) -> Result<Vec<FeedbackLogEntry>> {
    let path = run_dir.join(FEEDBACK_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HeroError::CorruptLog {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
