//! Annotations, scripted oracles, the feedback log, and the hand-off from
//! whichever source (oracle or live evaluator) produces verdicts.

mod annotation;
mod log;
mod oracle;

pub use annotation::BatchAnnotation;
pub use log::{load_feedback, log_feedback, FeedbackLogEntry, SampleRecord, FEEDBACK_FILE};
pub use oracle::{oracle_annotate, success_rate, OracleSpec};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Points2d,
    Gray8x8,
}

/// Wire form of one sample shown to the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedSample {
    pub id: usize,
    pub kind: SampleKind,
    pub data: Vec<f64>,
}

/// Converts a clean sample to its display form: 2-D points verbatim, 8x8
/// images as 64 intensities in `[0, 1]`.
pub fn render_sample(id: usize, z0: &[f64]) -> RenderedSample {
    if z0.len() == 64 {
        RenderedSample {
            id,
            kind: SampleKind::Gray8x8,
            data: z0.iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect(),
        }
    } else {
        RenderedSample {
            id,
            kind: SampleKind::Points2d,
            data: z0.to_vec(),
        }
    }
}

/// A batch awaiting verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingBatch {
    pub epoch: usize,
    pub samples: Vec<RenderedSample>,
    #[serde(skip)]
    pub z0: Vec<(usize, Vec<f64>)>,
}

impl PendingBatch {
    pub fn new(epoch: usize, z0: Vec<(usize, Vec<f64>)>) -> Self {
        let samples = z0.iter().map(|(id, z)| render_sample(*id, z)).collect();
        Self {
            epoch,
            samples,
            z0,
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.z0.iter().map(|(id, _)| *id).collect()
    }
}

/// Source of verdicts for a published batch.
pub trait FeedbackProvider {
    /// Blocks until the batch is annotated.
    fn annotate(&mut self, batch: &PendingBatch) -> Result<BatchAnnotation>;

    /// Progress notification from the training loop.
    fn report(&mut self, _status: &crate::orchestrator::RunStatus) {}
}

pub struct OracleProvider(pub OracleSpec);

impl FeedbackProvider for OracleProvider {
    fn annotate(&mut self, batch: &PendingBatch) -> Result<BatchAnnotation> {
        oracle_annotate(batch.epoch, &batch.z0, &self.0)
    }
}

/// Obtains the annotation for `batch` from `provider`.
pub fn await_feedback(
    provider: &mut dyn FeedbackProvider,
    batch: &PendingBatch,
) -> Result<BatchAnnotation> {
    let ann = provider.annotate(batch)?;
    ann.validate()?;
    Ok(ann)
}
