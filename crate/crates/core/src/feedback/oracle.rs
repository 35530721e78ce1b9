//! Deterministic scripted annotators standing in for a human.

use serde::{Deserialize, Serialize};

use super::BatchAnnotation;
use crate::error::{HeroError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OracleSpec {
    /// Good iff the sample lies within `radius` of `center`; score is the
    /// negated distance.
    #[serde(rename = "region-2d")]
    Region { center: Vec<f64>, radius: f64 },
    /// Score `weights . z + bias`; good iff the score reaches `threshold`.
    #[serde(rename = "scorer-2d")]
    Scorer {
        weights: Vec<f64>,
        bias: f64,
        threshold: f64,
    },
    /// Mean brightness (mapped to `[0, 1]`) of the pixel window
    /// `rows x cols` of an 8x8 image; good iff at least `threshold`.
    #[serde(rename = "image-predicate")]
    ImagePredicate {
        rows: [usize; 2],
        cols: [usize; 2],
        threshold: f64,
    },
    #[serde(rename = "accept-all")]
    AcceptAll,
}

impl OracleSpec {
    /// Eight-Gaussians single-mode oracle for mode `k` (radius 2 circle).
    pub fn mode(k: usize) -> Self {
        let a = k as f64 * std::f64::consts::FRAC_PI_4;
        OracleSpec::Region {
            center: vec![2.0 * a.cos(), 2.0 * a.sin()],
            radius: 0.5,
        }
    }

    /// Resolves a preset name: `mode-0` .. `mode-7`, `accept-all`,
    /// `upper-half`, `bright-center`.
    pub fn named(name: &str) -> Result<Self> {
        if let Some(k) = name.strip_prefix("mode-") {
            let k: usize = k
                .parse()
                .ok()
                .filter(|k| *k < 8)
                .ok_or_else(|| HeroError::InvalidArgument(format!("unknown oracle `{name}`")))?;
            return Ok(Self::mode(k));
        }
        match name {
            "accept-all" => Ok(OracleSpec::AcceptAll),
            "upper-half" => Ok(OracleSpec::Scorer {
                weights: vec![0.0, 1.0],
                bias: 0.0,
                threshold: 0.0,
            }),
            "bright-center" => Ok(OracleSpec::ImagePredicate {
                rows: [3, 5],
                cols: [3, 5],
                threshold: 0.75,
            }),
            _ => Err(HeroError::InvalidArgument(format!("unknown oracle `{name}`"))),
        }
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        match self {
            OracleSpec::Region { center, .. } => -center
                .iter()
                .zip(z)
                .map(|(c, x)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt(),
            OracleSpec::Scorer { weights, bias, .. } => {
                weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + bias
            }
            OracleSpec::ImagePredicate { rows, cols, .. } => {
                let mut sum = 0.0;
                let mut n = 0usize;
                for r in rows[0]..rows[1] {
                    for c in cols[0]..cols[1] {
                        if let Some(v) = z.get(r * 8 + c) {
                            sum += ((v + 1.0) / 2.0).clamp(0.0, 1.0);
                            n += 1;
                        }
                    }
                }
                if n == 0 {
                    0.0
                } else {
                    sum / n as f64
                }
            }
            OracleSpec::AcceptAll => 0.0,
        }
    }

    pub fn is_good(&self, z: &[f64]) -> bool {
        match self {
            OracleSpec::Region { radius, .. } => -self.score(z) <= *radius,
            OracleSpec::Scorer { threshold, .. } | OracleSpec::ImagePredicate { threshold, .. } => {
                self.score(z) >= *threshold
            }
            OracleSpec::AcceptAll => true,
        }
    }

    pub fn name(&self) -> String {
        match self {
            OracleSpec::Region { .. } => "region-2d".into(),
            OracleSpec::Scorer { .. } => "scorer-2d".into(),
            OracleSpec::ImagePredicate { .. } => "image-predicate".into(),
            OracleSpec::AcceptAll => "accept-all".into(),
        }
    }
}

/// Labels every sample by the oracle predicate; the best is the good sample
/// of highest score, ties to the lowest id.
pub fn oracle_annotate(
    epoch: usize,
    samples: &[(usize, Vec<f64>)],
    oracle: &OracleSpec,
) -> Result<BatchAnnotation> {
    if samples.is_empty() {
        return Err(HeroError::Empty("batch"));
    }
    let mut labels = Vec::with_capacity(samples.len());
    let mut best: Option<(usize, f64)> = None;
    let mut ordered: Vec<&(usize, Vec<f64>)> = samples.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    for (id, z) in ordered {
        let good = oracle.is_good(z);
        labels.push((*id, good));
        if good {
            let s = oracle.score(z);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((*id, s));
            }
        }
    }
    let ids: Vec<usize> = samples.iter().map(|(id, _)| *id).collect();
    BatchAnnotation::from_labels(epoch, &ids, &labels, best.map(|b| b.0), oracle.name())
}

/// Fraction of samples the oracle labels good.
pub fn success_rate(samples: &[Vec<f64>], oracle: &OracleSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(HeroError::Empty("sample list"));
    }
    let good = samples.iter().filter(|z| oracle.is_good(z)).count();
    Ok(good as f64 / samples.len() as f64)
}
