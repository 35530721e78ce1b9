//! Continuous rewards from an annotated batch.

use serde::{Deserialize, Serialize};

use super::FeedbackEmbedding;
use crate::error::{HeroError, Result};
use crate::feedback::BatchAnnotation;

/// Floor on the product of norms in every cosine reward.
pub const REWARD_DELTA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    /// Cosine to the best sample in embedding space.
    Best,
    /// Cosine to the mean embedding of the good samples.
    Positives,
    /// 1 for good, 0 for bad.
    Binary,
    /// Cosine to the mean good sample, without an embedding.
    Noembed,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 4] = [
        RewardVariant::Best,
        RewardVariant::Positives,
        RewardVariant::Binary,
        RewardVariant::Noembed,
    ];

    pub fn uses_embedding(self) -> bool {
        matches!(self, RewardVariant::Best | RewardVariant::Positives)
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Best => "best",
            RewardVariant::Positives => "positives",
            RewardVariant::Binary => "binary",
            RewardVariant::Noembed => "noembed",
        }
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = HeroError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HeroError::InvalidArgument(format!("unknown reward variant `{s}`")))
    }
}

/// One reward per sample, in the order the samples were given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub variant: RewardVariant,
    pub values: Vec<f64>,
}

impl RewardVector {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// `<a, b> / max(|a| |b|, delta)`, clamped to `[-1, 1]` against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (na * nb).sqrt().max(REWARD_DELTA)).clamp(-1.0, 1.0)
}

fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn cosine_to(rows: &[Vec<f64>], anchor: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| cosine(r, anchor)).collect()
}

pub fn rewards_similarity_to_best(
    emb: &FeedbackEmbedding,
    z0: &[Vec<f64>],
    z0_best: &[f64],
) -> Result<RewardVector> {
    let e = emb.embed(z0)?;
    let anchor = emb.embed(&[z0_best.to_vec()])?.remove(0);
    Ok(RewardVector {
        variant: RewardVariant::Best,
        values: cosine_to(&e, &anchor),
    })
}

/// `positives` is the good pool with the best sample counted once.
pub fn rewards_similarity_to_positives(
    emb: &FeedbackEmbedding,
    z0: &[Vec<f64>],
    positives: &[Vec<f64>],
) -> Result<RewardVector> {
    if positives.is_empty() {
        return Err(HeroError::Empty("positive pool"));
    }
    let e = emb.embed(z0)?;
    let anchor = mean_row(&emb.embed(positives)?);
    Ok(RewardVector {
        variant: RewardVariant::Positives,
        values: cosine_to(&e, &anchor),
    })
}

/// Values follow `annotation.ids`.
pub fn rewards_binary(annotation: &BatchAnnotation) -> RewardVector {
    RewardVector {
        variant: RewardVariant::Binary,
        values: annotation
            .ids
            .iter()
            .map(|&id| if annotation.is_good(id) { 1.0 } else { 0.0 })
            .collect(),
    }
}

pub fn rewards_noembed(z0: &[Vec<f64>], positives: &[Vec<f64>]) -> Result<RewardVector> {
    if positives.is_empty() {
        return Err(HeroError::Empty("positive pool"));
    }
    let anchor = mean_row(positives);
    Ok(RewardVector {
        variant: RewardVariant::Noembed,
        values: cosine_to(z0, &anchor),
    })
}
