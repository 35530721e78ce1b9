//! Feedback-aligned representation: an embedding `E` of clean samples, a
//! projection head `g` used only by the triplet loss, and the conversion of
//! an annotated batch into continuous rewards.

mod reward;

pub use reward::{
    cosine, rewards_binary, rewards_noembed, rewards_similarity_to_best,
    rewards_similarity_to_positives, RewardVariant, RewardVector, REWARD_DELTA,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, ParamStore, Var};
use crate::error::{shape_err, HeroError, Result};
use crate::nn::{Activation, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    /// Hidden widths of `E`.
    pub hidden: Vec<usize>,
    /// Representation width of `E`.
    pub width: usize,
    /// Output width of the projection head.
    pub projection: usize,
    pub margin: f64,
    pub steps: usize,
    pub pair_batch: usize,
    pub lr: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            width: 32,
            projection: 16,
            margin: 0.5,
            steps: 200,
            pair_batch: 256,
            lr: 1e-3,
        }
    }
}

/// `E` (relu MLP `D -> hidden -> width`) and `g` (relu, then a linear map
/// `width -> projection`) sharing one parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEmbedding {
    pub config: EmbeddingConfig,
    pub dim: usize,
    pub params: ParamStore,
}

impl FeedbackEmbedding {
    pub fn new<R: Rng + ?Sized>(dim: usize, config: EmbeddingConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let s = Self {
            config,
            dim,
            params: ParamStore::new(),
        };
        s.embed_mlp().init(&mut params, rng);
        s.head_mlp().init(&mut params, rng);
        Self { params, ..s }
    }

    fn embed_mlp(&self) -> Mlp {
        let mut dims = vec![self.dim];
        dims.extend(&self.config.hidden);
        dims.push(self.config.width);
        Mlp::new("embed", dims, Activation::Relu)
    }

    fn head_mlp(&self) -> Mlp {
        Mlp::new(
            "proj",
            vec![self.config.width, self.config.projection],
            Activation::Relu,
        )
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.dim) {
            return Err(shape_err(
                "embed",
                format!("sample of dimension {}, expected {}", r.len(), self.dim),
            ));
        }
        Ok(())
    }

    pub fn embed_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.embed_mlp().forward(g, &self.params, x)
    }

    pub fn project_graph(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let h = g.relu(h);
        self.head_mlp().forward(g, &self.params, h)
    }

    /// `E(z0)` for every row.
    pub fn embed(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_rows(rows)?;
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.constant_rows(rows)?;
        let h = self.embed_graph(&mut g, x)?;
        Ok(g.tensor(h).to_rows())
    }

    /// Triplet loss over the listed `(positive, negative)` index pairs, all
    /// sharing `batch.anchor`.
    pub fn triplet_loss_graph(
        &self,
        g: &mut Graph,
        batch: &TripletBatch,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        batch.check()?;
        self.check_rows(std::slice::from_ref(&batch.anchor))?;
        self.check_rows(&batch.positives)?;
        self.check_rows(&batch.negatives)?;
        if pairs.is_empty() {
            return Err(HeroError::Empty("triplet pairs"));
        }
        let np = batch.positives.len();
        let mut rows = Vec::with_capacity(1 + np + batch.negatives.len());
        rows.push(batch.anchor.clone());
        rows.extend(batch.positives.iter().cloned());
        rows.extend(batch.negatives.iter().cloned());
        let x = g.constant_rows(&rows)?;
        let h = self.embed_graph(g, x)?;
        let proj = self.project_graph(g, h)?;
        let anchor_idx = vec![0; pairs.len()];
        let pos_idx: Vec<usize> = pairs.iter().map(|&(p, _)| 1 + p).collect();
        let neg_idx: Vec<usize> = pairs.iter().map(|&(_, n)| 1 + np + n).collect();
        let a = g.gather_rows(proj, &anchor_idx)?;
        let p = g.gather_rows(proj, &pos_idx)?;
        let n = g.gather_rows(proj, &neg_idx)?;
        let cos_ap = g.cosine_rows(a, p)?;
        let cos_an = g.cosine_rows(a, n)?;
        // d(a,p) - d(a,n) with d = 1 - cos
        let diff = g.sub(cos_an, cos_ap)?;
        let hinge = g.add_scalar(diff, batch.margin);
        let hinge = g.relu(hinge);
        g.mean(hinge)
    }

    /// Loss averaged over every `(positive, negative)` combination.
    pub fn triplet_loss(&self, batch: &TripletBatch) -> Result<f64> {
        batch.check()?;
        let pairs = all_pairs(batch.positives.len(), batch.negatives.len());
        let mut g = Graph::new();
        let loss = self.triplet_loss_graph(&mut g, batch, &pairs)?;
        Ok(g.item(loss))
    }

    /// Runs `config.steps` Adam updates on uniformly resampled pairs,
    /// continuing from the current weights. Returns the loss per step.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        batch: &TripletBatch,
        adam: &mut AdamState,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        batch.check()?;
        let (np, nn) = (batch.positives.len(), batch.negatives.len());
        let mut history = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let pairs: Vec<(usize, usize)> = (0..self.config.pair_batch.max(1))
                .map(|_| (rng.random_range(0..np), rng.random_range(0..nn)))
                .collect();
            let mut g = Graph::new();
            let loss = self.triplet_loss_graph(&mut g, batch, &pairs)?;
            history.push(g.item(loss));
            g.backward(loss, &mut self.params)?;
            adam.step(&mut self.params)?;
        }
        Ok(history)
    }

    pub fn optimizer(&self) -> AdamState {
        AdamState::new(AdamConfig::with_lr(self.config.lr))
    }
}

/// Anchor (the best sample), positive pool and negative pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub margin: f64,
}

impl TripletBatch {
    fn check(&self) -> Result<()> {
        if self.positives.is_empty() {
            return Err(HeroError::Empty("positive pool"));
        }
        if self.negatives.is_empty() {
            return Err(HeroError::Empty("negative pool"));
        }
        Ok(())
    }
}

fn all_pairs(np: usize, nn: usize) -> Vec<(usize, usize)> {
    (0..np).flat_map(|p| (0..nn).map(move |n| (p, n))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> FeedbackEmbedding {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeedbackEmbedding::new(2, EmbeddingConfig::default(), &mut rng)
    }

    #[test]
    fn zero_last_layer_gives_zero_embedding() {
        let mut e = net(0);
        for name in ["embed.l2.w", "embed.l2.b"] {
            let shape = e.params.tensor(name).unwrap().shape().to_vec();
            e.params.insert(name, Tensor::zeros(shape), true);
        }
        let out = e.embed(&[vec![0.3, -1.0], vec![5.0, 2.0]]).unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_rejects_wrong_dim() {
        assert!(net(0).embed(&[vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn identical_positive_and_negative_cost_the_margin() {
        let e = net(1);
        let b = TripletBatch {
            anchor: vec![1.0, 0.0],
            positives: vec![vec![-0.5, 0.7]],
            negatives: vec![vec![-0.5, 0.7]],
            margin: 0.5,
        };
        assert!((e.triplet_loss(&b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let e = net(1);
        let b = TripletBatch {
            anchor: vec![1.0, 0.0],
            positives: vec![vec![1.0, 0.0]],
            negatives: vec![],
            margin: 0.5,
        };
        assert!(e.triplet_loss(&b).is_err());
    }

    #[test]
    fn zero_steps_leave_weights() {
        let mut e = net(2);
        e.config.steps = 0;
        let before = e.params.clone();
        let b = TripletBatch {
            anchor: vec![1.0, 0.0],
            positives: vec![vec![1.0, 0.1]],
            negatives: vec![vec![-1.0, 0.0]],
            margin: 0.5,
        };
        let mut adam = e.optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(e.train(&b, &mut adam, &mut rng).unwrap().is_empty());
        assert_eq!(e.params, before);
    }
}
