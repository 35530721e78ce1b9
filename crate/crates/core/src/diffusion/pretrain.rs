use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, NoiseSchedule, ToyDataset};
use crate::autodiff::{AdamConfig, AdamState, Graph};
use crate::error::{HeroError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing a label by the null condition.
    pub cond_dropout: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch: 256,
            lr: 2e-3,
            cond_dropout: 0.1,
        }
    }
}

/// Fits the base weights to `E ||z_hat(alpha_t z0 + sigma_t eps, t, c) - z0||^2`
/// with `t` uniform in `[1, T]`. Returns the per-step loss.
pub fn pretrain<R: Rng + ?Sized>(
    net: &mut Denoiser,
    schedule: &NoiseSchedule,
    data: &ToyDataset,
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(HeroError::Empty("dataset"));
    }
    if data.dim() != net.config.dim {
        return Err(HeroError::InvalidArgument(format!(
            "dataset dimension {} does not match denoiser dimension {}",
            data.dim(),
            net.config.dim
        )));
    }
    net.train_base();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let batch = config.batch.min(data.len()).max(1);
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        // cosine decay to 5% of the base rate
        let frac = step as f64 / config.steps as f64;
        adam.config.lr = config.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        let idx = sample_indices(rng, data.len(), batch);
        let mut z0 = Vec::with_capacity(batch);
        let mut zt = Vec::with_capacity(batch);
        let mut ts = Vec::with_capacity(batch);
        let mut cs = Vec::with_capacity(batch);
        for i in idx.iter() {
            let x = &data.samples[i];
            let t = rng.random_range(1..=schedule.steps());
            let eps: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            zt.push(schedule.forward_noise(x, t, &eps)?);
            z0.push(x.clone());
            ts.push(t);
            let c = if rng.random::<f64>() < config.cond_dropout {
                net.config.null_condition()
            } else {
                data.labels[i]
            };
            cs.push(c);
        }
        let mut g = Graph::new();
        let zv = g.constant_rows(&zt)?;
        let target = g.constant_rows(&z0)?;
        let pred = net.forward(&mut g, zv, &ts, &cs)?;
        let loss = denoising_loss(&mut g, pred, target, net.config.dim)?;
        history.push(g.item(loss));
        g.backward(loss, &mut net.params)?;
        adam.step(&mut net.params)?;
    }
    Ok(history)
}

/// Batch mean of per-sample squared error `||pred - target||^2`.
pub fn denoising_loss(
    g: &mut Graph,
    pred: crate::autodiff::Var,
    target: crate::autodiff::Var,
    dim: usize,
) -> Result<crate::autodiff::Var> {
    let mse = g.mse(pred, target)?;
    Ok(g.scale(mse, dim as f64))
}
