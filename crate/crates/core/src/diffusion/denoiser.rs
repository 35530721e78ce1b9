//! Clean-sample predicting MLP `z_hat(z_t, t, c)` with optional low-rank
//! adapters on every dense layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, HeroError, Result};
use crate::nn::{dense, init_adapter, init_dense};

pub const BASE_PREFIX: &str = "base.";
pub const ADAPTER_PREFIX: &str = "lora.";
const COND_TABLE: &str = "base.cond_table";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Sample dimension `D`.
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed: usize,
    pub cond_embed: usize,
    /// Number of real condition labels; one extra null row is appended.
    pub n_conditions: usize,
    pub adapter_rank: usize,
}

impl DenoiserConfig {
    pub fn new(dim: usize, n_conditions: usize) -> Self {
        Self {
            dim,
            hidden: vec![128, 128],
            time_embed: 32,
            cond_embed: 8,
            n_conditions,
            adapter_rank: 4,
        }
    }

    pub fn null_condition(&self) -> usize {
        self.n_conditions
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.dim + self.time_embed + self.cond_embed];
        w.extend(&self.hidden);
        w.push(self.dim);
        w
    }

    fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Sinusoidal embedding of an integer timestep.
pub fn time_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = Vec::with_capacity(width);
    for k in 0..half {
        let freq = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for k in 0..half {
        let freq = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out.resize(width, 0.0);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        params.insert_normal(
            COND_TABLE,
            vec![config.n_conditions + 1, config.cond_embed],
            1.0,
            rng,
            true,
        );
        let w = config.widths();
        for i in 0..config.n_layers() {
            init_dense(&mut params, &Self::base_layer(i), w[i], w[i + 1], 1.0, rng);
        }
        Self { config, params }
    }

    fn base_layer(i: usize) -> String {
        format!("{BASE_PREFIX}l{i}")
    }

    fn adapter_layer(i: usize) -> String {
        format!("{ADAPTER_PREFIX}l{i}")
    }

    pub fn has_adapters(&self) -> bool {
        self.params.contains(&format!("{}.a", Self::adapter_layer(0)))
    }

    /// Adds zero-effect adapters (if absent), freezes the base and makes only
    /// the adapters trainable.
    pub fn attach_adapters<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if !self.has_adapters() {
            let w = self.config.widths();
            for i in 0..self.config.n_layers() {
                init_adapter(
                    &mut self.params,
                    &Self::adapter_layer(i),
                    w[i],
                    w[i + 1],
                    self.config.adapter_rank,
                    rng,
                );
            }
        }
        self.params.set_trainable_prefix(BASE_PREFIX, false);
        self.params.set_trainable_prefix(ADAPTER_PREFIX, true);
    }

    /// Base trainable, adapters (if any) frozen.
    pub fn train_base(&mut self) {
        self.params.set_trainable_prefix(BASE_PREFIX, true);
        self.params.set_trainable_prefix(ADAPTER_PREFIX, false);
    }

    /// Predicts clean samples for a batch using `params` (which must share
    /// this network's layout; pass `&self.params` for the live weights).
    pub fn forward_with(
        &self,
        params: &ParamStore,
        g: &mut Graph,
        z: Var,
        t: &[usize],
        cond: &[usize],
    ) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.config.dim {
            return Err(shape_err(
                "denoiser",
                format!("expected [n, {}], got {shape:?}", self.config.dim),
            ));
        }
        let n = shape[0];
        if t.len() != n || cond.len() != n {
            return Err(shape_err(
                "denoiser",
                format!("{n} rows but {} timesteps and {} conditions", t.len(), cond.len()),
            ));
        }
        if let Some(&c) = cond.iter().find(|&&c| c > self.config.n_conditions) {
            return Err(HeroError::InvalidArgument(format!("condition {c} out of range")));
        }
        let temb: Vec<f64> = t
            .iter()
            .flat_map(|&ti| time_embedding(ti, self.config.time_embed))
            .collect();
        let temb = g.constant(&crate::autodiff::Tensor::new(
            vec![n, self.config.time_embed],
            temb,
        )?);
        let table = g.param(params, COND_TABLE)?;
        let cemb = g.gather_rows(table, cond)?;
        let zt = g.concat_cols(z, temb)?;
        let mut h = g.concat_cols(zt, cemb)?;
        let layers = self.config.n_layers();
        for i in 0..layers {
            let adapter = Self::adapter_layer(i);
            h = dense(g, params, h, &Self::base_layer(i), Some(&adapter))?;
            if i + 1 < layers {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, z: Var, t: &[usize], cond: &[usize]) -> Result<Var> {
        self.forward_with(&self.params, g, z, t, cond)
    }

    /// Convenience evaluation outside any training graph.
    pub fn predict(&self, z: &[Vec<f64>], t: &[usize], cond: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let zv = g.constant_rows(z)?;
        let out = self.forward(&mut g, zv, t, cond)?;
        Ok(g.tensor(out).to_rows())
    }
}
