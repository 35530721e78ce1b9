//! Dense layers and MLPs over a [`ParamStore`], with optional low-rank
//! adapters.
//!
//! A layer named `p` owns `p.w` (`[in, out]`) and `p.b` (`[out]`) and
//! computes `x W + b`. When the store also holds `q.a` (`[in, r]`) and
//! `q.b` (`[r, out]`) for the adapter prefix `q`, the layer computes
//! `x W + b + (x A) B`, i.e. the effective weight is `W + A B`. `B` starts at
//! zero so an untouched adapter leaves the output bit-identical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        }
    }
}

pub fn init_dense<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    gain: f64,
    rng: &mut R,
) {
    let std = (gain / input as f64).sqrt();
    store.insert_normal(format!("{prefix}.w"), vec![input, output], std, rng, true);
    store.insert(format!("{prefix}.b"), Tensor::zeros(vec![output]), true);
}

pub fn init_adapter<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    rank: usize,
    rng: &mut R,
) {
    let std = (1.0 / input as f64).sqrt();
    store.insert_normal(format!("{prefix}.a"), vec![input, rank], std, rng, true);
    store.insert(format!("{prefix}.b"), Tensor::zeros(vec![rank, output]), true);
}

/// `x W + b`, plus the adapter term when `adapter` names one present in
/// `store`.
pub fn dense(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    prefix: &str,
    adapter: Option<&str>,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    let mut y = g.add_row(xw, b)?;
    if let Some(q) = adapter {
        let a_name = format!("{q}.a");
        if store.contains(&a_name) {
            let a = g.param(store, &a_name)?;
            let bb = g.param(store, &format!("{q}.b"))?;
            let xa = g.matmul(x, a)?;
            let delta = g.matmul(xa, bb)?;
            y = g.add(y, delta)?;
        }
    }
    Ok(y)
}

/// Plain MLP: activation between layers, none after the last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>, activation: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.into(),
            dims,
            activation,
        }
    }

    pub fn layer(&self, i: usize) -> String {
        format!("{}.l{i}", self.prefix)
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for i in 0..self.n_layers() {
            init_dense(
                store,
                &self.layer(i),
                self.dims[i],
                self.dims[i + 1],
                self.activation.init_gain(),
                rng,
            );
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.n_layers() {
            h = dense(g, store, h, &self.layer(i), None)?;
            if i + 1 < self.n_layers() {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_adapter_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        init_dense(&mut store, "l", 4, 3, 1.0, &mut rng);
        let x = Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.37 - 1.0).collect()).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(&x);
        let base = dense(&mut g, &store, xv, "l", Some("lora")).unwrap();
        let base = g.value(base).to_vec();

        init_adapter(&mut store, "lora", 4, 3, 2, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let adapted = dense(&mut g, &store, xv, "l", Some("lora")).unwrap();
        assert_eq!(g.value(adapted), base.as_slice());
    }
}
