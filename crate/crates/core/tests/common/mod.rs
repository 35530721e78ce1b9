#![allow(dead_code)]

use std::path::Path;

use hero_core::autodiff::Tensor;
use hero_core::diffusion::{Denoiser, DenoiserConfig, NoiseSchedule, ADAPTER_PREFIX};
use hero_core::orchestrator::{pretrain_base, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

pub fn tiny_denoiser_config(dim: usize) -> DenoiserConfig {
    DenoiserConfig {
        dim,
        hidden: vec![6],
        time_embed: 4,
        cond_embed: 2,
        n_conditions: 1,
        adapter_rank: 2,
    }
}

/// Small denoiser with adapters attached and their `B` factors randomised,
/// so the adapted network differs from the base one.
pub fn tiny_adapted(dim: usize, seed: u64) -> Denoiser {
    let mut r = rng(seed);
    let mut net = Denoiser::new(tiny_denoiser_config(dim), &mut r);
    net.attach_adapters(&mut r);
    randomize_adapters(&mut net, 0.3, &mut r);
    net
}

pub fn randomize_adapters(net: &mut Denoiser, scale: f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = net
        .params
        .names()
        .filter(|n| n.starts_with(ADAPTER_PREFIX))
        .cloned()
        .collect();
    for name in names {
        let p = net.params.get_mut(&name).unwrap();
        let shape = p.tensor.shape().to_vec();
        let data = (0..p.tensor.len())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        p.tensor = Tensor::new(shape, data).unwrap();
    }
}

pub fn short_schedule() -> NoiseSchedule {
    NoiseSchedule::linear(10, 1e-3, 0.2).unwrap()
}

/// Config for fast end-to-end runs: tiny network, short pretraining,
/// 10-step sampler, small batches.
pub fn fast_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.hidden = vec![16, 16];
    cfg.pretrain.steps = 150;
    cfg.pretrain.batch = 64;
    cfg.pretrain_samples = 1024;
    cfg.sampler.steps = 10;
    cfg.embedding.steps = 20;
    cfg.embedding.pair_batch = 32;
    cfg.budget = 64;
    cfg.batch = 16;
    cfg.final_eval_samples = 32;
    cfg.base_checkpoint = root.join("base/model.json");
    cfg.run_dir = root.join("run");
    cfg
}

pub fn pretrain_fast(cfg: &RunConfig) {
    let out = cfg.base_checkpoint.parent().unwrap();
    pretrain_base(cfg, out).unwrap();
}
