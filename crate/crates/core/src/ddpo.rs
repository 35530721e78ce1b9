//! Clipped policy-gradient fine-tuning of the denoiser adapters over
//! recorded trajectories, truncated to the last `K + 1` stochastic steps.
//!
//! Each transition's log-density is re-evaluated through a network's
//! posterior mean; the std comes from the schedule and is not a function of
//! the parameters. The per-trajectory loss is
//!
//! ```text
//! -sum_t min(rho_t A, clip(rho_t, 1 - eps, 1 + eps) A),
//! rho_t = exp(logp_new - logp_old)
//! ```

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, ParamStore, Var};
use crate::diffusion::{
    ddim_coefficients, posterior_mean, predict_clean, transition_logprob_graph, Denoiser,
    NoiseSchedule, SamplerConfig, Trajectory,
};
use crate::error::{HeroError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpoConfig {
    pub clip: f64,
    /// Number of stochastic steps used is `k + 1`.
    pub k: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Trajectories per minibatch.
    pub batch: usize,
    /// Minibatches whose gradients are summed before each optimizer step.
    pub grad_accum: usize,
    pub inner_epochs: usize,
    pub normalize_advantages: bool,
}

impl Default for DdpoConfig {
    fn default() -> Self {
        Self {
            clip: 1e-4,
            k: 5,
            lr: 3e-4,
            weight_decay: 1e-4,
            batch: 2,
            grad_accum: 4,
            inner_epochs: 1,
            normalize_advantages: true,
        }
    }
}

impl DdpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(HeroError::InvalidArgument(format!("clip range {} must be positive", self.clip)));
        }
        if self.batch == 0 || self.grad_accum == 0 {
            return Err(HeroError::InvalidArgument("batch and grad_accum must be >= 1".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamState {
        AdamState::new(AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::with_lr(self.lr)
        })
    }
}

/// `(r - mean) / max(std, 1e-8)` with the population std, or a copy when
/// `normalize` is off.
pub fn normalize_advantages(rewards: &[f64], normalize: bool) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(HeroError::Empty("reward vector"));
    }
    if !normalize {
        return Ok(rewards.to_vec());
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Indices of the transitions entering the loss: the last `k + 1` with
/// positive std (fewer when the trajectory has fewer).
pub fn loss_steps(traj: &Trajectory, k: usize) -> Result<Vec<usize>> {
    if k >= traj.n_transitions() {
        return Err(HeroError::InvalidArgument(format!(
            "K = {k} needs more than {} sampler steps",
            traj.n_transitions()
        )));
    }
    let mut steps: Vec<usize> = (0..traj.n_transitions())
        .filter(|&i| traj.stds[i] > 0.0)
        .collect();
    let drop = steps.len().saturating_sub(k + 1);
    steps.drain(..drop);
    Ok(steps)
}

/// Everything the surrogate needs about the selected transitions, flattened
/// across trajectories.
struct Terms {
    z_t: Vec<Vec<f64>>,
    z_next: Vec<Vec<f64>>,
    t: Vec<usize>,
    t_prev: Vec<usize>,
    cond: Vec<usize>,
    stds: Vec<f64>,
    adv: Vec<f64>,
    owner: Vec<usize>,
}

fn collect_terms(trajs: &[&Trajectory], adv: &[f64], k: usize) -> Result<Terms> {
    let mut terms = Terms {
        z_t: Vec::new(),
        z_next: Vec::new(),
        t: Vec::new(),
        t_prev: Vec::new(),
        cond: Vec::new(),
        stds: Vec::new(),
        adv: Vec::new(),
        owner: Vec::new(),
    };
    for (j, (tr, &a)) in trajs.iter().zip(adv).enumerate() {
        for i in loss_steps(tr, k)? {
            terms.z_t.push(tr.states[i].clone());
            terms.z_next.push(tr.states[i + 1].clone());
            terms.t.push(tr.timesteps[i]);
            terms.t_prev.push(tr.timesteps[i + 1]);
            terms.cond.push(tr.condition);
            terms.stds.push(tr.stds[i]);
            terms.adv.push(a);
            terms.owner.push(j);
        }
    }
    Ok(terms)
}

fn logprob_terms(
    net: &Denoiser,
    params: &ParamStore,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    g: &mut Graph,
    terms: &Terms,
) -> Result<Var> {
    let z = g.constant_rows(&terms.z_t)?;
    let x0 = predict_clean(net, params, g, z, &terms.t, &terms.cond, sampler)?;
    let coefs: Vec<_> = terms
        .t
        .iter()
        .zip(&terms.t_prev)
        .map(|(&t, &tp)| ddim_coefficients(schedule, t, tp, sampler.eta))
        .collect();
    let mean = posterior_mean(g, x0, &terms.z_t, &coefs)?;
    transition_logprob_graph(g, mean, &terms.stds, &terms.z_next)
}

/// Surrogate loss summed over the given trajectories, on `g`, with the
/// per-term ratios.
pub struct SurrogateLoss {
    pub loss: Var,
    pub ratios: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn ddpo_k_loss_graph(
    g: &mut Graph,
    net: &Denoiser,
    old_params: &ParamStore,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    trajs: &[&Trajectory],
    advantages: &[f64],
    config: &DdpoConfig,
) -> Result<SurrogateLoss> {
    if trajs.len() != advantages.len() {
        return Err(HeroError::InvalidArgument(format!(
            "{} trajectories but {} advantages",
            trajs.len(),
            advantages.len()
        )));
    }
    let terms = collect_terms(trajs, advantages, config.k)?;
    if terms.t.is_empty() {
        return Err(HeroError::Empty("stochastic transitions"));
    }
    let old = {
        let mut og = Graph::new();
        let lp = logprob_terms(net, old_params, schedule, sampler, &mut og, &terms)?;
        og.value(lp).to_vec()
    };
    let new = logprob_terms(net, &net.params, schedule, sampler, g, &terms)?;
    let old = g.constant_vec(old);
    let log_ratio = g.sub(new, old)?;
    let ratio = g.exp(log_ratio);
    let ratios = g.value(ratio).to_vec();
    let adv = g.constant_vec(terms.adv.clone());
    let plain = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let clipped = g.mul(clipped, adv)?;
    let surrogate = g.minimum(plain, clipped)?;
    let total = g.sum(surrogate);
    Ok(SurrogateLoss {
        loss: g.neg(total),
        ratios,
    })
}

/// Loss of a single trajectory under the live weights of `net` against
/// `old_params`.
pub fn ddpo_k_loss(
    net: &Denoiser,
    old_params: &ParamStore,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    traj: &Trajectory,
    advantage: f64,
    config: &DdpoConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let out = ddpo_k_loss_graph(
        &mut g,
        net,
        old_params,
        schedule,
        sampler,
        &[traj],
        &[advantage],
        config,
    )?;
    Ok(g.item(out.loss))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DdpoStats {
    /// Mean per-trajectory loss over all evaluated minibatches.
    pub loss: f64,
    pub mean_ratio: f64,
    /// Fraction of terms whose ratio left `[1 - clip, 1 + clip]`.
    pub clip_fraction: f64,
    pub optimizer_steps: usize,
}

/// Runs `config.inner_epochs` shuffled passes over the trajectories,
/// stepping Adam on every `grad_accum` minibatches (and on any remainder).
/// The weights at entry serve as the old policy.
#[allow(clippy::too_many_arguments)]
pub fn ddpo_update<R: Rng + ?Sized>(
    net: &mut Denoiser,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    trajs: &[Trajectory],
    advantages: &[f64],
    config: &DdpoConfig,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<DdpoStats> {
    config.validate()?;
    if trajs.is_empty() {
        return Err(HeroError::Empty("trajectory set"));
    }
    if trajs.len() != advantages.len() {
        return Err(HeroError::InvalidArgument(format!(
            "{} trajectories but {} advantages",
            trajs.len(),
            advantages.len()
        )));
    }
    let old = net.params.snapshot();
    let mut loss_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut n_terms = 0usize;
    let mut n_clipped = 0usize;
    let mut opt_steps = 0usize;
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    for _ in 0..config.inner_epochs {
        order.shuffle(rng);
        let minibatches: Vec<&[usize]> = order.chunks(config.batch).collect();
        for group in minibatches.chunks(config.grad_accum) {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut group_size = 0usize;
            for mb in group {
                let ts: Vec<&Trajectory> = mb.iter().map(|&i| &trajs[i]).collect();
                let adv: Vec<f64> = mb.iter().map(|&i| advantages[i]).collect();
                let mut g = Graph::new();
                let out = ddpo_k_loss_graph(&mut g, net, &old, schedule, sampler, &ts, &adv, config)?;
                loss_sum += g.item(out.loss);
                for r in &out.ratios {
                    ratio_sum += r;
                    if (r - 1.0).abs() > config.clip {
                        n_clipped += 1;
                    }
                }
                n_terms += out.ratios.len();
                group_size += mb.len();
                g.backward(out.loss, &mut net.params)?;
                for (name, p) in net.params.iter() {
                    if let Some(gr) = p.tensor.grad() {
                        let slot = acc.entry(name.clone()).or_insert_with(|| vec![0.0; gr.len()]);
                        slot.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                }
            }
            // average over the trajectories that contributed
            let scale = 1.0 / group_size as f64;
            for (name, mut gr) in acc {
                gr.iter_mut().for_each(|v| *v *= scale);
                net.params.get_mut(&name)?.tensor.set_grad(gr)?;
            }
            adam.step(&mut net.params)?;
            opt_steps += 1;
        }
    }
    let n_traj_evals = (trajs.len() * config.inner_epochs).max(1) as f64;
    Ok(DdpoStats {
        loss: loss_sum / n_traj_evals,
        mean_ratio: if n_terms > 0 { ratio_sum / n_terms as f64 } else { 1.0 },
        clip_fraction: if n_terms > 0 { n_clipped as f64 / n_terms as f64 } else { 0.0 },
        optimizer_steps: opt_steps,
    })
}
