//! DDIM / ancestral sampling with recorded transition statistics.
//!
//! For a step `t -> t_prev` with predicted clean sample `x0`:
//!
//! ```text
//! eps_hat = (z_t - sqrt(ab_t) x0) / sqrt(1 - ab_t)
//! s       = eta * sqrt((1 - ab_p) / (1 - ab_t)) * sqrt(1 - ab_t / ab_p)
//! mean    = sqrt(ab_p) x0 + sqrt(1 - ab_p - s^2) eps_hat
//! ```
//!
//! which is affine in `x0`: `mean = clean * x0 + noisy * z_t`. `eta = 1`
//! recovers the ancestral (DDPM) posterior, `eta = 0` the deterministic
//! DDIM update.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, NoiseSchedule};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{shape_err, HeroError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub eta: f64,
    pub guidance_weight: f64,
    pub guidance: bool,
    /// Predicted clean samples are clamped to `[-clamp, clamp]`.
    pub clamp: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            eta: 1.0,
            guidance_weight: 1.0,
            guidance: false,
            clamp: 4.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > schedule.steps() {
            return Err(HeroError::InvalidArgument(format!(
                "sampler steps {} must lie in [1, {}]",
                self.steps,
                schedule.steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(HeroError::InvalidArgument(format!("eta {} not in [0, 1]", self.eta)));
        }
        Ok(())
    }
}

/// Evenly spaced descending integer grid from `T` to `0` with `steps + 1`
/// entries.
pub fn step_grid(total: usize, steps: usize) -> Vec<usize> {
    (0..=steps)
        .rev()
        .map(|i| ((total * i) as f64 / steps as f64).round() as usize)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimCoefficients {
    pub clean: f64,
    pub noisy: f64,
    pub std: f64,
}

pub fn ddim_coefficients(
    schedule: &NoiseSchedule,
    t: usize,
    t_prev: usize,
    eta: f64,
) -> DdimCoefficients {
    let ab_t = schedule.alpha_bar(t);
    let ab_p = schedule.alpha_bar(t_prev);
    let var = eta * eta * ((1.0 - ab_p) / (1.0 - ab_t)) * (1.0 - ab_t / ab_p);
    let var = var.max(0.0);
    let dir = (1.0 - ab_p - var).max(0.0).sqrt();
    let inv = 1.0 / (1.0 - ab_t).sqrt();
    DdimCoefficients {
        clean: ab_p.sqrt() - dir * ab_t.sqrt() * inv,
        noisy: dir * inv,
        std: var.sqrt(),
    }
}

/// Guided, clamped clean-sample prediction on a graph.
pub fn predict_clean(
    net: &Denoiser,
    params: &ParamStore,
    g: &mut Graph,
    z: Var,
    t: &[usize],
    cond: &[usize],
    config: &SamplerConfig,
) -> Result<Var> {
    let mut x0 = net.forward_with(params, g, z, t, cond)?;
    if config.guidance {
        let null = vec![net.config.null_condition(); cond.len()];
        let uncond = net.forward_with(params, g, z, t, &null)?;
        let a = g.scale(x0, 1.0 + config.guidance_weight);
        let b = g.scale(uncond, -config.guidance_weight);
        x0 = g.add(a, b)?;
    }
    Ok(g.clamp(x0, -config.clamp, config.clamp))
}

/// Posterior means for a batch whose rows share no timestep constraint:
/// row `i` uses `coefs[i]`.
pub fn posterior_mean(
    g: &mut Graph,
    x0: Var,
    z_t: &[Vec<f64>],
    coefs: &[DdimCoefficients],
) -> Result<Var> {
    let clean = g.constant_vec(coefs.iter().map(|c| c.clean).collect());
    let scaled = g.mul_rows(x0, clean)?;
    let shifted: Vec<Vec<f64>> = z_t
        .iter()
        .zip(coefs)
        .map(|(row, c)| row.iter().map(|v| c.noisy * v).collect())
        .collect();
    let shift = g.constant_rows(&shifted)?;
    g.add(scaled, shift)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub z_prev: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// One sampler step for a single sample.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step<R: Rng + ?Sized>(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    z_t: &[f64],
    t: usize,
    t_prev: usize,
    cond: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<StepOutput> {
    if t <= t_prev || t > schedule.steps() {
        return Err(HeroError::InvalidArgument(format!(
            "need T >= t > t_prev >= 0, got t = {t}, t_prev = {t_prev}"
        )));
    }
    let mut out = batch_step(net, schedule, &[z_t.to_vec()], t, t_prev, &[cond], config, rng)?;
    Ok(out.remove(0))
}

#[allow(clippy::too_many_arguments)]
fn batch_step<R: Rng + ?Sized>(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    z: &[Vec<f64>],
    t: usize,
    t_prev: usize,
    cond: &[usize],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<StepOutput>> {
    let n = z.len();
    let coef = ddim_coefficients(schedule, t, t_prev, config.eta);
    let mut g = Graph::new();
    let zv = g.constant_rows(z)?;
    let x0 = predict_clean(net, &net.params, &mut g, zv, &vec![t; n], cond, config)?;
    let mean = posterior_mean(&mut g, x0, z, &vec![coef; n])?;
    let mean = g.tensor(mean).to_rows();
    Ok(mean
        .into_iter()
        .map(|m| {
            let z_prev = if coef.std > 0.0 {
                m.iter()
                    .map(|mu| mu + coef.std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            } else {
                m.clone()
            };
            StepOutput {
                z_prev,
                mean: m,
                std: coef.std,
            }
        })
        .collect())
}

/// Recorded denoising path `z_T, ..., z_0` with the statistics of every
/// transition actually taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub condition: usize,
    /// Timestep of each state; `timesteps[0] = T`, last is `0`.
    pub timesteps: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    /// Mean and std used to draw `states[k + 1]` from `states[k]`.
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    /// Copy of the initial noise, kept for the refined prior.
    pub z_init: Vec<f64>,
}

impl Trajectory {
    pub fn n_transitions(&self) -> usize {
        self.stds.len()
    }

    pub fn z0(&self) -> &[f64] {
        self.states.last().expect("trajectory has states")
    }

    /// Sum of transition log-densities over steps with positive std.
    pub fn log_likelihood(&self) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.n_transitions() {
            if self.stds[k] > 0.0 {
                total += transition_logprob(&self.means[k], self.stds[k], &self.states[k + 1])?;
            }
        }
        Ok(total)
    }
}

/// Samples one trajectory per row of `z_init`, evaluating the batch together.
pub fn sample_trajectories<R: Rng + ?Sized>(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    z_init: &[Vec<f64>],
    cond: &[usize],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    config.validate(schedule)?;
    if z_init.len() != cond.len() {
        return Err(shape_err(
            "sample_trajectories",
            format!("{} noises for {} conditions", z_init.len(), cond.len()),
        ));
    }
    if let Some(bad) = z_init.iter().find(|z| z.len() != net.config.dim) {
        return Err(shape_err(
            "sample_trajectories",
            format!("noise of dimension {}, expected {}", bad.len(), net.config.dim),
        ));
    }
    let grid = step_grid(schedule.steps(), config.steps);
    let mut trajs: Vec<Trajectory> = z_init
        .iter()
        .zip(cond)
        .map(|(z, &c)| Trajectory {
            condition: c,
            timesteps: grid.clone(),
            states: vec![z.clone()],
            means: Vec::with_capacity(config.steps),
            stds: Vec::with_capacity(config.steps),
            z_init: z.clone(),
        })
        .collect();
    if trajs.is_empty() {
        return Ok(trajs);
    }
    let mut current: Vec<Vec<f64>> = z_init.to_vec();
    for w in grid.windows(2) {
        let outs = batch_step(net, schedule, &current, w[0], w[1], cond, config, rng)?;
        for (tr, out) in trajs.iter_mut().zip(outs) {
            tr.means.push(out.mean);
            tr.stds.push(out.std);
            tr.states.push(out.z_prev);
        }
        current = trajs.iter().map(|t| t.states.last().unwrap().clone()).collect();
    }
    Ok(trajs)
}

pub fn sample_trajectory<R: Rng + ?Sized>(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    z_init: &[f64],
    cond: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut v = sample_trajectories(net, schedule, &[z_init.to_vec()], &[cond], config, rng)?;
    Ok(v.remove(0))
}

/// Isotropic Gaussian log-density `log N(z; mean, std^2 I)`.
pub fn transition_logprob(mean: &[f64], std: f64, z_next: &[f64]) -> Result<f64> {
    if std.is_nan() || std <= 0.0 {
        return Err(HeroError::InvalidArgument(format!(
            "transition std must be positive, got {std}"
        )));
    }
    if mean.len() != z_next.len() {
        return Err(shape_err(
            "transition_logprob",
            format!("mean of {} entries, sample of {}", mean.len(), z_next.len()),
        ));
    }
    let norm = -(std * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let inv = 1.0 / (2.0 * std * std);
    Ok(mean
        .iter()
        .zip(z_next)
        .map(|(m, z)| norm - (z - m) * (z - m) * inv)
        .sum())
}

/// Per-row log-density on a graph. `means` is `[n, D]`, `stds` has `n`
/// positive entries.
pub fn transition_logprob_graph(
    g: &mut Graph,
    means: Var,
    stds: &[f64],
    z_next: &[Vec<f64>],
) -> Result<Var> {
    let dim = g.shape(means).get(1).copied().unwrap_or(0);
    let target = g.constant_rows(z_next)?;
    let diff = g.sub(target, means)?;
    let sq = g.mul(diff, diff)?;
    let rs = g.row_sum(sq)?;
    let inv = g.constant_vec(stds.iter().map(|s| -1.0 / (2.0 * s * s)).collect());
    let quad = g.mul(rs, inv)?;
    let norm: Vec<f64> = stds
        .iter()
        .map(|s| -(dim as f64) * (s * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .collect();
    let norm = g.constant(&Tensor::vector(norm));
    g.add(quad, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DenoiserConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Denoiser {
        let mut cfg = DenoiserConfig::new(2, 1);
        cfg.hidden = vec![8];
        Denoiser::new(cfg, &mut ChaCha8Rng::seed_from_u64(4))
    }

    #[test]
    fn grid_endpoints() {
        assert_eq!(step_grid(50, 1), vec![50, 0]);
        assert_eq!(step_grid(50, 50), (0..=50).rev().collect::<Vec<_>>());
        let g = step_grid(50, 20);
        assert_eq!(g.len(), 21);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn logprob_at_mode() {
        let lp = transition_logprob(&[0.0], 1.0, &[0.0]).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
        let lp = transition_logprob(&[1.0, 1.0], 2.0, &[1.0, 1.0]).unwrap();
        let expect = -2.0 * (2.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((lp - expect).abs() < 1e-12);
        assert!(transition_logprob(&[0.0], 0.0, &[0.0]).is_err());
        assert!(transition_logprob(&[0.0], -1.0, &[0.0]).is_err());
    }

    #[test]
    fn eta_zero_is_deterministic() {
        let net = net();
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let cfg = SamplerConfig {
            eta: 0.0,
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = ddim_step(&net, &sched, &[0.4, -0.2], 30, 29, 0, &cfg, &mut rng).unwrap();
        assert_eq!(out.std, 0.0);
        assert_eq!(out.z_prev, out.mean);
    }

    #[test]
    fn guidance_weight_ignored_when_disabled() {
        let net = net();
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let a = SamplerConfig {
            guidance_weight: 0.0,
            ..SamplerConfig::default()
        };
        let b = SamplerConfig {
            guidance_weight: 7.5,
            ..SamplerConfig::default()
        };
        let s1 = ddim_step(&net, &sched, &[0.4, -0.2], 30, 29, 0, &a, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s2 = ddim_step(&net, &sched, &[0.4, -0.2], 30, 29, 0, &b, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn zero_prediction_matches_ddpm_posterior() {
        // a denoiser with every output weight zero predicts x0 = 0
        let mut net = net();
        for (name, p) in net.params.iter_mut() {
            if name.starts_with("base.l1") {
                p.tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let z = [0.9, -1.7];
        let t = 20;
        let out = ddim_step(&net, &sched, &z, t, t - 1, 0, &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        // DDPM posterior: mean = sqrt(a_t)(1 - ab_{t-1})/(1 - ab_t) z_t, var = beta_t (1 - ab_{t-1})/(1 - ab_t)
        let beta = sched.beta(t);
        let ab_t = sched.alpha_bar(t);
        let ab_p = sched.alpha_bar(t - 1);
        let c = (1.0 - beta).sqrt() * (1.0 - ab_p) / (1.0 - ab_t);
        for k in 0..2 {
            assert!((out.mean[k] - c * z[k]).abs() < 1e-12);
        }
        let var = beta * (1.0 - ab_p) / (1.0 - ab_t);
        assert!((out.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn trajectory_shape_and_determinism() {
        let net = net();
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let one = SamplerConfig {
            steps: 1,
            ..SamplerConfig::default()
        };
        let tr = sample_trajectory(&net, &sched, &[0.1, 0.2], 0, &one, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(tr.states.len(), 2);

        let cfg = SamplerConfig::default();
        let a = sample_trajectory(&net, &sched, &[0.1, 0.2], 0, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_trajectory(&net, &sched, &[0.1, 0.2], 0, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 51);
        assert_eq!(a.z_init, vec![0.1, 0.2]);
        // only the last step may be deterministic
        assert!(a.stds[..49].iter().all(|&s| s > 0.0));
        assert_eq!(a.stds[49], 0.0);
        assert!(a.log_likelihood().unwrap().is_finite());
    }

    #[test]
    fn graph_logprob_agrees() {
        let means = vec![vec![0.3, -0.1], vec![1.0, 2.0]];
        let z = vec![vec![0.5, 0.0], vec![0.2, 2.5]];
        let stds = [0.7, 0.1];
        let mut g = Graph::new();
        let m = g.constant_rows(&means).unwrap();
        let lp = transition_logprob_graph(&mut g, m, &stds, &z).unwrap();
        for i in 0..2 {
            let direct = transition_logprob(&means[i], stds[i], &z[i]).unwrap();
            assert!((g.value(lp)[i] - direct).abs() < 1e-12);
        }
    }
}
