//! Refined initial-noise distribution: a Gaussian mixture around the
//! initial noises of the last epoch's good and best samples.
//!
//! With probability `beta` a draw comes from `N(best, eps0^2 I)`, otherwise
//! from `N(good_i, eps0^2 I)` for a uniformly chosen good noise. At
//! `beta = 0` the best noise joins the uniform choice as one more component.
//! Before any feedback the distribution is the standard normal prior.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_trajectories, Denoiser, NoiseSchedule, SamplerConfig};
use crate::error::{HeroError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiHeroState {
    pub dim: usize,
    pub first_iteration: bool,
    pub best: Option<Vec<f64>>,
    pub goods: Vec<Vec<f64>>,
    pub beta: f64,
    pub eps0_sq: f64,
}

/// Mixture component a draw came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Prior,
    Best,
    Good(usize),
}

impl PiHeroState {
    pub fn new(dim: usize, beta: f64, eps0_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(HeroError::InvalidArgument(format!("beta {beta} not in [0, 1]")));
        }
        if !(eps0_sq >= 0.0) {
            return Err(HeroError::InvalidArgument(format!("eps0^2 {eps0_sq} is negative")));
        }
        Ok(Self {
            dim,
            first_iteration: true,
            best: None,
            goods: Vec::new(),
            beta,
            eps0_sq,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let has_means = self.best.is_some() || !self.goods.is_empty();
        if self.first_iteration == has_means {
            return Err(HeroError::InvalidArgument(
                "refined prior must hold means exactly when past its first iteration".into(),
            ));
        }
        if let Some(m) = self
            .best
            .iter()
            .chain(&self.goods)
            .find(|m| m.len() != self.dim)
        {
            return Err(HeroError::InvalidArgument(format!(
                "stored mean of dimension {}, expected {}",
                m.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> Component {
        if self.first_iteration {
            return Component::Prior;
        }
        let n_good = self.goods.len();
        match &self.best {
            None => Component::Good(rng.random_range(0..n_good)),
            Some(_) if n_good == 0 => Component::Best,
            Some(_) if self.beta == 0.0 => {
                let k = rng.random_range(0..=n_good);
                if k == n_good {
                    Component::Best
                } else {
                    Component::Good(k)
                }
            }
            Some(_) => {
                if rng.random::<f64>() < self.beta {
                    Component::Best
                } else {
                    Component::Good(rng.random_range(0..n_good))
                }
            }
        }
    }

    /// `n` draws together with the component each came from.
    pub fn sample_labeled<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<(Component, Vec<f64>)>> {
        self.validate()?;
        let eps0 = self.eps0_sq.sqrt();
        Ok((0..n)
            .map(|_| {
                let c = self.choose(rng);
                let (mean, scale) = match c {
                    Component::Prior => (None, 1.0),
                    Component::Best => (self.best.as_ref(), eps0),
                    Component::Good(i) => (Some(&self.goods[i]), eps0),
                };
                let z = (0..self.dim)
                    .map(|i| {
                        let m = mean.map_or(0.0, |m| m[i]);
                        m + scale * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                (c, z)
            })
            .collect())
    }

    /// Replaces the stored means by this epoch's noises. Empty inputs leave
    /// the state as it was.
    pub fn update(&mut self, goods: Vec<Vec<f64>>, best: Option<Vec<f64>>) {
        if goods.is_empty() && best.is_none() {
            return;
        }
        self.goods = goods;
        self.best = best;
        self.first_iteration = false;
    }
}

pub fn pi_hero_sample<R: Rng + ?Sized>(
    state: &PiHeroState,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    Ok(state
        .sample_labeled(n, rng)?
        .into_iter()
        .map(|(_, z)| z)
        .collect())
}

/// Returns the updated state; see [`PiHeroState::update`].
pub fn pi_hero_update(
    state: &PiHeroState,
    goods: Vec<Vec<f64>>,
    best: Option<Vec<f64>>,
) -> PiHeroState {
    let mut s = state.clone();
    s.update(goods, best);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub dim: usize,
    pub eps0_sq: f64,
    pub n: usize,
    pub components: usize,
    pub fraction: f64,
}

/// Fraction of mixture draws with `|y| / sqrt(D)` in `[1 - eps0, 1 + eps0]`,
/// the means themselves drawn from the standard normal prior.
pub fn concentration_diagnostic<R: Rng + ?Sized>(
    dim: usize,
    eps0_sq: f64,
    n: usize,
    components: usize,
    rng: &mut R,
) -> Result<ConcentrationReport> {
    if dim == 0 || n == 0 || components == 0 {
        return Err(HeroError::InvalidArgument(
            "dimension, sample count and component count must be positive".into(),
        ));
    }
    let means: Vec<Vec<f64>> = (0..components)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut state = PiHeroState::new(dim, 0.5, eps0_sq)?;
    let best = means[0].clone();
    state.update(means[1..].to_vec(), Some(best));
    let samples = pi_hero_sample(&state, n, rng)?;
    Ok(ConcentrationReport {
        dim,
        eps0_sq,
        n,
        components,
        fraction: shell_fraction(&samples, eps0_sq.sqrt()),
    })
}

/// Fraction of rows whose norm over `sqrt(D)` lies in `[1 - eps0, 1 + eps0]`.
pub fn shell_fraction(samples: &[Vec<f64>], eps0: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let inside = samples
        .iter()
        .filter(|y| {
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt() / (y.len() as f64).sqrt();
            (1.0 - eps0..=1.0 + eps0).contains(&r)
        })
        .count();
    inside as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoLinkReport {
    pub steps: usize,
    pub n: usize,
    /// Mean over coordinates of `|corr(z_T[i], z_0[i])|`.
    pub score: f64,
    /// Same statistic after shuffling the pairing.
    pub shuffled_score: f64,
    /// `3 / sqrt(n)`.
    pub threshold: f64,
}

/// Mean absolute per-coordinate Pearson correlation between paired rows.
pub fn dependence_score(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let dim = x.first().map_or(0, |r| r.len());
    if dim == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..dim {
        let mx = x.iter().map(|r| r[i]).sum::<f64>() / n;
        let my = y.iter().map(|r| r[i]).sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            let (dx, dy) = (a[i] - mx, b[i] - my);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        let denom = (sxx * syy).sqrt();
        if denom > 0.0 {
            total += (sxy / denom).abs();
        }
    }
    total / dim as f64
}

/// Samples `n` trajectories from the standard prior with `steps` sampler
/// steps and measures how strongly `z_0` still depends on `z_T`.
pub fn info_link_diagnostic<R: Rng + ?Sized>(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    cond: usize,
    n: usize,
    rng: &mut R,
) -> Result<InfoLinkReport> {
    if n < 2 {
        return Err(HeroError::InvalidArgument("need at least two trajectories".into()));
    }
    let z_init: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..net.config.dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let trajs = sample_trajectories(net, schedule, &z_init, &vec![cond; n], sampler, rng)?;
    let z0: Vec<Vec<f64>> = trajs.iter().map(|t| t.z0().to_vec()).collect();
    let mut shuffled = z0.clone();
    shuffled.shuffle(rng);
    Ok(InfoLinkReport {
        steps: sampler.steps,
        n,
        score: dependence_score(&z_init, &z0),
        shuffled_score: dependence_score(&z_init, &shuffled),
        threshold: 3.0 / (n as f64).sqrt(),
    })
}
