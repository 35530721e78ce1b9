use serde::{Deserialize, Serialize};

use crate::error::{HeroError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

/// Variance-preserving schedule. Index `t` runs over `0..=T`, with `t = 0`
/// the clean data (`alpha = 1`, `sigma = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(HeroError::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(HeroError::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            params: ScheduleParams {
                steps,
                beta_min,
                beta_max,
            },
            betas,
            alpha_bars,
        })
    }

    pub fn from_params(p: ScheduleParams) -> Result<Self> {
        Self::linear(p.steps, p.beta_min, p.beta_max)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.params.steps
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bars[t].sqrt()
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]).sqrt()
    }

    /// `alpha_t z0 + sigma_t eps` for `t` in `1..=T`.
    pub fn forward_noise(&self, z0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        if t == 0 || t > self.steps() {
            return Err(HeroError::InvalidArgument(format!(
                "t = {t} outside [1, {}]",
                self.steps()
            )));
        }
        if z0.len() != eps.len() {
            return Err(crate::error::shape_err(
                "forward_noise",
                format!("z0 has {} entries, eps has {}", z0.len(), eps.len()),
            ));
        }
        let (a, s) = (self.alpha(t), self.sigma(t));
        Ok(z0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
    }
}
