//! Grid of training runs over reward variant, best ratio and prior, with
//! shared seeds so cells are paired.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::train::hero_train;
use super::RunConfig;
use crate::error::{HeroError, Result};
use crate::representation::RewardVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub variants: Vec<RewardVariant>,
    pub betas: Vec<f64>,
    /// `true` for the refined prior, `false` for the standard one.
    pub priors: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            variants: RewardVariant::ALL.to_vec(),
            betas: vec![0.0, 0.5, 1.0],
            priors: vec![true, false],
            seeds: vec![0, 1, 2],
        }
    }
}

impl AblationGrid {
    /// Parses `variant=best,binary;beta=0.5,1;prior=refined,random;seeds=0,1,2`.
    /// Omitted keys keep their defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = Self::default();
        let bad = |m: String| HeroError::InvalidArgument(m);
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("grid entry `{part}` lacks `=`")))?;
            let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if items.is_empty() {
                return Err(bad(format!("grid entry `{key}` has no values")));
            }
            match key.trim() {
                "variant" | "variants" => {
                    grid.variants = items.iter().map(|v| v.parse()).collect::<Result<_>>()?
                }
                "beta" | "betas" => {
                    grid.betas = items
                        .iter()
                        .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad beta `{v}`"))))
                        .collect::<Result<_>>()?
                }
                "prior" | "priors" => {
                    grid.priors = items
                        .iter()
                        .map(|v| match *v {
                            "refined" => Ok(true),
                            "random" | "standard" => Ok(false),
                            _ => Err(bad(format!("bad prior `{v}`"))),
                        })
                        .collect::<Result<_>>()?
                }
                "seed" | "seeds" => {
                    grid.seeds = items
                        .iter()
                        .map(|v| v.parse::<u64>().map_err(|_| bad(format!("bad seed `{v}`"))))
                        .collect::<Result<_>>()?
                }
                other => return Err(bad(format!("unknown grid key `{other}`"))),
            }
        }
        Ok(grid)
    }

    fn cells(&self) -> Vec<(RewardVariant, f64, bool)> {
        let mut out = Vec::new();
        for &v in &self.variants {
            for &b in &self.betas {
                for &p in &self.priors {
                    out.push((v, b, p));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub final_success: f64,
    pub success_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: RewardVariant,
    pub beta: f64,
    pub refined_prior: bool,
    pub runs: Vec<AblationRun>,
}

/// First epoch count at which the batch success reaches `level`.
pub fn epochs_to_reach(history: &[f64], level: f64) -> Option<usize> {
    history.iter().position(|&s| s >= level).map(|i| i + 1)
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!(
            "{}-beta{}-{}",
            self.variant.name(),
            self.beta,
            if self.refined_prior { "refined" } else { "random" }
        )
    }

    pub fn mean_final(&self) -> f64 {
        self.runs.iter().map(|r| r.final_success).sum::<f64>() / self.runs.len().max(1) as f64
    }

    /// Median over seeds of the epochs needed to reach `level`; runs that
    /// never reach it count as infinitely slow.
    pub fn median_epochs_to(&self, level: f64) -> f64 {
        let mut e: Vec<f64> = self
            .runs
            .iter()
            .map(|r| epochs_to_reach(&r.success_history, level).map_or(f64::INFINITY, |e| e as f64))
            .collect();
        if e.is_empty() {
            return f64::INFINITY;
        }
        e.sort_by(f64::total_cmp);
        let n = e.len();
        if n % 2 == 1 {
            e[n / 2]
        } else {
            (e[n / 2 - 1] + e[n / 2]) / 2.0
        }
    }

    /// Cross-seed variance of batch success, averaged over the first
    /// `epochs` epochs.
    pub fn early_variance(&self, epochs: usize) -> f64 {
        let per_epoch: Vec<f64> = (0..epochs)
            .map(|e| {
                let v: Vec<f64> = self
                    .runs
                    .iter()
                    .filter_map(|r| r.success_history.get(e).copied())
                    .collect();
                sample_variance(&v)
            })
            .collect();
        per_epoch.iter().sum::<f64>() / epochs.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn find(&self, variant: RewardVariant, beta: f64, refined: bool) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.beta == beta && c.refined_prior == refined)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("cell                              mean_final  epochs_to_0.5  early_var\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{:<34}{:>10.3}  {:>13}  {:>9.4}\n",
                c.label(),
                c.mean_final(),
                c.median_epochs_to(0.5),
                c.early_variance(3)
            ));
        }
        s
    }
}

/// Runs every cell of `grid` for every seed, in parallel, each in its own
/// subdirectory of `config.run_dir`.
pub fn ablate(config: &RunConfig, grid: &AblationGrid) -> Result<AblationReport> {
    if config.oracle().is_none() {
        return Err(HeroError::InvalidArgument("ablations need an oracle feedback source".into()));
    }
    let jobs: Vec<(usize, RunConfig)> = grid
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(ci, (variant, beta, refined))| {
            grid.seeds.iter().map(move |&seed| {
                let mut c = config.clone();
                c.reward = variant;
                c.prior.beta = beta;
                c.prior.refined = refined;
                c.seed = seed;
                c.run_dir = run_dir_for(&config.run_dir, variant, beta, refined, seed);
                (ci, c)
            }).collect::<Vec<_>>()
        })
        .collect();
    let results = run_parallel(&jobs)?;
    let mut cells: Vec<AblationCell> = grid
        .cells()
        .into_iter()
        .map(|(variant, beta, refined_prior)| AblationCell {
            variant,
            beta,
            refined_prior,
            runs: Vec::new(),
        })
        .collect();
    for ((ci, cfg), (final_success, history)) in jobs.iter().zip(results) {
        cells[*ci].runs.push(AblationRun {
            seed: cfg.seed,
            final_success,
            success_history: history,
        });
    }
    let report = AblationReport { cells };
    std::fs::create_dir_all(&config.run_dir)?;
    crate::diffusion::write_json_atomic(&config.run_dir.join("ablation.json"), &report)?;
    Ok(report)
}

fn run_parallel(jobs: &[(usize, RunConfig)]) -> Result<Vec<(f64, Vec<f64>)>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<(f64, Vec<f64>)>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((_, cfg)) = jobs.get(i) else { break };
                let out = hero_train(cfg).map(|sum| {
                    (
                        sum.final_success.unwrap_or(0.0),
                        sum.state.success_history,
                    )
                });
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .unwrap_or_else(|| Err(HeroError::Service("ablation worker did not finish".into())))
        })
        .collect()
}

/// Directory of one ablation run.
pub fn run_dir_for(root: &std::path::Path, variant: RewardVariant, beta: f64, refined: bool, seed: u64) -> PathBuf {
    root.join(format!(
        "{}-beta{beta}-{}",
        variant.name(),
        if refined { "refined" } else { "random" }
    ))
    .join(format!("seed{seed}"))
}
