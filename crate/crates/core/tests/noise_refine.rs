mod common;

use common::{normal_rows, rng};
use hero_core::autodiff::Tensor;
use hero_core::diffusion::{Denoiser, DenoiserConfig, NoiseSchedule, SamplerConfig};
use hero_core::noise_refine::{
    concentration_diagnostic, dependence_score, info_link_diagnostic, pi_hero_sample, shell_fraction,
    Component, PiHeroState,
};

const DRAWS: usize = 10_000;

fn state(dim: usize, beta: f64, n_goods: usize, seed: u64) -> PiHeroState {
    let mut r = rng(seed);
    let mut means = normal_rows(n_goods + 1, dim, &mut r);
    let best = means.pop();
    let mut s = PiHeroState::new(dim, beta, 0.1).unwrap();
    s.update(means, best);
    s
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn beta_one_only_draws_best() {
    for dim in [2, 1024] {
        let s = state(dim, 1.0, 5, 1);
        let best = s.best.clone().unwrap();
        let draws = s.sample_labeled(if dim == 2 { DRAWS } else { 2000 }, &mut rng(2)).unwrap();
        assert_eq!(draws.iter().filter(|(c, _)| matches!(c, Component::Good(_))).count(), 0);
        let radius = 1.3 * s.eps0_sq.sqrt() * (dim as f64).sqrt();
        let inside = draws.iter().filter(|(_, z)| dist(z, &best) <= radius).count() as f64 / draws.len() as f64;
        if dim == 2 {
            // |y - best|^2 / eps0^2 is chi-square with 2 degrees of freedom
            let p = 1.0 - (-0.5 * 1.3f64.powi(2) * 2.0).exp();
            let se = (p * (1.0 - p) / draws.len() as f64).sqrt();
            assert!((inside - p).abs() < 3.0 * se, "D=2: {inside} vs {p}");
        } else {
            assert!(inside >= 0.99, "D={dim}: {inside}");
        }
    }
}

#[test]
fn component_frequencies_match_mixture_weights() {
    for (beta, goods) in [(0.5, 3), (0.2, 4), (0.0, 3)] {
        let s = state(2, beta, goods, 3);
        let draws = s.sample_labeled(DRAWS, &mut rng(4)).unwrap();
        let mut expected: Vec<(Component, f64)> = (0..goods)
            .map(|i| (Component::Good(i), (1.0 - beta) / goods as f64))
            .collect();
        expected.push((Component::Best, beta));
        if beta == 0.0 {
            let w = 1.0 / (goods + 1) as f64;
            expected.iter_mut().for_each(|(_, p)| *p = w);
        }
        for (c, p) in expected {
            let f = draws.iter().filter(|(d, _)| *d == c).count() as f64 / DRAWS as f64;
            let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
            assert!((f - p).abs() < 3.0 * se, "beta {beta}, {c:?}: {f} vs {p}");
        }
    }
}

#[test]
fn first_iteration_matches_standard_normal_moments() {
    let s = PiHeroState::new(1024, 0.5, 0.1).unwrap();
    let n = 1000;
    let draws = pi_hero_sample(&s, n, &mut rng(5)).unwrap();
    let values: Vec<f64> = draws.iter().flatten().copied().collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    // standard errors of the sample mean and variance of N(0, 1)
    assert!(mean.abs() < 3.0 / m.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 3.0 * (2.0 / m).sqrt(), "var {var}");
    // per-coordinate means over the draws, spread as N(0, 1/n)
    let outside = (0..1024)
        .filter(|&j| {
            let mj = draws.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            mj.abs() > 3.0 / (n as f64).sqrt()
        })
        .count();
    assert!(outside < 10, "{outside} coordinates beyond 3 SE");
}

#[test]
fn diversity_shrinks_as_beta_grows() {
    let mean_pairwise = |beta: f64| {
        let s = state(8, beta, 4, 6);
        let z = pi_hero_sample(&s, 1500, &mut rng(7)).unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                total += dist(&z[i], &z[j]);
                count += 1;
            }
        }
        total / count as f64
    };
    let d: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&b| mean_pairwise(b)).collect();
    assert!(d[0] >= d[1] && d[1] >= d[2], "{d:?}");
}

#[test]
fn high_dimension_concentrates_low_dimension_does_not() {
    let high = concentration_diagnostic(1024, 0.1, 2000, 64, &mut rng(8)).unwrap();
    let low = concentration_diagnostic(2, 0.1, 2000, 64, &mut rng(8)).unwrap();
    assert!(high.fraction >= 0.99, "{}", high.fraction);
    assert!(low.fraction < 0.6, "{}", low.fraction);
}

#[test]
fn exact_sphere_means_without_noise_stay_on_shell() {
    let dim = 64;
    let mut r = rng(9);
    let signs = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| if rand::Rng::random::<bool>(r) { 1.0 } else { -1.0 }).collect()
    };
    let mut s = PiHeroState::new(dim, 0.5, 0.0).unwrap();
    s.update((0..5).map(|_| signs(&mut r)).collect(), Some(signs(&mut r)));
    let draws = pi_hero_sample(&s, 500, &mut r).unwrap();
    assert_eq!(shell_fraction(&draws, 0.0), 1.0);
}

/// `z_hat(z, t, c) = tanh(eps z) / eps`, close to the identity for small eps.
fn near_identity(dim: usize, eps: f64) -> Denoiser {
    let cfg = DenoiserConfig {
        dim,
        hidden: vec![dim],
        time_embed: 4,
        cond_embed: 2,
        n_conditions: 1,
        adapter_rank: 2,
    };
    let mut net = Denoiser::new(cfg, &mut rng(10));
    let inputs = dim + 4 + 2;
    let mut w0 = vec![0.0; inputs * dim];
    let mut w1 = vec![0.0; dim * dim];
    for i in 0..dim {
        w0[i * dim + i] = eps;
        w1[i * dim + i] = 1.0 / eps;
    }
    let mut set = |name: &str, shape: Vec<usize>, data: Vec<f64>| {
        net.params.get_mut(name).unwrap().tensor = Tensor::new(shape, data).unwrap();
    };
    set("base.l0.w", vec![inputs, dim], w0);
    set("base.l0.b", vec![dim], vec![0.0; dim]);
    set("base.l1.w", vec![dim, dim], w1);
    set("base.l1.b", vec![dim], vec![0.0; dim]);
    net
}

#[test]
fn one_step_near_identity_keeps_the_link() {
    let net = near_identity(2, 1e-3);
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let sampler = SamplerConfig {
        steps: 1,
        ..SamplerConfig::default()
    };
    let n = 1000;
    let report = info_link_diagnostic(&net, &sched, &sampler, 0, n, &mut rng(11)).unwrap();
    assert_eq!(report.steps, 1);
    assert!((report.threshold - 3.0 / (n as f64).sqrt()).abs() < 1e-15);
    assert!(report.score > 0.99, "{}", report.score);
    assert!(report.shuffled_score < report.threshold, "{}", report.shuffled_score);
}

#[test]
fn dependence_score_oracles() {
    let mut r = rng(12);
    let x = normal_rows(200, 3, &mut r);
    let affine: Vec<Vec<f64>> = x.iter().map(|row| vec![2.0 * row[0] + 1.0, -row[1], 0.5 - 3.0 * row[2]]).collect();
    assert!((dependence_score(&x, &affine) - 1.0).abs() < 1e-12);
    let constant = vec![vec![1.0, 1.0, 1.0]; 200];
    assert_eq!(dependence_score(&x, &constant), 0.0);
    let indep = normal_rows(200, 3, &mut r);
    assert!(dependence_score(&x, &indep) < 3.0 / 200f64.sqrt());
}

#[test]
fn diagnostics_reject_degenerate_inputs() {
    assert!(concentration_diagnostic(0, 0.1, 10, 4, &mut rng(0)).is_err());
    assert!(concentration_diagnostic(4, 0.1, 0, 4, &mut rng(0)).is_err());
    let net = near_identity(2, 1e-3);
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    assert!(info_link_diagnostic(&net, &sched, &SamplerConfig::default(), 0, 1, &mut rng(0)).is_err());
}
