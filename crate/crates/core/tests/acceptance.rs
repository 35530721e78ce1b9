//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! values, followed by a few extra checks on the default model. Exits
//! nonzero when anything fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{normal_rows, rng, short_schedule, tiny_adapted, tiny_denoiser_config};
use hero_core::autodiff::{finite_diff_gradcheck, Tensor};
use hero_core::ddpo::{ddpo_k_loss_graph, DdpoConfig};
use hero_core::diffusion::{denoising_loss, sample_trajectory, transition_logprob, Denoiser, SamplerConfig};
use hero_core::feedback::{
    load_feedback, success_rate, BatchAnnotation, FeedbackProvider, OracleProvider, OracleSpec,
    PendingBatch,
};
use hero_core::noise_refine::{concentration_diagnostic, info_link_diagnostic};
use hero_core::orchestrator::{
    ablate, evaluate, generate_final, generate_samples, hero_train_with, load_metrics, load_model, pretrain_base, replay_run_state,
    AblationGrid, AblationReport, RunCheckpoint, RunConfig,
};
use hero_core::representation::{
    rewards_binary, rewards_similarity_to_best, rewards_similarity_to_positives, EmbeddingConfig,
    FeedbackEmbedding, RewardVariant, TripletBatch,
};
use rand::Rng;

type Outcome = Result<(bool, String), String>;

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, name: &str, outcome: Outcome) {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- gradients

fn gradcheck_pretraining() -> hero_core::Result<f64> {
    let mut r = rng(3);
    let net = Denoiser::new(tiny_denoiser_config(2), &mut r);
    let sched = short_schedule();
    let z0 = normal_rows(4, 2, &mut r);
    let eps = normal_rows(4, 2, &mut r);
    let t = vec![1, 4, 7, 10];
    let cond = vec![0, 1, 0, 0];
    let z_t: Vec<Vec<f64>> = z0
        .iter()
        .zip(&eps)
        .zip(&t)
        .map(|((z, e), &ti)| sched.forward_noise(z, ti, e))
        .collect::<hero_core::Result<_>>()?;
    finite_diff_gradcheck(
        |p, g| {
            let zv = g.constant_rows(&z_t)?;
            let target = g.constant_rows(&z0)?;
            let pred = net.forward_with(p, g, zv, &t, &cond)?;
            denoising_loss(g, pred, target, 2)
        },
        &net.params,
        1e-5,
    )
}

fn gradcheck_triplet() -> hero_core::Result<f64> {
    let mut r = rng(4);
    let cfg = EmbeddingConfig {
        hidden: vec![5],
        width: 4,
        projection: 3,
        ..EmbeddingConfig::default()
    };
    let emb = FeedbackEmbedding::new(2, cfg, &mut r);
    let batch = TripletBatch {
        anchor: vec![0.5, -0.3],
        positives: normal_rows(3, 2, &mut r),
        negatives: normal_rows(3, 2, &mut r),
        margin: 0.5,
    };
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|p| (0..3).map(move |n| (p, n))).collect();
    finite_diff_gradcheck(
        |p, g| {
            let e = FeedbackEmbedding {
                params: p.clone(),
                ..emb.clone()
            };
            e.triplet_loss_graph(g, &batch, &pairs)
        },
        &emb.params,
        1e-5,
    )
}

fn gradcheck_ddpo(clip: f64) -> hero_core::Result<f64> {
    let old = tiny_adapted(2, 5);
    let sched = short_schedule();
    let sampler = SamplerConfig {
        steps: 2,
        ..SamplerConfig::default()
    };
    let mut r = rng(6);
    let traj = sample_trajectory(&old, &sched, &[0.8, -1.1], 0, &sampler, &mut r)?;
    let mut live = old.clone();
    common::randomize_adapters(&mut live, 0.3, &mut r);
    for (name, p) in live.params.iter_mut() {
        let o = old.params.tensor(name)?;
        let moved = o.data().iter().zip(p.tensor.data()).map(|(a, b)| a + 0.1 * b).collect();
        p.tensor = Tensor::new(o.shape().to_vec(), moved)?;
    }
    let cfg = DdpoConfig {
        clip,
        k: 1,
        ..DdpoConfig::default()
    };
    finite_diff_gradcheck(
        |p, g| {
            let mut net = live.clone();
            net.params = p.clone();
            Ok(ddpo_k_loss_graph(g, &net, &old.params, &sched, &sampler, &[&traj], &[1.0], &cfg)?.loss)
        },
        &live.params,
        1e-5,
    )
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let e = |r: hero_core::Result<f64>| r.map_err(|e| e.to_string());
    let errs = [
        ("pretraining", e(gradcheck_pretraining())?),
        ("triplet", e(gradcheck_triplet())?),
        ("ddpo-k inside clip", e(gradcheck_ddpo(0.5))?),
        ("ddpo-k outside clip", e(gradcheck_ddpo(1e-4))?),
    ];
    let took = start.elapsed();
    let pass = errs.iter().all(|(_, v)| *v < 1e-4) && took < Duration::from_secs(30);
    let detail = errs.iter().map(|(n, v)| format!("{n} {v:.2e}")).collect::<Vec<_>>().join(", ");
    Ok((pass, format!("{detail} (tol 1e-4), {}", secs(took))))
}

// ---------------------------------------------------------------- log-prob

fn direct_logprob(mean: &[f64], std: f64, z: &[f64]) -> f64 {
    let mut density = 1.0;
    for (m, x) in mean.iter().zip(z) {
        let u = (x - m) / std;
        density *= (-0.5 * u * u).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
    }
    density.ln()
}

fn logprob_oracle() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let dim = r.random_range(1..=6);
        let std = r.random_range(0.05..3.0);
        let mean: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let z: Vec<f64> = mean.iter().map(|m| m + std * r.random_range(-2.5..2.5)).collect();
        let got = transition_logprob(&mean, std, &z).map_err(|e| e.to_string())?;
        worst = worst.max((got - direct_logprob(&mean, std, &z)).abs());
    }
    Ok((worst <= 1e-12, format!("max |diff| {worst:.2e} over 100 cases (tol 1e-12)")))
}

// ---------------------------------------------------------------- diagnostics

fn shell_concentration() -> Outcome {
    let start = Instant::now();
    let rep = concentration_diagnostic(1024, 0.1, 10_000, 64, &mut rng(0)).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    Ok((
        rep.fraction >= 0.99 && took < Duration::from_secs(10),
        format!("in-shell fraction {:.4} (need >= 0.99), {}", rep.fraction, secs(took)),
    ))
}

fn information_link(base: &Path) -> Outcome {
    let start = Instant::now();
    let m = load_model(base).map_err(|e| e.to_string())?;
    let sampler = SamplerConfig { steps: 50, ..m.sampler };
    let rep = info_link_diagnostic(&m.net, &m.schedule, &sampler, m.condition, 1000, &mut rng(0))
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    Ok((
        rep.score > rep.threshold && rep.shuffled_score < rep.threshold && took < Duration::from_secs(120),
        format!(
            "score {:.4}, shuffled {:.4}, threshold {:.4}, {}",
            rep.score,
            rep.shuffled_score,
            rep.threshold,
            secs(took)
        ),
    ))
}

// ---------------------------------------------------------------- rewards

#[derive(Default)]
struct RewardAudit {
    epochs: usize,
    best_exact: usize,
    with_best: usize,
    cosine_out_of_range: usize,
    binary_bad: usize,
    worst_scale_diff: f64,
}

impl RewardAudit {
    /// Recomputes the rewards of the last logged epoch with the embedding
    /// checkpointed at the end of that epoch.
    fn audit(&mut self, run_dir: &Path) -> hero_core::Result<()> {
        let ck = RunCheckpoint::load(run_dir)?;
        let entry = load_feedback(run_dir)?.pop().expect("an epoch was logged");
        self.epochs += 1;
        let ann = entry.annotation()?;
        let z0: Vec<Vec<f64>> = entry.records.iter().map(|r| r.z0.clone()).collect();
        let binary = rewards_binary(&ann);
        self.binary_bad += binary.values.iter().filter(|&&v| v != 0.0 && v != 1.0).count();
        let Some(best) = ann.best else { return Ok(()) };
        self.with_best += 1;
        let pos = entry.records.iter().position(|r| r.id == best).expect("best is logged");
        let goods: Vec<Vec<f64>> = entry.records.iter().filter(|r| r.good).map(|r| r.z0.clone()).collect();
        let emb = &ck.embedding;
        let r = rewards_similarity_to_best(emb, &z0, &z0[pos])?;
        if r.values[pos] == 1.0 {
            self.best_exact += 1;
        }
        let p = rewards_similarity_to_positives(emb, &z0, &goods)?;
        self.cosine_out_of_range += r
            .values
            .iter()
            .chain(&p.values)
            .filter(|v| !(-1.0..=1.0).contains(*v))
            .count();
        let last = format!("embed.l{}", emb.config.hidden.len());
        for lambda in [1e-3, 0.5, 7.0, 1e3] {
            let mut scaled = emb.clone();
            for suffix in ["w", "b"] {
                let t = &mut scaled.params.get_mut(&format!("{last}.{suffix}"))?.tensor;
                t.data_mut().iter_mut().for_each(|v| *v *= lambda);
            }
            let rs = rewards_similarity_to_best(&scaled, &z0, &z0[pos])?;
            let ps = rewards_similarity_to_positives(&scaled, &z0, &goods)?;
            for (a, b) in r.values.iter().zip(&rs.values).chain(p.values.iter().zip(&ps.values)) {
                self.worst_scale_diff = self.worst_scale_diff.max((a - b).abs());
            }
        }
        Ok(())
    }
}

/// Oracle annotator that audits the previous epoch before answering.
struct AuditingOracle {
    inner: OracleProvider,
    run_dir: PathBuf,
    audit: RewardAudit,
}

impl FeedbackProvider for AuditingOracle {
    fn annotate(&mut self, batch: &PendingBatch) -> hero_core::Result<BatchAnnotation> {
        if batch.epoch > 0 {
            self.audit.audit(&self.run_dir)?;
        }
        self.inner.annotate(batch)
    }
}

// ---------------------------------------------------------------- runs

struct SeedRun {
    seed: u64,
    final_success: f64,
    eval_1000: f64,
    took: Duration,
    config: RunConfig,
}

fn run_seed(base: &RunConfig, root: &Path, seed: u64, audit: &mut RewardAudit) -> Result<SeedRun, String> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.run_dir = root.join(format!("e2e/seed{seed}"));
    let oracle = cfg.oracle().cloned().ok_or("config has no oracle")?;
    let mut provider = AuditingOracle {
        inner: OracleProvider(oracle.clone()),
        run_dir: cfg.run_dir.clone(),
        audit: std::mem::take(audit),
    };
    let start = Instant::now();
    let summary = hero_train_with(&cfg, &mut provider).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    provider.audit.audit(&cfg.run_dir).map_err(|e| e.to_string())?;
    *audit = provider.audit;
    let eval = evaluate(&cfg.run_dir, &oracle, 1000).map_err(|e| e.to_string())?;
    Ok(SeedRun {
        seed,
        final_success: summary.final_success.ok_or("no final success")?,
        eval_1000: eval.success_rate,
        took,
        config: cfg,
    })
}

fn reward_contract(audit: &RewardAudit) -> Outcome {
    let pass = audit.epochs > 0
        && audit.best_exact == audit.with_best
        && audit.cosine_out_of_range == 0
        && audit.binary_bad == 0
        && audit.worst_scale_diff <= 1e-9;
    Ok((
        pass,
        format!(
            "best reward exactly 1.0 in {}/{} epochs with a best ({} epochs audited), {} cosines outside [-1, 1], \
             {} binary rewards outside {{0, 1}}, max change under rescaling {:.2e} (tol 1e-9)",
            audit.best_exact,
            audit.with_best,
            audit.epochs,
            audit.cosine_out_of_range,
            audit.binary_bad,
            audit.worst_scale_diff
        ),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn end_to_end(base_dir: &Path, runs: &[SeedRun]) -> Outcome {
    let oracle = OracleSpec::mode(0);
    let baseline = evaluate(base_dir, &oracle, 1000).map_err(|e| e.to_string())?.success_rate;
    let med = median(runs.iter().map(|r| r.final_success).collect());
    let med_1000 = median(runs.iter().map(|r| r.eval_1000).collect());
    let slowest = runs.iter().map(|r| r.took).max().unwrap_or_default();
    let pass = (baseline - 0.125).abs() <= 0.01
        && runs.len() == 3
        && med >= 0.60
        && slowest < Duration::from_secs(600);
    let per_seed = runs
        .iter()
        .map(|r| format!("seed {} {:.3} ({:.3} on 1000, {})", r.seed, r.final_success, r.eval_1000, secs(r.took)))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((
        pass,
        format!(
            "baseline {baseline:.3} (0.125 +/- 0.01), median final {med:.3} (need >= 0.60; {med_1000:.3} on 1000 samples); {per_seed}"
        ),
    ))
}

fn ablation_directions(base: &RunConfig, root: &Path) -> Outcome {
    let run = |name: &str, spec: &str| -> Result<AblationReport, String> {
        let mut cfg = base.clone();
        cfg.run_dir = root.join("ablate").join(name);
        ablate(&cfg, &AblationGrid::parse(spec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    let start = Instant::now();
    let variants = run("variants", "variant=best,binary;beta=0.5;prior=refined;seeds=0,1,2")?;
    let priors = run("priors", "variant=best;beta=0.5;prior=random;seeds=0,1,2")?;
    let betas = run("betas", "variant=best;beta=1;prior=refined;seeds=0,1,2")?;
    let cell = |r: &AblationReport, v: RewardVariant, beta: f64, refined: bool| {
        r.find(v, beta, refined).cloned().ok_or_else(|| "missing ablation cell".to_string())
    };
    let best = cell(&variants, RewardVariant::Best, 0.5, true)?;
    let binary = cell(&variants, RewardVariant::Binary, 0.5, true)?;
    let random = cell(&priors, RewardVariant::Best, 0.5, false)?;
    let greedy = cell(&betas, RewardVariant::Best, 1.0, true)?;
    let (fb, fbin) = (best.mean_final(), binary.mean_final());
    let (er, erand) = (best.median_epochs_to(0.5), random.median_epochs_to(0.5));
    let (v1, v05) = (greedy.early_variance(3), best.early_variance(3));
    let checks = [fb >= fbin, er < erand, v1 >= v05];
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "mean final best {fb:.3} vs binary {fbin:.3} [{}]; median epochs to 0.5 refined {er} vs random {erand} [{}]; \
             early variance beta=1 {v1:.4} vs beta=0.5 {v05:.4} [{}]; {}",
            mark(checks[0]),
            mark(checks[1]),
            mark(checks[2]),
            secs(start.elapsed())
        ),
    ))
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

fn persistence(runs: &[SeedRun]) -> Outcome {
    let mut details = Vec::new();
    let mut pass = !runs.is_empty();
    for r in runs {
        let cfg = &r.config;
        let e = |x: hero_core::HeroError| x.to_string();
        let ck = RunCheckpoint::load(&cfg.run_dir).map_err(e)?;
        let replayed = replay_run_state(cfg).map_err(e)?;
        let rows = load_metrics(&cfg.run_dir).map_err(e)?.len();
        let same = replayed == ck.state;
        let ok = same
            && replayed.epoch == ck.state.epoch
            && replayed.n_fb == ck.state.n_fb
            && replayed.prior.best == ck.state.prior.best
            && replayed.prior.goods == ck.state.prior.goods
            && rows == ck.state.epoch;
        pass &= ok;
        details.push(format!(
            "seed {}: epoch {}, n_fb {}, {} good means, {} metrics rows, state {}",
            r.seed,
            replayed.epoch,
            replayed.n_fb,
            replayed.prior.goods.len(),
            rows,
            if same { "identical" } else { "differs" }
        ));
    }
    Ok((pass, details.join("; ")))
}

fn budget(base: &RunConfig, root: &Path, runs: &[SeedRun]) -> Outcome {
    let mut cfg = base.clone();
    cfg.run_dir = root.join("budget-rejecting");
    cfg.final_eval_samples = 0;
    let nowhere = OracleSpec::Region {
        center: vec![100.0, 100.0],
        radius: 0.1,
    };
    let summary = hero_train_with(&cfg, &mut OracleProvider(nowhere)).map_err(|e| e.to_string())?;
    let entries = load_feedback(&cfg.run_dir).map_err(|e| e.to_string())?.len();
    let skipped = summary.metrics.iter().filter(|m| m.skipped).count();
    let mut pass = cfg.budget == 512 && cfg.batch == 64;
    pass &= summary.state.epoch == 8 && entries == 8 && skipped == 8;
    let mut detail = format!(
        "all-rejecting run: {} epochs, {entries} log entries, {skipped} empty-good epochs",
        summary.state.epoch
    );
    for r in runs {
        let n = load_feedback(&r.config.run_dir).map_err(|e| e.to_string())?.len();
        let epochs = RunCheckpoint::load(&r.config.run_dir).map_err(|e| e.to_string())?.state.epoch;
        pass &= n == 8 && epochs == 8;
        detail.push_str(&format!("; seed {}: {epochs} epochs, {n} entries", r.seed));
    }
    Ok((pass, detail))
}

// ---------------------------------------------------------------- extras

fn pretrained_quality(base_dir: &Path, loss: &[f64]) -> Outcome {
    let m = load_model(base_dir).map_err(|e| e.to_string())?;
    let samples = generate_samples(&m.net, &m.schedule, &m.sampler, None, 0, 64, &mut rng(7))
        .map_err(|e| e.to_string())?;
    let modes = RunConfig::default().dataset.modes();
    let near = samples
        .iter()
        .filter(|z| modes.iter().any(|c| ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)).sqrt() <= 0.3))
        .count();
    let k = 100.min(loss.len() / 2);
    let head = loss[..k].iter().sum::<f64>() / k as f64;
    let tail = loss[loss.len() - k..].iter().sum::<f64>() / k as f64;
    Ok((
        near as f64 >= 0.8 * 64.0 && tail < head,
        format!("{near}/64 samples within 3 std of a mode (need >= 80%), loss {head:.4} -> {tail:.4}"),
    ))
}

fn refined_vs_standard(runs: &[SeedRun]) -> Outcome {
    let oracle = OracleSpec::mode(0);
    let mut refined = Vec::new();
    let mut standard = Vec::new();
    for r in runs {
        for (flag, out) in [(true, &mut refined), (false, &mut standard)] {
            let (_, file) = generate_final(&r.config.run_dir, 1000, flag).map_err(|e| e.to_string())?;
            out.push(success_rate(&file.samples, &oracle).map_err(|e| e.to_string())?);
        }
    }
    let (a, b) = (median(refined.clone()), median(standard.clone()));
    Ok((
        runs.len() == 3 && a >= b,
        format!("median success refined {a:.3} vs standard {b:.3} over 1000 samples per seed ({refined:.3?} vs {standard:.3?})"),
    ))
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let mut report = Report { failed: 0 };

    report.record("gradient integrity", gradient_integrity());
    report.record("log-prob oracle", logprob_oracle());
    report.record("shell concentration (D=1024)", shell_concentration());

    let mut base = RunConfig::default();
    base.base_checkpoint = root.path().join("base/model.json");
    base.run_dir = root.path().join("run");
    let base_dir = root.path().join("base");
    let start = Instant::now();
    let loss = match pretrain_base(&base, &base_dir) {
        Ok(ck) => ck.loss_history,
        Err(e) => {
            println!("FAIL pretraining the default model: {e}");
            std::process::exit(1);
        }
    };
    println!("(pretrained the default model in {})", secs(start.elapsed()));

    report.record("noise/sample information link", information_link(&base_dir));

    let mut audit = RewardAudit::default();
    let mut runs = Vec::new();
    let mut run_error = None;
    for seed in 0..3 {
        match run_seed(&base, root.path(), seed, &mut audit) {
            Ok(r) => runs.push(r),
            Err(e) => run_error = Some(e),
        }
    }
    let with_runs = |o: Outcome| match &run_error {
        Some(e) => Err(format!("training run failed: {e}")),
        None => o,
    };
    report.record("reward contract", with_runs(reward_contract(&audit)));
    report.record("end-to-end efficiency", with_runs(end_to_end(&base_dir, &runs)));
    report.record("ablation directions", ablation_directions(&base, root.path()));
    report.record("persistence", with_runs(persistence(&runs)));
    report.record("budget accounting", with_runs(budget(&base, root.path(), &runs)));
    report.record("extra: pretrained sample quality", pretrained_quality(&base_dir, &loss));
    report.record("extra: refined vs standard prior generation", with_runs(refined_vs_standard(&runs)));

    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
