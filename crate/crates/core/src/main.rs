use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hero_core::diffusion::SamplerConfig;
use hero_core::feedback::OracleSpec;
use hero_core::noise_refine::{concentration_diagnostic, info_link_diagnostic};
use hero_core::orchestrator::{
    ablate, evaluate, generate_final, hero_train, load_model, pretrain_base, AblationGrid,
    FeedbackSource, RunConfig,
};

#[derive(Parser)]
#[command(name = "hero", version, about = "Feedback-driven fine-tuning of a toy diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a base denoiser and write DIR/model.json.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune from feedback until the budget is spent.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Take feedback over HTTP on this port instead of the configured source.
        #[arg(long)]
        serve: Option<u16>,
    },
    /// Sample from a finished run.
    Generate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        standard_prior: bool,
    },
    /// Score fresh samples from a run or a pretrained model.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        oracle: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Train every cell of a grid, e.g. `variant=best,binary;beta=0.5;prior=refined;seeds=0,1,2`.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "")]
        grid: String,
    },
    /// Diagnostics for the refined prior.
    Diag {
        #[command(subcommand)]
        which: Diag,
    },
}

#[derive(Subcommand)]
enum Diag {
    /// Shell concentration of mixture samples.
    Concentration {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        eps2: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dependence between initial noise and final sample.
    InfoLink {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Pretrain { config, out } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => RunConfig::default(),
            };
            let ck = pretrain_base(&cfg, &out)?;
            let tail = ck.loss_history.iter().rev().take(100).sum::<f64>()
                / ck.loss_history.len().clamp(1, 100) as f64;
            println!("wrote {} (final loss {tail:.4})", out.join("model.json").display());
        }
        Command::Train { config, serve } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(port) = serve {
                cfg.feedback = FeedbackSource::Service { port };
            }
            let summary = hero_train(&cfg)?;
            print_json(&serde_json::json!({
                "epochs": summary.state.epoch,
                "n_fb": summary.state.n_fb,
                "success_history": summary.state.success_history,
                "final_success": summary.final_success,
            }))?;
        }
        Command::Generate {
            run,
            n,
            standard_prior,
        } => {
            let (path, file) = generate_final(&run, n, !standard_prior)?;
            println!("wrote {} samples to {}", file.samples.len(), path.display());
        }
        Command::Eval { run, oracle, n } => {
            let oracle = OracleSpec::named(&oracle)?;
            print_json(&evaluate(&run, &oracle, n)?)?;
        }
        Command::Ablate { config, grid } => {
            let cfg = RunConfig::load(&config)?;
            let report = ablate(&cfg, &AblationGrid::parse(&grid)?)?;
            print!("{}", report.table());
        }
        Command::Diag { which } => match which {
            Diag::Concentration {
                dim,
                eps2,
                n,
                components,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                print_json(&concentration_diagnostic(dim, eps2, n, components, &mut rng)?)?;
            }
            Diag::InfoLink { run, steps, n, seed } => {
                let m = load_model(&run)?;
                let sampler = SamplerConfig { steps, ..m.sampler };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                print_json(&info_link_diagnostic(&m.net, &m.schedule, &sampler, m.condition, n, &mut rng)?)?;
            }
        },
    }
    Ok(())
}
