use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use selfdistill::experiment::selfcheck::run_selfcheck;
use selfdistill::experiment::{
    run_constrained, run_experiment, run_sweep, spectral_report, ExperimentConfig, RawConfig,
};

#[derive(Parser)]
#[command(
    name = "selfdistill",
    version,
    about = "Self-distillation chains for kernel ridge regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distillation chains
    #[command(subcommand)]
    Distill(DistillCmd),
    /// Shrinkage diagnostics
    #[command(subcommand)]
    Spectral(SpectralCmd),
    /// Loss-constrained variant
    #[command(subcommand)]
    Constrained(ConstrainedCmd),
    /// Run the invariant suite on random instances
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(Subcommand)]
enum DistillCmd {
    /// Run one chain per alpha and write predictions, targets, B diagonals and ratios
    Run(ConfigArgs),
    /// Summarize chains per step in sweep.csv
    Sweep(ConfigArgs),
}

#[derive(Subcommand)]
enum SpectralCmd {
    /// Write eigenvalues, B diagonals, ratios and contraction factors
    Report(ConfigArgs),
}

#[derive(Subcommand)]
enum ConstrainedCmd {
    /// Run the constrained chain (needs epsilon and a single alpha)
    Run(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. --set alpha=0,0.35 (repeatable)
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (same as --set out=DIR)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Render SVG plots from the CSV tables
    #[arg(long)]
    plots: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        for assignment in &self.set {
            raw.set_assignment(assignment)?;
        }
        if let Some(out) = &self.out {
            raw.set("out", &out.to_string_lossy())?;
        }
        if self.plots {
            raw.set("plots", "true")?;
        }
        Ok(raw.build()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Distill(DistillCmd::Run(args)) => {
            let cfg = args.resolve()?;
            let run = run_experiment(&cfg).context("distill run failed")?;
            for c in &run.chains {
                match c.chain.converged_at() {
                    Some(t) => println!("alpha={} converged at step {t}", c.alpha),
                    None => println!("alpha={} not converged after {} steps", c.alpha, cfg.steps),
                }
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Distill(DistillCmd::Sweep(args)) => {
            let cfg = args.resolve()?;
            let rows = run_sweep(&cfg).context("distill sweep failed")?;
            for alpha in &cfg.alphas {
                let first = rows.iter().find(|r| r.alpha == *alpha && r.converged).map(|r| r.step);
                println!("alpha={alpha} first converged step: {first:?}");
            }
            println!("wrote {}", cfg.output_dir.join("sweep.csv").display());
        }
        Command::Spectral(SpectralCmd::Report(args)) => {
            let cfg = args.resolve()?;
            spectral_report(&cfg).context("spectral report failed")?;
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Constrained(ConstrainedCmd::Run(args)) => {
            let cfg = args.resolve()?;
            let report = run_constrained(&cfg).context("constrained run failed")?;
            let c = &report.classification;
            println!(
                "regime {} (energy {:e}, epsilon {:e}, epsilon/alpha {:e})",
                c.regime, c.energy, c.epsilon, c.upper
            );
            if let Some(e) = &report.error {
                println!("stopped early: {e}");
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Selfcheck { seed, instances } => {
            if instances == 0 {
                bail!("--instances must be positive");
            }
            let outcomes = run_selfcheck(seed, instances)?;
            let mut failed = 0;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
