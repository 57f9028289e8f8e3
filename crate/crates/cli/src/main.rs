use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use swarmopt_cli::{commands, CliError, ExperimentConfig};

/// Thread count for the worker pool; unset means one per core.
const THREADS_ENV: &str = "SWARMOPT_THREADS";

#[derive(Parser)]
#[command(name = "swarmopt", version, about = "Train and benchmark a learned swarm optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a meta-optimizer; resumes from a checkpoint in --out.
    Train(Common),
    /// Compare optimizers on a test battery.
    Evaluate(Common),
    /// Run checkpoints trained at different wave amplitudes on Rastrigin.
    Transfer(Common),
    /// Run the ablation ladder.
    Ablate(Common),
    /// Export attention diagnostics and sample paths.
    Interpret(Common),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (Command::Train(c) | Command::Evaluate(c) | Command::Transfer(c) | Command::Ablate(c) | Command::Interpret(c)) = &cli.command;
    let cfg = ExperimentConfig::load(&c.config, c.seed)?;
    let out = &c.out;
    match &cli.command {
        Command::Train(_) => {
            let ck = commands::train(&cfg, out)?;
            println!("trained {} epochs -> {}", ck.epoch, out.join(commands::CHECKPOINT_FILE).display());
        }
        Command::Evaluate(_) => report(&commands::evaluate(&cfg, out)?),
        Command::Transfer(_) => report(&commands::transfer(&cfg, out)?),
        Command::Ablate(_) => {
            let r = commands::ablate(&cfg, out)?;
            report(&r.results);
            for (a, b, t) in &r.tests {
                println!("{a} vs {b}: U = {}, p = {:.4}", t.u, t.p);
            }
        }
        Command::Interpret(_) => {
            let r = commands::interpret(&cfg, out)?;
            if let Some(last) = r.trace_share.last() {
                println!("trace share at iteration {}: {last:.3}", r.trace_share.len());
            }
        }
    }
    Ok(())
}

fn report(results: &[swarmopt_cli::eval::MethodResult]) {
    for r in results {
        let (m, s) = r.final_mean_std();
        println!("{:<10} {m:.4} ± {s:.4}", r.name);
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
