//! `priormatch`: simulate, estimate, solve and match prior predictive
//! moments of Poisson matrix factorization models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{Run, Status};

#[derive(Parser)]
#[command(name = "priormatch", version, about = "Prior predictive matching for Poisson matrix factorization")]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a PMF, CPMF or HPF matrix; writes matrix.csv and matrix.json.
    Simulate(Overrides),
    /// Estimate mean, variance and correlations of a matrix; writes moments.json.
    Moments(Overrides),
    /// Closed-form hyperparameters from target moments; writes solution.json.
    Solve(Overrides),
    /// Stochastic moment matching; writes trace.csv and result.json.
    Match(Overrides),
    /// Compare estimator gradients with finite differences; prints JSON.
    Gradcheck(Overrides),
    /// Discrepancy over a hyperparameter grid; writes surface.csv.
    Surface(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// Config field overrides as `--key value` (dotted keys reach nested fields).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    rest: Vec<String>,
}

fn execute(cli: Cli) -> Result<Status> {
    let (name, rest) = match &cli.command {
        Command::Simulate(o) => ("simulate", &o.rest),
        Command::Moments(o) => ("moments", &o.rest),
        Command::Solve(o) => ("solve", &o.rest),
        Command::Match(o) => ("match", &o.rest),
        Command::Gradcheck(o) => ("gradcheck", &o.rest),
        Command::Surface(o) => ("surface", &o.rest),
    };
    let split = config::split_args(rest)?;
    let config_path = split.config.map(PathBuf::from).or(cli.config);
    let config = config::resolve(config_path.as_deref(), &split.overrides)?;
    let seed = match split.seed {
        Some(s) => Some(s.parse().context("--seed must be an unsigned integer")?),
        None => cli.seed,
    }
    .or_else(|| config.get("seed").and_then(|s| s.as_u64()))
    .unwrap_or(0);
    let threads = match split.threads {
        Some(t) => Some(t.parse().context("--threads must be a positive integer")?),
        None => cli.threads,
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let out = split.out.map(PathBuf::from).or(cli.out).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let config_dir = config_path.as_deref().and_then(|p| p.parent()).map(|p| p.to_path_buf());
    let run = Run { config, seed, out };
    match name {
        "simulate" => commands::simulate(&run),
        "moments" => commands::moments(&run, config_dir.as_deref()),
        "solve" => commands::solve(&run, config_dir.as_deref()),
        "match" => commands::run_match(&run),
        "gradcheck" => commands::gradcheck(&run),
        _ => commands::surface_grid(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Infeasible) => ExitCode::from(2),
        Err(e) => {
            let infeasible = e.downcast_ref::<priormatch_core::Error>().is_some_and(|e| e.is_infeasible());
            eprintln!("error: {e:#}");
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}
