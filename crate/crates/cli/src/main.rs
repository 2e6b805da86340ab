//! `shapelab`: simulate, estimate speeds and shapes, and verify the process
//! properties from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::UsageError;
use config::{Flags, VerifyFlags};
use shapelab_core::io::RunManifest;
use shapelab_core::replicas::Execution;

#[derive(Parser)]
#[command(name = "shapelab", version, about = "A/B infection process on Z^d: simulation and shape estimates")]
struct Cli {
    /// Run replicas on one thread even when built with the pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicas and record fronts, final state and optional event logs.
    Simulate(#[command(flatten)] Flags),
    /// Directional speeds over a direction grid and the resulting shape.
    Estimate(#[command(flatten)] Flags),
    /// Property suite; exits 1 when any property fails or is left unjudged.
    Verify {
        #[command(flatten)]
        flags: Flags,
        #[command(flatten)]
        verify: VerifyFlags,
    },
    /// Re-run a manifest into a fresh directory.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SHAPELAB_WORKERS")]
        workers: Option<usize>,
    },
}

fn init_pool(workers: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the worker pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let (replay, out, workers) = match cli.command {
        Command::Simulate(f) => split(config::resolve("simulate", &f, None)?),
        Command::Estimate(f) => split(config::resolve("estimate", &f, None)?),
        Command::Verify { flags, verify } => {
            let r = config::resolve("verify", &flags, Some(&verify))?;
            commands::check_property_ids(&r.replay)?;
            split(r)
        }
        Command::Replay { manifest, out, workers } => {
            let m = RunManifest::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            (m.replay, out, workers)
        }
    };
    init_pool(workers)?;
    commands::execute(replay, &out, exec)
}

fn split(r: config::Resolved) -> (shapelab_core::io::ReplayConfig, PathBuf, Option<usize>) {
    (r.replay, r.out, r.workers)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
