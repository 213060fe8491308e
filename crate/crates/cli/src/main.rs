mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{InferArgs, PhantomArgs, RegisterArgs, SweepArgs, WorkerArgs};
use run::{RunContext, RunManifest, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "ccreg", version, about = "Cycle-consistent neural deformable registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forward/backward network pair (or a single network).
    Register(RegisterArgs),
    /// Dense displacement, uncertainty and landmarks from a checkpoint.
    Infer(InferArgs),
    /// Multi-seed training, inference and evaluation.
    Sweep(SweepArgs),
    /// Synthetic image pair with a known deformation.
    Phantom(PhantomArgs),
    #[command(hide = true)]
    SweepWorker(WorkerArgs),
}

/// Caps the in-process worker pool from `CCREG_THREADS`.
fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("CCREG_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("CCREG_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INPUT as u8);
    }
    let (name, out_dir, args): (&str, PathBuf, serde_json::Value) = match &cli.command {
        Command::Register(a) => ("register", a.out_dir.clone(), serde_json::to_value(a).unwrap()),
        Command::Infer(a) => ("infer", a.out_dir.clone(), serde_json::to_value(a).unwrap()),
        Command::Sweep(a) => ("sweep", a.out_dir.clone(), serde_json::to_value(a).unwrap()),
        Command::Phantom(a) => ("phantom", a.out_dir.clone(), serde_json::to_value(a).unwrap()),
        Command::SweepWorker(a) => {
            return match commands::sweep::worker(a) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {}", e.message());
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    let start = Instant::now();
    let mut ctx = RunContext::default();
    let result = match &cli.command {
        Command::Register(a) => commands::register::run(a, &mut ctx),
        Command::Infer(a) => commands::infer::run(a, &mut ctx),
        Command::Sweep(a) => commands::sweep::run(a, &mut ctx),
        Command::Phantom(a) => commands::phantom::run(a, &mut ctx),
        Command::SweepWorker(_) => unreachable!(),
    };
    let (code, error) = match &result {
        Ok(code) => (*code, None),
        Err(e) => (e.exit_code(), Some(e.message().to_string())),
    };
    let manifest = RunManifest {
        subcommand: name.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        status: match code {
            0 => "ok",
            run::EXIT_PARTIAL => "partial",
            _ => "error",
        }
        .into(),
        exit_code: code,
        error,
        args,
        config: ctx.config,
        input_hashes: ctx.inputs,
        seed: ctx.seed,
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Some(e) = &manifest.error {
        eprintln!("error: {e}");
    }
    if let Err(e) = manifest.write(&out_dir) {
        eprintln!("error: cannot write run manifest in {}: {e}", out_dir.display());
        if code == 0 {
            return ExitCode::from(EXIT_INPUT as u8);
        }
    }
    ExitCode::from(code as u8)
}
