use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sagpr::commands::{self, CommandError};
use sagpr::config::{Mode, RunConfig};

/// Align signals to a Gaussian-process stack, build stacks, or run the toy examples.
#[derive(Parser)]
#[command(name = "sagpr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align signals to an existing stack file.
    Align(Flags),
    /// Build a stack from signal files.
    Stack(Flags),
    /// Generate a toy example, stack it and compare with the DTW baseline.
    Simulate(Flags),
}

#[derive(Args)]
struct Flags {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stack file to align against.
    #[arg(long)]
    stack: Option<PathBuf>,
    /// Signal files.
    #[arg(long, num_args = 1..)]
    signals: Vec<PathBuf>,
    /// Radiocarbon calibration curve.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Toy example id.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    example: Option<u8>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn configure(mode: Mode, f: Flags) -> Result<RunConfig, CommandError> {
    let mut cfg = match &f.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| match e {
            sagpr::Error::Io { .. } => CommandError::usage("E_NO_CONFIG", e.to_string()),
            _ => CommandError::usage("E_CONFIG", e.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(m) = cfg.mode {
        if m != mode {
            return Err(CommandError::usage(
                "E_CONFIG",
                format!("config mode `{}` conflicts with command `{}`", m.name(), mode.name()),
            ));
        }
    }
    cfg.mode = Some(mode);
    if let Some(v) = f.seed {
        cfg.seed = v;
    }
    if let Some(v) = f.out {
        cfg.out = v;
    }
    if let Some(v) = f.stack {
        cfg.stack = Some(v);
    }
    if !f.signals.is_empty() {
        cfg.signals = f.signals;
    }
    if let Some(v) = f.calibration {
        cfg.calibration = Some(v);
    }
    if let Some(v) = f.example {
        cfg.example = Some(v);
    }
    if let Some(v) = f.threads {
        cfg.threads = Some(v);
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CommandError> {
    let (mode, flags) = match cli.command {
        Command::Align(f) => (Mode::Align, f),
        Command::Stack(f) => (Mode::Stack, f),
        Command::Simulate(f) => (Mode::Simulate, f),
    };
    let cfg = configure(mode, flags)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CommandError::usage("E_THREADS", e.to_string()))?;
    }
    commands::run(&cfg)?;
    log::info!("outputs written to {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("{}", CommandError::usage("E_USAGE", e.kind().to_string()).record());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
