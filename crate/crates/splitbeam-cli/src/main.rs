//! `splitbeam` — run experiment specs from the command line.
//!
//! Exit codes: `0` success, `1` operational error, `2` a verdict-type run
//! failed its criteria.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitbeam::experiment::{load_spec, run, ExperimentMode, ExperimentSpec};

/// Environment variable consulted for the thread count when `--threads` is
/// absent.
const THREADS_ENV: &str = "SPLITBEAM_THREADS";

#[derive(Parser)]
#[command(name = "splitbeam", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory, overriding the spec's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to SPLITBEAM_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the spec in whatever mode it declares.
    Run(RunArgs),
    /// Execute the spec in certify mode regardless of its declared mode.
    Certify(RunArgs),
    /// Print the toolkit version.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("splitbeam {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Run(args) => execute(args, None),
        Command::Certify(args) => execute(args, Some(ExperimentMode::Certify)),
    }
}

fn execute(args: RunArgs, force_mode: Option<ExperimentMode>) -> ExitCode {
    if let Err(err) = configure_threads(args.threads) {
        eprintln!("splitbeam: {err}");
        return ExitCode::from(1);
    }

    let mut spec: ExperimentSpec = match load_spec(&args.spec) {
        Ok(spec) => spec,
        Err(err) => {
            eprintln!("splitbeam: {err}");
            return ExitCode::from(1);
        }
    };
    if let Some(mode) = force_mode {
        spec.mode = mode;
    }
    if let Some(out) = args.out {
        spec.output_dir = out;
    }

    if !args.quiet {
        println!(
            "splitbeam: mode {:?}, topology M={} N={} K={}, seed {}",
            spec.mode, spec.topology.m, spec.topology.n, spec.topology.k, spec.master_seed
        );
    }

    match run(&spec) {
        Ok(outcome) => {
            if !args.quiet {
                println!("splitbeam: {}", outcome.summary);
                println!("splitbeam: wrote {}", outcome.results_path.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(err) => {
            eprintln!("splitbeam: {err}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), String> {
    let requested = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(text) => Some(
                text.parse::<usize>()
                    .map_err(|_| format!("{THREADS_ENV}={text} is not a thread count"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = requested {
        if n == 0 {
            return Err("thread count must be >= 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}
