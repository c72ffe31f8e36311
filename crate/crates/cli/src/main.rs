//! `dirollout`: train, roll out, compare and benchmark from a JSON configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dirollout::harness::{execute, Command, Invocation, Overrides};
use dirollout::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O or other failure
  2  configuration error (every violated field is listed)
  3  training failure (too many grid solves did not converge)
  4  propagation error during a forward pass
  5  bench fit failure (sweep too small or degenerate)";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Train the rolling-horizon tables on the uniform grid.
    Train,
    /// Roll out online against a trained (or freshly trained) artifact.
    Rollout,
    /// Repeated rollout with grid refinement between rounds.
    Repeat,
    /// Full-horizon training with stored-policy replay.
    Baseline,
    /// Compare the solvers against brute-force and analytic references.
    Oracle,
    /// Time training and rollout over the configured sweeps.
    Bench,
}

#[derive(Debug, Parser)]
#[command(name = "dirollout", version, about, after_help = EXIT_CODES)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Problem configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for offline training; 0 uses all cores.
    #[arg(long, env = "DIROLLOUT_WORKERS")]
    workers: Option<usize>,
    /// Overrides the configured stopping tolerance (nats).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Artifact to roll out against instead of training one (rollout only).
    #[arg(long)]
    artifact: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::TrainingFailure { .. } => 3,
        Error::Propagation { .. } => 4,
        Error::BenchFit(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Train => Command::Train,
        Cmd::Rollout => Command::Rollout,
        Cmd::Repeat => Command::Repeat,
        Cmd::Baseline => Command::Baseline,
        Cmd::Oracle => Command::Oracle,
        Cmd::Bench => Command::Bench,
    };
    let inv = Invocation {
        command,
        config: args.config,
        out: args.out,
        overrides: Overrides {
            seed: args.seed,
            workers: args.workers,
            epsilon: args.epsilon,
        },
        artifact: args.artifact,
    };
    match execute(&inv) {
        Ok(summary) => {
            println!("{} finished; fingerprint {}", summary.command, summary.fingerprint);
            for run in &summary.runs {
                match &run.totals {
                    Some(t) => println!(
                        "  {}: total cost {:.6}, directed information {:.6} nats, mean stage MI {:.6}, offline {:.1} ms, online {:.1} ms",
                        run.label,
                        t.lagrangian_cost,
                        t.directed_information_nats,
                        t.mean_stage_mi_nats,
                        run.offline_wall_ms,
                        run.online_wall_ms
                    ),
                    None => println!("  {}: offline {:.1} ms, {} flagged points", run.label, run.offline_wall_ms, run.flagged_points),
                }
            }
            println!("  output in {}", inv.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dirollout {}: {e}", command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
