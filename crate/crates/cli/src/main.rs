use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gradopt_cli::{replay, run_file, validate, CliError, Kind, Outcome, RunOptions};

#[derive(Parser)]
#[command(name = "gradopt", version, about = "Run smoothing and graduated-optimization experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory [default: run.out_dir, then $GRADOPT_OUT_DIR/<config stem>, then gradopt-out/<config stem>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides run.threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run any config; the kind is read from the file.
    Run(RunArgs),
    /// Monte Carlo estimates of the smoothed objective over a grid, per noise law.
    SmoothSweep(RunArgs),
    /// Mean SGD trajectory against GD on the smoothed objective.
    Equivalence(RunArgs),
    /// Build and execute an explicit or implicit graduated schedule.
    Graduated(RunArgs),
    /// Minibatch gradient variance against C²/b, optionally estimating C².
    Variance(RunArgs),
    /// Final adaptive sharpness over an (η, b) grid.
    SharpnessSweep(RunArgs),
    /// Empirical light/heavy tail test against the analytic label.
    TailTest(RunArgs),
    /// Constant, lr-decay, batch-growth and mixed schedules at equal gradient budget.
    Compare(RunArgs),
    /// Parse and validate a config without running it.
    ValidateConfig { config: PathBuf },
    /// Re-run a manifest.json and compare CSV hashes.
    Replay {
        manifest: PathBuf,
        /// Output directory [default: replay/ next to the manifest]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(args: RunArgs, expect: Option<Kind>) -> Result<(), CliError> {
    let opts = RunOptions { out: args.out, seed: args.seed, threads: args.threads, expect };
    let outcome = run_file(&args.config, &opts)?;
    finish(&outcome)
}

fn finish(outcome: &Outcome) -> Result<(), CliError> {
    let s = &outcome.summary;
    for c in &s.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &s.notes {
        println!("note: {n}");
    }
    println!("{} finished in {:.2} s; outputs in {}", s.kind, s.wall_time_secs, outcome.out_dir.display());
    let failed = s.failed_checks();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Checks(failed))
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => run(a, None),
        Command::SmoothSweep(a) => run(a, Some(Kind::SmoothSweep)),
        Command::Equivalence(a) => run(a, Some(Kind::SgdEquivalence)),
        Command::Graduated(a) => run(a, Some(Kind::Graduated)),
        Command::Variance(a) => run(a, Some(Kind::Variance)),
        Command::SharpnessSweep(a) => run(a, Some(Kind::SharpnessSweep)),
        Command::TailTest(a) => run(a, Some(Kind::TailTest)),
        Command::Compare(a) => run(a, Some(Kind::Compare)),
        Command::ValidateConfig { config } => {
            let cfg = validate(&config)?;
            println!("{}: valid {} config", config.display(), cfg.kind().name());
            Ok(())
        }
        Command::Replay { manifest, out } => {
            let r = replay(&manifest, out)?;
            if !r.mismatched.is_empty() {
                return Err(CliError::Runtime(format!("replay differs from the manifest in: {}", r.mismatched.join(", "))));
            }
            println!("replay reproduced {} files", r.outcome.summary.outputs.len());
            finish(&r.outcome)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
