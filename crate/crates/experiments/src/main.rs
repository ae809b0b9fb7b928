//! `stopflow` command-line runner.
//!
//! Exit codes: 0 when every criterion passes, 1 when one fails, 2 when the
//! run cannot start (bad config, caps exceeded, unwritable output).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stopflow_experiments::config::SCHEMA;
use stopflow_experiments::{run, ExperimentConfig, ExperimentKind, RunError};

#[derive(Debug, Parser)]
#[command(
    name = "stopflow",
    version,
    about = "Run stopping/control experiments on scenario trees"
)]
struct Cli {
    /// Print the config schema and exit.
    #[arg(long, global = true)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, clap::Args)]
struct RunArgs {
    /// JSON config; the built-in defaults for the subcommand when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replaces `model.random.seed`.
    #[arg(long, value_name = "SEED")]
    seed_override: Option<u64>,
    /// Replaces `caps.max_leaves`.
    #[arg(long, value_name = "N")]
    max_leaves: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal stopping, randomized stopping and singular control values agree.
    Equivalence(RunArgs),
    /// Approximating controls converge to the optimal jump.
    Convergence(RunArgs),
    /// Value and optimal time under delayed price information.
    GbmDelay(RunArgs),
    /// First-order optimality audit of singular controls.
    ViAudit(RunArgs),
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default_for(kind),
    };
    if cfg.kind != kind {
        return Err(RunError::Config(format!(
            "config is for `{}`, not `{}`",
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed_override {
        cfg.model.random.seed = seed;
    }
    if let Some(n) = args.max_leaves {
        cfg.caps.max_leaves = n;
    }
    if let Some(dir) = &args.out {
        cfg.output.dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<bool, RunError> {
    let cfg = load_config(kind, args)?;
    let record = run(&cfg)?;
    match &cfg.output.dir {
        Some(dir) => {
            let files = record.write(dir, cfg.output.csv)?;
            eprintln!("wrote {}", files.record.display());
            if let Some(t) = files.table {
                eprintln!("wrote {}", t.display());
            }
        }
        None => print!("{}", record.to_json()),
    }
    for f in &record.failures {
        eprintln!("FAIL {f}");
    }
    let secs = record.wall_clock_seconds.unwrap_or_default();
    eprintln!(
        "{}: {} ({secs:.2} s, config {})",
        kind.name(),
        if record.passed { "pass" } else { "FAIL" },
        &record.config_hash[..12]
    );
    Ok(record.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; try --help");
        return ExitCode::from(2);
    };
    let (kind, args) = match &command {
        Command::Equivalence(a) => (ExperimentKind::Equivalence, a),
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
        Command::GbmDelay(a) => (ExperimentKind::GbmDelay, a),
        Command::ViAudit(a) => (ExperimentKind::ViAudit, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
