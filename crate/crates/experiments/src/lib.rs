//! Reproducible experiments over the `stopflow` solvers.
//!
//! Each experiment reads an [`ExperimentConfig`], runs its instances in
//! parallel and produces a [`ResultRecord`]. The record's pass/fail verdict is
//! a pure function of the stored numbers, so a reloaded record can be
//! rechecked without rerunning anything.

use std::path::PathBuf;
use std::time::Instant;

pub mod config;
pub mod convergence;
pub mod equivalence;
pub mod gbm_delay;
pub mod record;
pub mod vi_audit;

pub use config::{ExperimentConfig, ExperimentKind};
pub use record::{ResultRecord, Results};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] stopflow::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("integrity check failed: {0}")]
    Integrity(String),
}

impl RunError {
    /// Process exit code: everything that stops a run before a verdict is a
    /// configuration problem.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

/// Runs the experiment `config.kind` describes.
pub fn run(config: &ExperimentConfig) -> Result<ResultRecord, RunError> {
    config.validate()?;
    let start = Instant::now();
    let results = match config.kind {
        ExperimentKind::Equivalence => Results::Equivalence(equivalence::run_equivalence(config)?),
        ExperimentKind::Convergence => Results::Convergence(convergence::run_convergence(config)?),
        ExperimentKind::GbmDelay => Results::GbmDelay(gbm_delay::run_gbm_delay(config)?),
        ExperimentKind::ViAudit => Results::ViAudit(vi_audit::run_vi_audit(config)?),
    };
    let mut record = ResultRecord::new(config.hash(), results);
    record.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    Ok(record)
}

/// `ChaCha8` seeded with `seed` on its own stream, so draws for different
/// purposes never overlap.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
