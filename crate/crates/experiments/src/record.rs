//! Result records and their files.
//!
//! A run writes `record.json` (the full record), one CSV table for plotting
//! and `timing.json`. Wall-clock time lives only in `timing.json`, so rerunning
//! a config reproduces the other files byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convergence::ConvergenceResults;
use crate::equivalence::EquivalenceResults;
use crate::gbm_delay::GbmDelayResults;
use crate::vi_audit::ViAuditResults;
use crate::{ExperimentKind, RunError};

pub const RECORD_FILE: &str = "record.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Results {
    Equivalence(EquivalenceResults),
    Convergence(ConvergenceResults),
    GbmDelay(GbmDelayResults),
    ViAudit(ViAuditResults),
}

impl Results {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Results::Equivalence(_) => ExperimentKind::Equivalence,
            Results::Convergence(_) => ExperimentKind::Convergence,
            Results::GbmDelay(_) => ExperimentKind::GbmDelay,
            Results::ViAudit(_) => ExperimentKind::ViAudit,
        }
    }

    /// Violated criteria, derived from the stored numbers alone.
    pub fn failures(&self) -> Vec<String> {
        match self {
            Results::Equivalence(r) => r.failures(),
            Results::Convergence(r) => r.failures(),
            Results::GbmDelay(r) => r.failures(),
            Results::ViAudit(r) => r.failures(),
        }
    }

    /// Recomputes every derived gap from the stored inputs.
    pub fn check_integrity(&self) -> Result<(), String> {
        match self {
            Results::Equivalence(r) => r.check_integrity(),
            Results::Convergence(r) => r.check_integrity(),
            Results::GbmDelay(r) => r.check_integrity(),
            Results::ViAudit(r) => r.check_integrity(),
        }
    }

    fn csv_table(&self) -> (&'static str, Vec<String>, Vec<Vec<String>>) {
        match self {
            Results::Equivalence(r) => ("equivalence.csv", r.csv_header(), r.csv_rows()),
            Results::Convergence(r) => ("convergence.csv", r.csv_header(), r.csv_rows()),
            Results::GbmDelay(r) => ("gbm_delay.csv", r.csv_header(), r.csv_rows()),
            Results::ViAudit(r) => ("vi_audit.csv", r.csv_header(), r.csv_rows()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub kind: ExperimentKind,
    /// SHA-256 of the config that produced the record.
    pub config_hash: String,
    pub passed: bool,
    pub failures: Vec<String>,
    pub results: Results,
    /// Kept out of `record.json`; see [`TIMING_FILE`].
    #[serde(skip)]
    pub wall_clock_seconds: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Timing {
    config_hash: String,
    wall_clock_seconds: f64,
}

/// Paths written by [`ResultRecord::write`].
#[derive(Debug, Clone)]
pub struct WrittenFiles {
    pub record: PathBuf,
    pub table: Option<PathBuf>,
    pub timing: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ResultRecord {
    pub fn new(config_hash: String, results: Results) -> Self {
        let failures = results.failures();
        Self {
            kind: results.kind(),
            config_hash,
            passed: failures.is_empty(),
            failures,
            results,
            wall_clock_seconds: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    /// Parses a record and rechecks it.
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let record: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| RunError::Integrity(format!("at `{}`: {}", e.path(), e.inner())))?;
        record.check_integrity()?;
        Ok(record)
    }

    /// Stored gaps and verdicts must match what the stored inputs give.
    pub fn check_integrity(&self) -> Result<(), RunError> {
        if self.kind != self.results.kind() {
            return Err(RunError::Integrity("kind does not match the results".into()));
        }
        self.results.check_integrity().map_err(RunError::Integrity)?;
        let failures = self.results.failures();
        if failures != self.failures {
            return Err(RunError::Integrity(
                "stored failures differ from the recomputed ones".into(),
            ));
        }
        if self.passed != failures.is_empty() {
            return Err(RunError::Integrity("verdict does not match the failures".into()));
        }
        Ok(())
    }

    /// Writes `record.json`, the CSV table (when `csv`) and `timing.json`
    /// (when a wall-clock time is known) into `dir`.
    pub fn write(&self, dir: &Path, csv: bool) -> Result<WrittenFiles, RunError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let record = dir.join(RECORD_FILE);
        fs::write(&record, self.to_json()).map_err(io_err(&record))?;
        let table = if csv {
            let (name, header, rows) = self.results.csv_table();
            let path = dir.join(name);
            write_csv(&path, &header, &rows)?;
            Some(path)
        } else {
            None
        };
        let timing = match self.wall_clock_seconds {
            Some(secs) => {
                let path = dir.join(TIMING_FILE);
                let t = Timing {
                    config_hash: self.config_hash.clone(),
                    wall_clock_seconds: secs,
                };
                let text = serde_json::to_string_pretty(&t).expect("timing serializes") + "\n";
                fs::write(&path, text).map_err(io_err(&path))?;
                Some(path)
            }
            None => None,
        };
        Ok(WrittenFiles { record, table, timing })
    }

    /// Reads `record.json` from `dir` (or the file itself) and rechecks it.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let file = if path.is_dir() {
            path.join(RECORD_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let mut record = Self::from_json(&text)?;
        if let Some(dir) = file.parent() {
            if let Ok(t) = fs::read_to_string(dir.join(TIMING_FILE)) {
                if let Ok(t) = serde_json::from_str::<Timing>(&t) {
                    if t.config_hash == record.config_hash {
                        record.wall_clock_seconds = Some(t.wall_clock_seconds);
                    }
                }
            }
        }
        Ok(record)
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), RunError> {
    let to_err = |e: csv::Error| RunError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Shortest text that parses back to the same `f64`.
pub(crate) fn num(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `|a - b|` as stored, compared exactly: both sides come from the same
/// arithmetic.
pub(crate) fn same(stored: f64, recomputed: f64, what: &str) -> Result<(), String> {
    if stored.to_bits() == recomputed.to_bits() || stored == recomputed {
        Ok(())
    } else {
        Err(format!("{what}: stored {stored:e}, recomputed {recomputed:e}"))
    }
}
