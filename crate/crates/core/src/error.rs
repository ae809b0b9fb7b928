use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    #[error("invalid information structure: {0}")]
    InvalidInfo(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate cell at t={t}: cell {cell} has zero probability")]
    DegenerateCell { t: usize, cell: usize },

    #[error("stopping time is not measurable: {{tau <= {t}}} splits cell {cell}")]
    NotMeasurable { t: usize, cell: usize },

    #[error("process is not adapted: not constant on cell {cell} at t={t}")]
    NotAdapted { t: usize, cell: usize },

    #[error("enumeration too large: {reason} (estimated {estimated:.3e} stopping times)")]
    TooLarge { reason: String, estimated: f64 },

    #[error("{0} requires a filtration (nested information); use brute_force_optimal instead")]
    NotFiltration(&'static str),

    #[error("inadmissible control: {0}")]
    Inadmissible(String),

    #[error("infeasible perturbation: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
