use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at level {level}: expected {expected}, got {actual}")]
    DimensionMismatch {
        level: usize,
        expected: usize,
        actual: usize,
    },
    #[error("stack shape mismatch: expected dims {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("level {level} out of range (system has {n_levels} levels)")]
    LevelOutOfRange { level: usize, n_levels: usize },
    #[error("state {state} out of range (sample space has {size} states)")]
    StateOutOfRange { state: usize, size: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("kernel is not ergodic: {0}")]
    Ergodicity(String),
    #[error("kernel is not geometrically ergodic (rho = {rho})")]
    NonGeometric { rho: f64 },
    #[error("mixing time exceeds cap {cap} (last TV = {last_tv})")]
    MixingCap { cap: usize, last_tv: f64 },
    #[error("iterates diverged at t = {t} (level {level})")]
    Divergence { t: u64, level: usize },
    #[error("fixed-point solve did not converge after {iterations} iterations, residuals {residuals:?}")]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error("degenerate linear system: {0}")]
    Degenerate(String),
    #[error("problem generation failed: {0}")]
    Generation(String),
    #[error("rate fit failed: {0}")]
    Fit(String),
    #[error("aggregation failed: {0}")]
    Aggregation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
