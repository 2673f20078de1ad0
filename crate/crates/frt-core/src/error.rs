use thiserror::Error;

/// Errors surfaced by the grid toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid line parameters: {0}")]
    InvalidLine(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("load flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    LoadFlowDiverged { iterations: usize, residual: f64 },

    #[error("infeasible dispatch: {0}")]
    InfeasibleDispatch(String),

    #[error("algebraic block is singular at the operating point")]
    IndexProblem,

    #[error("no consistent post-clearance state: {0}")]
    ConsistentInit(String),

    #[error("integration failure at t = {t:.6}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("synthesis retry budget exhausted after {attempts} attempts; rejections: {summary}")]
    RetriesExhausted { attempts: usize, summary: String },

    #[error("Sobol dimension {0} exceeds the direction-number table")]
    SobolDimension(usize),

    #[error("trajectory covers [0, {covered:.3}] s but classification needs {needed:.3} s")]
    TrajectoryTooShort { covered: f64, needed: f64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error("metrics undefined: {0}")]
    DegenerateMetrics(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
