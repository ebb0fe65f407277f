use thiserror::Error;

/// Errors raised by the numerical kernels and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("field contains non-finite values ({context})")]
    NonFinite { context: String },

    #[error("rank mismatch: expected rank {expected}, found rank {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("derivative order {order} exceeds configured maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("invalid weight specification: {0}")]
    InvalidWeight(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative diffusion time {0}")]
    NegativeTime(f64),

    #[error("displacement {max_displacement:.4e} exceeds admissible bound {bound:.4e}")]
    DisplacementTooLarge { max_displacement: f64, bound: f64 },

    #[error("jacobian determinant {det_min:.4e} below admissible bound {bound:.4e}")]
    DegenerateJacobian { det_min: f64, bound: f64 },

    #[error("inversion did not converge: residual {residual:.3e} after {iterations} iterations")]
    InversionFailed { residual: f64, iterations: usize },

    #[error("CFL violation: max|v| * dt = {displacement:.4e} exceeds {limit:.4e}")]
    Cfl { displacement: f64, limit: f64 },

    #[error("vorticity field has nonzero mean {0:.3e}")]
    NonZeroMean(f64),

    #[error("initial velocity is not band-limited (relative energy {0:.3e} in top third of spectrum)")]
    NotBandLimited(f64),

    #[error("flow step failed in round {round}: {source}")]
    FlowStep {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix exponential overflow (norm {0:.3e})")]
    Overflow(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Round index of a failed product iteration, if any.
    pub fn round(&self) -> Option<usize> {
        match self {
            Error::FlowStep { round, .. } => Some(*round),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
