use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("zero or negative pivot {pivot:e} at row {row} during factorization")]
    BadPivot { row: usize, pivot: f64 },

    #[error("linear solve missed its residual target: {residual:e} > {target:e}")]
    SolveFailed { residual: f64, target: f64 },

    #[error("inverse iteration did not converge after {iterations} sweeps (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("stationary density undershoots to {0:e}")]
    NegativeDensity(f64),

    #[error("{escaped} of {total} samples fell outside the grid")]
    GridTooSmall { escaped: u64, total: u64 },

    #[error("vanishing-discount trace does not contract: {0}")]
    NonCauchyTrace(String),

    #[error("hypothesis audit failed for `{entry}`: {reason}")]
    AuditFailed { entry: String, reason: String },

    #[error("time step {dt:e} exceeds the explicit stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),

    #[error("malformed field file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
