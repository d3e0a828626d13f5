use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix would exceed the element budget.
    #[error("sizing error: {rows}x{cols} exceeds the limit of {limit} elements")]
    Sizing {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Every calibration group has zero activation norm.
    #[error("degenerate calibration: all {groups} group activation norms are zero")]
    DegenerateCalibration { groups: usize },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error(
        "power iteration did not converge: residual {residual:.3e} after {iterations} iterations"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("cholesky factorization failed at pivot {pivot}; increase the damping ratio (currently {damping_ratio})")]
    Cholesky { pivot: usize, damping_ratio: f64 },

    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Sizing { .. } => "sizing",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Argument(_) => "argument",
            Error::DegenerateCalibration { .. } => "degenerate_calibration",
            Error::Numerical { .. } => "numerical",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Cholesky { .. } => "cholesky",
            Error::Column { source, .. } => source.kind(),
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
