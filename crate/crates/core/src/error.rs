use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("matrix data length {len} does not match shape {rows}x{cols}")]
    BadShape {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix size overflow: {0}")]
    SizeOverflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate posterior: std parameter at ({row}, {col}) is zero")]
    DegeneratePosterior { row: usize, col: usize },

    #[error("size guard exceeded: m*n = {0} > 4096")]
    SizeGuard(usize),

    #[error("training diverged at step {step}: non-finite {component}")]
    Diverged { step: usize, component: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
