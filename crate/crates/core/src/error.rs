use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("unsupported quadrature degree {degree} for {entity}")]
    QuadratureDegree { entity: &'static str, degree: usize },

    #[error("index ({row}, {col}) out of range for {nrows}x{ncols} matrix")]
    IndexOutOfRange { row: usize, col: usize, nrows: usize, ncols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular to working precision (pivot {pivot:e} in column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("linear solve residual {residual:e} exceeds bound {bound:e}")]
    Residual { residual: f64, bound: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid coefficient: {0}")]
    Coefficient(String),

    #[error("point ({0}, {1}) lies outside the requested subdomain")]
    OutsideDomain(f64, f64),

    #[error("step {step}: {message}")]
    Assertion { step: usize, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
