use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0} copula has no Archimedean generator")]
    UnsupportedGenerator(&'static str),

    #[error("non-finite likelihood contribution at row {row}")]
    NonFinite { row: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("optimizer did not converge after {iterations} iterations (best objective {best_value})")]
    NonConvergence { iterations: usize, best_value: f64, best: Vec<f64> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
