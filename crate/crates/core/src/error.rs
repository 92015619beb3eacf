use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("word of degree {degree} exceeds truncation level {level}")]
    Degree { degree: usize, level: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("time {0} is not a point of the simulation grid")]
    Alignment(f64),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
