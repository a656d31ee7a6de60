use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("vocab error: {0}")]
    Vocab(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("loss error: {0}")]
    Loss(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("run error: {0}")]
    Run(String),

    #[error("length error: {0}")]
    Length(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
