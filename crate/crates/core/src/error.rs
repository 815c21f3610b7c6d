use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("target unreachable at this truncation (control bound exceeded {m_cap:e})")]
    Unreachable { m_cap: f64 },

    #[error("bang-bang extraction failed: {0}")]
    BangBang(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("noisy crossing: {0}")]
    NoisyCrossing(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shrink tuning exhausted: {0}")]
    TuningExhausted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
