use thiserror::Error;

/// Errors surfaced by the library. Solver divergence inside an iteration
/// loop is reported through trajectory flags, not through this type; `Error`
/// covers conditions that make a result meaningless or an input unusable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered in {context}: {detail}")]
    NonFinite { context: &'static str, detail: String },

    #[error("no sign change in bracket [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("message divergence at {context}: {detail}")]
    Divergence { context: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
