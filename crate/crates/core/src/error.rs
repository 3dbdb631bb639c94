use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),

    #[error("subset size k={k} out of range [{min}, {max}]")]
    SubsetSizeOutOfRange { k: usize, min: usize, max: usize },

    #[error("symbol {x} out of range for domain size {d}")]
    SymbolOutOfRange { x: usize, d: usize },

    #[error("domain size {d} too large for explicit enumeration: {reason}")]
    TooLarge { d: usize, reason: String },

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("invalid hit rates: g={g}, h={h} (need 0 <= h < g <= 1)")]
    InvalidHitRates { g: f64, h: f64 },

    #[error("cannot estimate from zero views")]
    NoViews,

    #[error("numeric range error: {0}")]
    NumericRange(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
