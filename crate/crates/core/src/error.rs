use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate amplitude range")]
    DegenerateAmplitude,

    #[error("masks not disjoint")]
    MasksNotDisjoint,

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid section: {0}")]
    InvalidSection(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infinite SNR")]
    InfiniteSnr,

    #[error("zero-variance input")]
    ZeroVariance,

    #[error("band too narrow for correlation: [{low}, {high}) Hz holds {bins} bins")]
    BandTooNarrow { low: f64, high: f64, bins: usize },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("model/config mismatch: {0}")]
    ModelMismatch(String),

    #[error("checksum mismatch: header {expected:08x}, payload {actual:08x}")]
    Checksum { expected: u32, actual: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
