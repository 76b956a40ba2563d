use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A sensor sits (numerically) on top of a source or grid point, where the
    /// free-field Green's function is singular.
    #[error("degenerate geometry: sensor {sensor} is {distance:e} m from point {point}")]
    DegenerateGeometry {
        sensor: usize,
        point: usize,
        distance: f64,
    },

    #[error("sample rate {sample_rate} Hz does not exceed twice the highest scene frequency {max_frequency} Hz")]
    NyquistViolation { sample_rate: f64, max_frequency: f64 },

    #[error("{frequency} Hz is not an exact DFT bin; nearest bins are {lower} Hz and {upper} Hz")]
    OffBinFrequency {
        frequency: f64,
        lower: f64,
        upper: f64,
    },

    #[error("block of {block_size} samples is longer than the {available}-sample record")]
    BlockTooLong { block_size: usize, available: usize },

    #[error("no nonnegative solution fits within delta = {delta:e} (best residual {best_residual:e}); increase delta")]
    InfeasibleNonneg { delta: f64, best_residual: f64 },

    #[error("power map is identically zero")]
    AllZeroMap,

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
