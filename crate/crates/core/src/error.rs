use thiserror::Error;

/// Errors raised by the simulation, learning and attack pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated payload: needed {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("tensor extents overflow the addressable size")]
    DimOverflow,

    #[error("fine grid too coarse: aperture spans {samples:.3} samples along {axis}")]
    GridTooCoarse { axis: &'static str, samples: f64 },

    #[error("mask does not fit on the simulation grid: {0}")]
    MaskOutOfBounds(String),

    #[error("crop fraction {0} leaves no active sub-pixels")]
    EmptyAperture(f64),

    #[error("zero-variance signal: SNR is undefined")]
    ZeroVariance,

    #[error("negative Poisson rate {0}")]
    NegativeRate(f64),

    #[error("shift moves scene content outside the sensor frame")]
    ShiftOutOfFrame,

    #[error("object of height {object:.4e} m does not fit on a sensor of height {sensor:.4e} m")]
    ObjectTooLarge { object: f64, sensor: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("not enough examples: {0}")]
    NotEnoughData(String),

    #[error("tape is missing intermediates: {0}")]
    IncompleteTape(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
