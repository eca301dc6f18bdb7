use std::io;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer} ({kind}): {detail}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("backward called without a cached forward pass")]
    MissingCache,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("operation requires the neural denoiser variant")]
    NotNeural,
    #[error("discriminator saturated: |logit| = {logit:.3} exceeds {limit}")]
    SaturatedDiscriminator { logit: f64, limit: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("feature extractor mismatch: cached stats use {cached}, request uses {requested}")]
    ExtractorMismatch { cached: String, requested: String },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("digest mismatch: stored {stored:016x}, computed {computed:016x}")]
    DigestMismatch { stored: u64, computed: u64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by malformed or missing data rather than bad
    /// configuration or numerical trouble.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::CorruptHeader(_)
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::DigestMismatch { .. }
                | Error::Io(_)
                | Error::InsufficientData(_)
                | Error::Parse(_)
                | Error::ExtractorMismatch { .. }
        )
    }

    /// True for failures of the numerics themselves.
    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NotPsd { .. }
                | Error::NotSymmetric(_)
                | Error::SaturatedDiscriminator { .. }
        )
    }
}
