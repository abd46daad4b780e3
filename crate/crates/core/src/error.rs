use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {depth} (must be > 0)")]
    InvalidDepth { depth: f64 },

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },

    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("square side {side} exceeds image limit {limit}")]
    BoxTooLarge { side: f64, limit: f64 },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("zero-norm descriptor")]
    ZeroVector,

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("no matches survived the distance threshold")]
    NoMatches,

    #[error("every match has invalid depth in at least one view")]
    AllInvalidDepth,

    #[error("match supervision is empty")]
    EmptySupervision,

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("registration failed: best hypothesis has {inliers} inliers (need 3)")]
    RegistrationFailed { inliers: usize },

    #[error("object model has no points")]
    EmptyModel,

    #[error("render is empty: object fully outside the view frustum")]
    EmptyRender,

    #[error("no model point is visible in both views")]
    NoCovisiblePoints,

    #[error("{}: malformed {field}: {reason}", path.display())]
    Format {
        path: PathBuf,
        field: &'static str,
        reason: String,
    },

    #[error("{}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})", path.display())]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn mismatch(
        what: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

/// Coarse error categories, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input.
    Input,
    /// Nothing to match: empty masks, no surviving matches, no valid depth.
    Empty,
    Registration,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Format { .. }
            | Error::Checksum { .. }
            | Error::Io { .. }
            | Error::Invalid { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidDepth { .. }
            | Error::OutOfBounds { .. }
            | Error::BoxTooLarge { .. }
            | Error::ZeroVector
            | Error::EmptyModel => ErrorClass::Input,
            Error::EmptyMask
            | Error::NoMatches
            | Error::AllInvalidDepth
            | Error::EmptySupervision => ErrorClass::Empty,
            Error::RegistrationFailed { .. } | Error::Degenerate(_) => ErrorClass::Registration,
            Error::BehindCamera { .. }
            | Error::EmptyRender
            | Error::NoCovisiblePoints => ErrorClass::Internal,
        }
    }
}
