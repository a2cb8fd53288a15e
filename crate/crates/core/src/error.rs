use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine reports. Variant names double as the machine
/// readable error codes printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("stack needs at least 2 slices, found {found}")]
    MissingSlices { found: usize },

    #[error("slice {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("bad manifest: {0}")]
    BadManifest(String),

    #[error("alignment of slice {0} did not converge")]
    AlignmentDiverged(usize),

    #[error("degenerate synthetic scene: {0}")]
    DegenerateScene(String),

    #[error("unknown focus measure `{0}`")]
    UnknownMeasure(String),

    #[error("no focus volumes supplied")]
    EmptyVolumeSet,

    #[error("no usable equi-focal region for any label")]
    CalibrationImpossible,

    #[error("invalid refocus targets: {0}")]
    InvalidTargets(String),

    #[error("refocus target set is empty")]
    EmptyTargets,

    #[error("extended depth of field needs contiguous labels, got {0:?}")]
    NonContiguousExtended(Vec<u16>),

    #[error("container version `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { found: String, expected: String },

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),

    #[error("image codec error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingSlices { .. } => "MissingSlices",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::BadManifest(_) => "BadManifest",
            Error::AlignmentDiverged(_) => "AlignmentDiverged",
            Error::DegenerateScene(_) => "DegenerateScene",
            Error::UnknownMeasure(_) => "UnknownMeasure",
            Error::EmptyVolumeSet => "EmptyVolumeSet",
            Error::CalibrationImpossible => "CalibrationImpossible",
            Error::InvalidTargets(_) => "InvalidTargets",
            Error::EmptyTargets => "EmptyTargets",
            Error::NonContiguousExtended(_) => "NonContiguousExtended",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptContainer(_) => "CorruptContainer",
            Error::InvalidRepresentation(_) => "InvalidRepresentation",
            Error::Image { .. } => "ImageCodec",
            Error::Io(_) => "IoFailure",
            Error::Json(_) => "Json",
        }
    }

    /// Process exit status the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingSlices { .. } => 2,
            e if e.is_target_error() => 3,
            _ => 1,
        }
    }

    /// Errors caused by an unusable refocus target specification.
    pub fn is_target_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidTargets(_) | Error::EmptyTargets | Error::NonContiguousExtended(_)
        )
    }
}
