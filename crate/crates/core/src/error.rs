use alloc::string::String;

/// Failures raised by the tracking core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch for {what}: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        what: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("cost matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("frame {frame} outside [1, {max}]")]
    FrameOutOfRange { frame: u32, max: u32 },

    #[error("duplicate frame {frame} within one track")]
    DuplicateFrame { frame: u32 },

    #[error("frames not strictly increasing within track {id} at frame {frame}")]
    UnorderedFrames { id: i64, frame: u32 },

    #[error("detection at row {row} has no label")]
    MissingLabel { row: usize },

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("unknown task `{0}` (expected one of phi, A, B, C, 1, 2, 3, 4)")]
    UnknownTask(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
