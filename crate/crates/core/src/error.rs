//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while loading data, transforming it, or
/// evaluating dependence measures.
#[derive(Debug, Error)]
pub enum Error {
    /// Input file or stream does not conform to its declared format.
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// Shapes do not line up (ragged segments, wrong column count, ...).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A frequency index outside the valid range for the segment length.
    #[error("frequency index {index} out of range (segment length {n_t})")]
    FrequencyRange { index: usize, n_t: usize },

    /// A zero-norm Fourier vector that cannot be normalized. The offending
    /// (segment, frequency) pair is reported so the caller can inspect the
    /// recording instead of silently dropping data.
    #[error("degenerate segment: zero norm at segment {segment}, frequency bin {freq}, {what}")]
    DegenerateSegment {
        segment: usize,
        freq: usize,
        what: String,
    },

    /// Triangular factorization hit a non-positive pivot: the matrix is
    /// singular or indefinite. Usually means too few segments relative to
    /// the number of channels, or perfectly collinear channels.
    #[error(
        "matrix singular or indefinite at pivot {pivot} (value {value:e}); \
             too few segments or collinear channels"
    )]
    SingularOrIndefinite { pivot: usize, value: f64 },

    /// A cross-spectrum was handed to a measure that expects a different
    /// normalization mode.
    #[error("normalization mode mismatch: expected {expected}, found {found}")]
    NormMode { expected: String, found: String },

    /// Band pooling was asked for frequencies the inputs do not cover.
    #[error("band coverage: {0}")]
    Coverage(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A measure came out more negative than floating-point jitter can
    /// explain; indicates numerical failure, not data.
    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
