//! Crate-wide error type. Every fallible operation returns `Result<T, Error>`;
//! numerical divergence and contract violations are distinguished so callers
//! (notably the CLI) can map them to distinct exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange {
        index: (usize, usize, usize),
        dims: (usize, usize, usize),
    },

    #[error("invalid tensor dims {0:?}: every component must be >= 1")]
    InvalidDims((usize, usize, usize)),

    #[error("data length {len} does not match dims {dims:?} (need {needed})")]
    DataLength {
        len: usize,
        dims: (usize, usize, usize),
        needed: usize,
    },

    #[error("invalid matricization mode {0}: must be 1, 2, or 3")]
    InvalidMode(usize),

    #[error("cannot fold a {rows}x{cols} matrix as mode-{mode} of dims {dims:?}")]
    FoldShape {
        rows: usize,
        cols: usize,
        mode: usize,
        dims: (usize, usize, usize),
    },

    #[error("column count mismatch: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },

    #[error("factor matrices disagree on rank: A has {a}, B has {b}, C has {c} columns")]
    FactorRankMismatch { a: usize, b: usize, c: usize },

    #[error("factor matrix rows {got:?} do not match tensor dims {expected:?}")]
    FactorShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("rank {rank} out of bounds: must be in 1..={bound}")]
    RankOutOfBounds { rank: usize, bound: usize },

    #[error("reference tensor has zero norm")]
    ZeroReference,

    #[error("mode-{mode} row {row} has {observed} observed entries; cannot solve")]
    UnderdeterminedRow {
        mode: usize,
        row: usize,
        observed: usize,
    },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("series of length {len} too short: need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("forecast context of length {len} too short: need at least {needed}")]
    ContextTooShort { len: usize, needed: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("missing ratio {0} out of range [0, 1)")]
    InvalidRatio(f64),

    #[error("ground truth is degenerate: needs at least one positive and one negative")]
    DegenerateTruth,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerical procedures themselves (as opposed
    /// to bad inputs or I/O). The CLI maps these to a dedicated exit code.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::TrainingDiverged { .. } | Error::NonFinite(_) | Error::UnderdeterminedRow { .. }
        )
    }
}
