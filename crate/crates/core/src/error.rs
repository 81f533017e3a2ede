use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Each variant belongs to one of three classes (validation, data integrity,
/// I/O) which the command line maps onto its exit codes.
#[derive(Debug, Error)]
pub enum Error {
    // --- data integrity -------------------------------------------------
    #[error("format violation: {0}")]
    Format(String),
    #[error("count mismatch: matrix has {matrix} rows, manifest has {manifest}")]
    CountMismatch { matrix: u64, manifest: usize },
    #[error("zero vector for sample `{sample_id}` (row {row})")]
    ZeroVector { sample_id: String, row: usize },
    #[error("non-finite value in sample `{sample_id}` (row {row})")]
    NonFiniteValue { sample_id: String, row: usize },
    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),
    #[error("empty identity label for sample `{0}`")]
    EmptyIdentity(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("malformed csv {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    // --- validation -----------------------------------------------------
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("index {index} out of range for set of {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("too few identities: need at least {needed}, have {have}")]
    TooFewIdentities { needed: usize, have: usize },
    #[error("no identity has two or more samples; mated pairs are undefined")]
    NoMatedPairs,
    #[error("set has a single identity; non-mated pairs are undefined")]
    SingleIdentitySet,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("genuine and impostor variances are both zero")]
    DegenerateVariances,
    #[error("unknown sample id `{0}`")]
    UnresolvableId(String),
    #[error("{count} pairs cannot be split into {folds} equal folds")]
    NonDivisibleCount { count: usize, folds: usize },
    #[error("need at least two groups, have {0}")]
    TooFewGroups(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance: correlation undefined")]
    ZeroVariance,
    #[error("too few points: need at least 3, have {0}")]
    TooFewPoints(usize),
    #[error("benchmark column `{0}` not present")]
    ColumnMissing(String),
    #[error("insufficient overlap: {0}")]
    InsufficientOverlap(String),
    #[error("segment {segment} too small: {pairs} usable pairs, need {needed}")]
    SegmentTooSmall { segment: usize, pairs: usize, needed: usize },
    #[error("histogram bin edges differ")]
    BinMismatch,
    #[error("non-finite value at `{0}`")]
    NonFiniteReport(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    // --- io --------------------------------------------------------------
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    DataIntegrity,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Format(_)
            | CountMismatch { .. }
            | ZeroVector { .. }
            | NonFiniteValue { .. }
            | DuplicateSampleId(_)
            | EmptyIdentity(_)
            | Manifest(_)
            | Csv { .. } => ErrorClass::DataIntegrity,
            Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Validation => 1,
            ErrorClass::DataIntegrity => 2,
            ErrorClass::Io => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
