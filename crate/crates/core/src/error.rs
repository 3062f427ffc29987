use thiserror::Error;

/// Errors produced by the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` has degree zero")]
    DegreeZero(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint version: {0}")]
    VersionMismatch(String),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed csv at line {line}: {msg}")]
    MalformedCsv { line: usize, msg: String },
    #[error("non-uniform timestamp spacing at row {row}: {msg}")]
    NonUniformSpacing { row: usize, msg: String },
    #[error("node `{0}` is constant over the fitting range")]
    ConstantNode(String),
    #[error("series too short: segment of length {len} cannot hold a window of {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid split fractions: {0}")]
    Fraction(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("empty input")]
    EmptyInput,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
