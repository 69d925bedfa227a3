use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("timestamps are not strictly increasing (row {0})")]
    NonMonotoneTime(usize),
    #[error("trajectory too short: {got} records, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty input")]
    EmptyInput,
    #[error("sample below threshold: {value} < {threshold}")]
    BelowThreshold { value: f64, threshold: f64 },
    #[error("optimizer failed to converge: {0}")]
    NoConvergence(String),
    #[error("matrix not symmetric positive definite: {0}")]
    SingularMatrix(String),
    #[error("argument outside function domain: {0}")]
    DomainError(String),
    #[error("too few tail samples above threshold: {got}, need at least {need}")]
    TooFewTail { got: usize, need: usize },
    #[error("fitted CDF degenerate at a sample point")]
    DegenerateCdf,
    #[error("no grid point leaves enough tail samples")]
    AllDegenerate,
    #[error("no feasible initial state")]
    NoFeasibleState,
    #[error("empty chain")]
    EmptyChain,
    #[error("scan has no activity regions")]
    NoRegions,
    #[error("empty cell set")]
    EmptySet,
    #[error("empty reference set")]
    EmptyReference,
    #[error("rasters are not normalized to unit mass")]
    UnnormalizedInput,
    #[error("trajectories do not share a common grid")]
    GridMismatch,
    #[error("empty interpolation grid")]
    EmptyGrid,
    #[error("need at least two groups to pool")]
    TooFewGroups,
    #[error("every consecutive pair crosses cells; CPT undefined")]
    NoSameCellPairs,
    #[error("schema error at line {line}: {msg}")]
    SchemaError { line: usize, msg: String },
    #[error("device {0} has no usable records")]
    EmptyDevice(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// CLI exit-code class: 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonMonotoneTime(_)
            | Error::TooShort { .. }
            | Error::EmptyInput
            | Error::EmptyDevice(_)
            | Error::SchemaError { .. }
            | Error::EmptyGrid
            | Error::GridMismatch
            | Error::Io(_)
            | Error::Csv(_)
            | Error::InvalidParam(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
