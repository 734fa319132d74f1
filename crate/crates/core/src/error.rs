use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at byte offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid measure: {0}")]
    Measure(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("basis size {size} exceeds cap {cap}")]
    BasisTooLarge { size: usize, cap: usize },
    #[error("weight annihilates all mass")]
    AllMassAnnihilated,
    #[error("weight is not admissible: finite on no candidate")]
    InadmissibleWeight,
    #[error("matrix is not positive semidefinite (pivot {pivot:e})")]
    NotPsd { pivot: f64 },
    #[error("need at least {needed} candidates, found {found}")]
    TooFewCandidates { needed: usize, found: usize },
    #[error("kernel rank {rank} is below N_k = {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("degenerate configuration (zero weighted Vandermonde)")]
    Degenerate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("measure has infinite energy")]
    InfiniteEnergy,
    #[error("no reference measure available: {0}")]
    MissingReference(String),
}

pub type Result<T> = std::result::Result<T, Error>;
