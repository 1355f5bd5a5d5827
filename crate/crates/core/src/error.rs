use thiserror::Error;

/// Errors raised by the numerical kernels, model search, and estimation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design is rank deficient (pivoted rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("chi-square degrees of freedom must be at least 1, got {0}")]
    InvalidDegrees(i64),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is singular or indefinite; inverse square root undefined (eigenvalue {min:e}, max {max:e})")]
    SingularInverseSqrt { min: f64, max: f64 },
    #[error("degenerate fit: R^2 = {0} (perfect or near-perfect fit cannot be scored)")]
    DegenerateFit(f64),
    #[error("response `{0}` is constant; R^2 is undefined")]
    ConstantResponse(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("no valid model: every candidate subset is rank deficient or degenerate")]
    NoValidModel,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("insufficient observations: n = {n}, need more than {needed}")]
    InsufficientObservations { n: usize, needed: usize },
    #[error("every second-stage model is invalid for first-stage combination {0}")]
    DegenerateFirstStage(usize),
    #[error("empty model set")]
    EmptyModelSet,
    #[error("index {index} out of range ({len} available)")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
