use thiserror::Error;

pub type Result<T> = std::result::Result<T, JlsError>;

#[derive(Debug, Error)]
pub enum JlsError {
    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("switch index {index} at position {position} is outside 1..={modes}")]
    SwitchOutOfRange {
        position: usize,
        index: usize,
        modes: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix side {0} is not a perfect square")]
    NotPerfectSquare(usize),

    #[error("enumeration of {terms} weighted terms exceeds the cap of {cap}")]
    EnumerationCap { terms: u128, cap: u128 },

    #[error(
        "observation rank {rank} is not triangular (nearest triangular numbers {lower} and {upper})"
    )]
    NotTriangular {
        rank: usize,
        lower: usize,
        upper: usize,
    },

    #[error(
        "observation rank {rank} fills the whole symmetric space of the output window ({capacity}); increase T"
    )]
    HorizonTooShort { rank: usize, capacity: usize },

    #[error("factorization is rank deficient: {0}")]
    RankDeficient(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
