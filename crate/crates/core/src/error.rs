use thiserror::Error;

/// Failure classes. Each maps onto a process exit code in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    /// A hard constraint between configuration values does not hold.
    #[error("{0}")]
    Constraint(String),

    #[error("geometry conflict: {0}")]
    Geometry(String),

    /// The discretization cannot resolve the quantity being measured.
    #[error("resolution floor: {0}")]
    Resolution(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Constraint(_) | Error::Geometry(_) => 2,
            Error::Resolution(_) => 3,
            Error::Solver(_) => 4,
            Error::Invariant(_) => 5,
            Error::Snapshot(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }

    /// Builds a constraint error naming the violated strict inequality `lhs < rhs`.
    pub(crate) fn strict(name: &str, lhs: f64, rhs: f64) -> Self {
        Error::Constraint(format!("{name} violated: {lhs} ≥ {rhs}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
