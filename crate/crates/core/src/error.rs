use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid {context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("dimension mismatch for {field}: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("distinctness violated: minimum eigenvalue gap {gap:e} is not above {threshold:e}")]
    DistinctnessViolated { gap: f64, threshold: f64 },
    #[error("eigenvalue {re}{im:+}i has no conjugate partner within {tol:e}")]
    Unpaired { re: f64, im: f64, tol: f64 },
    #[error("no mode pair matches {0}")]
    NoSuchPair(String),
    #[error(
        "requested mode {re}{im:+}i is real; blocking is defined for complex-conjugate pairs only"
    )]
    RealMode { re: f64, im: f64 },
    #[error("assignable subspace is empty at lambda = {re}{im:+}i")]
    EmptySubspace { re: f64, im: f64 },
    #[error("infeasible request: condition {condition} violated ({detail})")]
    Infeasible { condition: String, detail: String },
    #[error("every candidate direction produced a zero eigenvector")]
    DegenerateDirection,
    #[error("ill-conditioned replacement eigenvector matrix: cond {cond:e} > {limit:e}; retry with another seed or fewer blocked states")]
    IllConditioned { cond: f64, limit: f64 },
    #[error("gain is not real: relative imaginary residue {residue:e} exceeds {limit:e}")]
    ConjugationInconsistent { residue: f64, limit: f64 },
    #[error("candidate gain failed verification: {0}")]
    VerificationFailed(String),
    #[error("mode pair at {re}{im:+}i is already targeted by an earlier stage")]
    OverlappingTargets { re: f64, im: f64 },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit status used by the command-line front end.
    ///
    /// 2 = validation / input, 3 = numerical, 4 = infeasible, 5 = verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::Validation(_)
            | Error::NoSuchPair(_)
            | Error::RealMode { .. }
            | Error::OverlappingTargets { .. } => 2,
            Error::Numerics(NumericsError::NonFinite { .. } | NumericsError::Shape { .. }) => 2,
            Error::Numerics(_)
            | Error::DistinctnessViolated { .. }
            | Error::Unpaired { .. }
            | Error::EmptySubspace { .. }
            | Error::DegenerateDirection
            | Error::IllConditioned { .. }
            | Error::ConjugationInconsistent { .. } => 3,
            Error::Infeasible { .. } => 4,
            Error::VerificationFailed(_) => 5,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
