//! Crate-wide error type.

use thiserror::Error;

/// Broad failure class, used by callers (e.g. the CLI) to map errors to
/// exit codes without matching every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad inputs: dimensions, ranges, malformed configuration.
    Config,
    /// Numerical failure: singular systems, non-convergence, infeasibility.
    Numerical,
    /// Filesystem / parsing trouble.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path} (line {line}): {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("grid case invalid: {0}")]
    InvalidCase(String),

    #[error("QP infeasible: phase-1 optimum {max_violation:.3e} above tolerance")]
    Infeasible { max_violation: f64 },

    #[error("QP iteration limit reached ({iterations} iterations, kkt residual {residual:.3e})")]
    QpMaxIter { iterations: usize, residual: f64 },

    #[error("QP solution rejected: kkt residual {residual:.3e} above bound {bound:.3e}")]
    QpResidual { residual: f64, bound: f64 },

    #[error("rank deficient system: {0}")]
    RankDeficient(String),

    #[error("LICQ violated: active constraint matrix rank {rank} < {rows} rows")]
    LicqViolated { rank: usize, rows: usize },

    #[error("degenerate active constraint {constraint}: multiplier {lambda:.3e} below strict-complementarity tolerance")]
    DegenerateActive { constraint: String, lambda: f64 },

    #[error("conjugate gradient did not converge: residual {residual:.3e} after {iterations} iterations")]
    CgNoConvergence { residual: f64, iterations: usize },

    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    #[error("{0}")]
    Stats(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dim(_) | Error::Config(_) | Error::InvalidCase(_) => ErrorCategory::Config,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
                ErrorCategory::Io
            }
            Error::Infeasible { .. }
            | Error::QpMaxIter { .. }
            | Error::QpResidual { .. }
            | Error::RankDeficient(_)
            | Error::LicqViolated { .. }
            | Error::DegenerateActive { .. }
            | Error::CgNoConvergence { .. }
            | Error::SingularHessian(_)
            | Error::Stats(_) => ErrorCategory::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
