//! Error type shared by all numerical routines.

use alloc::boxed::Box;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Matrix shapes do not line up (e.g. student and teacher with different d).
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// Teacher rank exceeds dimension (k > d); no orthonormal row set exists.
    TeacherRankExceedsDimension { k: usize, d: usize },
    /// A matrix required to be symmetric deviates beyond tolerance.
    NotSymmetric { max_asymmetry: f64 },
    /// The overlap block matrix left the PSD cone.
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    /// Teacher rows are not orthonormal within tolerance.
    TeacherNotOrthonormal { max_deviation: f64 },
    /// A kernel radicand fell at or below the degeneracy floor; the closed
    /// form is 0/0-ambiguous there and we refuse to guess.
    DegenerateCovariance { radicand: f64 },
    /// An arcsine argument exceeded [-1, 1] by more than the clamping slack.
    ArcsinOutOfRange { argument: f64 },
    NonFinite { context: &'static str },
    /// A covariance selector referenced a unit outside the state.
    IndexOutOfRange {
        side: &'static str,
        index: usize,
        bound: usize,
    },
    /// Cholesky factorization failed even after jitter regularization.
    CholeskyFailed,
    InvalidParameter { name: &'static str, value: f64 },
    /// Requested ODE mode is not the one matching the (kappa, delta) regime.
    RegimeMismatch {
        mode: &'static str,
        regime: &'static str,
    },
    /// Integration abort: state left the PSD cone beyond the runtime guard.
    PsdViolation { time: f64, min_eigenvalue: f64 },
    /// Integration or simulation abort: non-finite state.
    Blowup { time: f64, context: &'static str },
    /// Kernel failure during drift assembly, with the offending unit indices.
    Drift {
        row: usize,
        col: usize,
        source: Box<Error>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch in {context}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::TeacherRankExceedsDimension { k, d } => {
                write!(f, "teacher rank exceeds dimension (k = {k} > d = {d})")
            }
            Error::NotSymmetric { max_asymmetry } => {
                write!(f, "matrix not symmetric (max asymmetry {max_asymmetry:e})")
            }
            Error::NotPositiveSemidefinite { min_eigenvalue } => write!(
                f,
                "overlap matrix not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::TeacherNotOrthonormal { max_deviation } => write!(
                f,
                "teacher rows not orthonormal (max deviation {max_deviation:e})"
            ),
            Error::DegenerateCovariance { radicand } => {
                write!(f, "degenerate covariance (radicand {radicand:e})")
            }
            Error::ArcsinOutOfRange { argument } => {
                write!(f, "arcsine argument {argument} outside [-1, 1]")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::IndexOutOfRange { side, index, bound } => {
                write!(f, "{side} index {index} out of range (bound {bound})")
            }
            Error::CholeskyFailed => write!(f, "Cholesky factorization failed after regularization"),
            Error::InvalidParameter { name, value } => {
                write!(f, "invalid parameter {name} = {value}")
            }
            Error::RegimeMismatch { mode, regime } => write!(
                f,
                "ODE mode {mode} does not match regime {regime} (use an override to force)"
            ),
            Error::PsdViolation {
                time,
                min_eigenvalue,
            } => write!(
                f,
                "state left the PSD cone at t = {time} (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::Blowup { time, context } => {
                write!(f, "non-finite {context} at t = {time}")
            }
            Error::Drift { row, col, source } => {
                write!(f, "drift assembly failed at entry ({row}, {col}): {source}")
            }
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Drift { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
