use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read model file: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed model file: {0}")]
    Parse(String),

    #[error("{message} (slack {slack:e})")]
    Validation { message: String, slack: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("singular matrix: pivot {pivot_index} fell below the threshold")]
    SingularMatrix { pivot_index: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("|z| = {modulus} is outside the radius of convergence {radius}")]
    OutsideRadius { modulus: f64, radius: f64 },

    #[error("z is within {distance:e} of a declared pole")]
    AtPole { distance: f64 },

    #[error("period undefined: every cycle of the additive kernel has zero displacement")]
    PeriodUndefined,

    #[error("unexpected block structure: {0}")]
    ShapeViolation(String),

    #[error("positivity violated: {0}")]
    PositivityViolation(String),

    #[error("dominant pole sets do not intersect at the real axis")]
    EmptyIntersection,

    #[error("need {required} usable levels, only {available} available")]
    InsufficientLevels { available: usize, required: usize },

    #[error("tail remainder bound {bound:e} exceeds the certificate")]
    RemainderTooLarge { bound: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn validation(message: impl Into<String>, slack: f64) -> Self {
        Error::Validation {
            message: message.into(),
            slack,
        }
    }

    /// Process exit status for this error: 1 for invalid input, 2 for
    /// numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::Parse(_)
            | Error::Validation { .. }
            | Error::Usage(_)
            | Error::PeriodUndefined
            | Error::ShapeViolation(_)
            | Error::Unsupported(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
