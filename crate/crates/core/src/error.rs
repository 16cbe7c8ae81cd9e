//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A sweep input failed a checked precondition (e.g. split normalization).
    #[error("precondition violated for `{label}`: {reason}")]
    PreconditionViolation { label: String, reason: String },

    #[error("numeric failure in {step}: {reason}")]
    NumericFailure { step: String, reason: String },

    /// Gap curve never settles within epsilon of its large-gap plateau.
    #[error("gap curve not saturated: deviation {deviation_v:.3e} V at the largest gap exceeds {epsilon_v:.3e} V")]
    NotSaturated { deviation_v: f64, epsilon_v: f64 },

    #[error("target {target_v} V unreachable; maximum attained {max_vt_v} V")]
    TargetUnreachable { target_v: f64, max_vt_v: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    /// Extraction arithmetic produced a negative trapping time.
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("pulse width {t_pw_s} s does not exceed the steady dead time {dead_time_s} s")]
    Uncompensatable { t_pw_s: f64, dead_time_s: f64 },

    #[error("{step}: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps an error with the label of the pipeline step that produced it.
    pub fn at_step(self, step: &'static str) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through step labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}
