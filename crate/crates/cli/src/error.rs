use std::path::PathBuf;

use thiserror::Error;

use crate::validate::Diagnostic;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    /// The configuration failed validation; every diagnostic is kept.
    #[error("invalid configuration:\n{}", render(.0))]
    Invalid(Vec<Diagnostic>),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric failure in {step}: {reason}")]
    Numeric { step: String, reason: String },

    #[error("{0}")]
    Pipeline(ctf_sim::Error),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// Process exit status: 2 usage/config, 3 I/O, 4 numeric failure, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(d) if d.iter().any(Diagnostic::is_io) => 3,
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric { .. } => 4,
            CliError::Pipeline(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Maps a library error raised inside pipeline step `step`.
    pub(crate) fn from_core(step: &str, err: ctf_sim::Error) -> Self {
        Self::labelled(vec![step.to_string()], err)
    }

    fn labelled(mut labels: Vec<String>, err: ctf_sim::Error) -> Self {
        use ctf_sim::Error as E;
        let mut cur = &err;
        while let E::Step { step, source } = cur {
            labels.push((*step).to_string());
            cur = source;
        }
        match cur {
            E::NumericFailure { step, reason } => {
                labels.push(step.clone());
                CliError::Numeric {
                    step: labels.join("/"),
                    reason: reason.clone(),
                }
            }
            E::InvalidArgument(m) | E::Parse(m) => CliError::Usage(format!("{}: {m}", labels.join("/"))),
            E::PreconditionViolation { .. } => CliError::Usage(format!("{}: {cur}", labels.join("/"))),
            E::Io(e) => CliError::io(labels.join("/"), std::io::Error::new(e.kind(), e.to_string())),
            _ => CliError::Pipeline(err),
        }
    }
}

impl From<ctf_sim::Error> for CliError {
    fn from(err: ctf_sim::Error) -> Self {
        Self::labelled(Vec::new(), err)
    }
}
