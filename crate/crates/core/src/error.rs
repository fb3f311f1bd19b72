use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs are individually valid but inconsistent with each other.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The forward-difference capacitor update would diverge.
    #[error(
        "unstable wire discretization: time constant {time_constant:.3e} s is below half the \
         sample period {sample_period:.3e} s; raise the oversample factor or reduce the wire length"
    )]
    UnstableWire {
        time_constant: f64,
        sample_period: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "key exchange did not reach {target} kept bits within {attempts} attempts (kept {kept})"
    )]
    NonConvergence {
        target: usize,
        attempts: usize,
        kept: usize,
    },

    #[error("i/o error: {0}")]
    Io(String),

    /// A nested failure annotated with where it happened.
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },

    #[error("refusing to enumerate 2^{0} sequences (limit is 2^16)")]
    TooLarge(usize),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_domain(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(msg()))
    }
}
