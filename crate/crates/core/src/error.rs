//! Crate-wide error type and process exit-code mapping.

use thiserror::Error;

use crate::sim::EventKind;

#[derive(Debug, Error)]
pub enum Error {
    /// The configuration document could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),

    /// The configuration parsed but violates a mission invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An endogenous event fired with |A - B*N| below the transversality
    /// floor; the event-time derivative is undefined there.
    #[error(
        "singular guard at t={time}: |A - B*N| = {rate:e} at {kind:?} \
         (target {target}, agent {agent:?}); gradient evaluation aborted"
    )]
    SingularGuard {
        time: f64,
        rate: f64,
        kind: EventKind,
        target: usize,
        agent: Option<usize>,
    },

    /// A handler was invoked in a state the event calculus forbids.
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// The discretized state space exceeds the configured budget.
    #[error("dp budget exceeded: {states} states (x{layers} layers) over budget of {budget}")]
    DpBudget {
        states: usize,
        layers: usize,
        budget: usize,
    },

    /// A requested operation is outside the supported problem class.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::Unsupported(_) => 2,
            Error::SingularGuard { .. } | Error::Internal(_) => 3,
            Error::DpBudget { .. } => 4,
            Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
