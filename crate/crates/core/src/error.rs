use thiserror::Error;

/// Modelling assumptions the theory relies on. Violations are reported
/// separately from plain argument errors so callers can react to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// The behaviour policy gives every action positive probability.
    FullSupportBehavior,
    /// The behaviour policy covers every action the target policy takes.
    Coverage,
    /// The induced Markov chain is irreducible and aperiodic.
    ErgodicChain,
    /// The stepsize sequence satisfies the drift budget condition.
    StepsizeBudget,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Assumption::FullSupportBehavior => "full-support behaviour policy",
            Assumption::Coverage => "behaviour policy covers target policy",
            Assumption::ErgodicChain => "irreducible aperiodic chain",
            Assumption::StepsizeBudget => "stepsize budget condition",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("chain is reducible")]
    Reducible,
    #[error("chain is periodic with period {0}")]
    Periodic(usize),
    #[error("assumption violated ({assumption}): {detail}")]
    Assumption { assumption: Assumption, detail: String },
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("iterate overflow at iteration {iteration}: sup norm {norm:e}")]
    Overflow { iteration: usize, norm: f64 },
    #[error("state space too large: {0}")]
    TooLarge(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn assumption(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::Assumption { assumption, detail: detail.into() }
    }

    pub fn is_assumption(&self) -> bool {
        matches!(self, Error::Assumption { .. } | Error::Reducible | Error::Periodic(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
