use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate factorization: {0}")]
    DegenerateFactorization(String),

    #[error("orthogonal complement is empty (basis already spans the space)")]
    EmptyComplement,

    #[error("tolerance not met: {0}")]
    Tolerance(String),

    #[error("closed loop is not stable (spectral radius {0:.6})")]
    Unstable(f64),

    #[error("iteration did not converge: {0}")]
    Convergence(String),

    #[error("system is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("fleet construction failed: {0}")]
    FleetConstruction(String),

    #[error("non-finite state at step {step}")]
    NumericBlowup { step: usize },

    #[error("regret sample at t={t} precedes last recorded t={last}")]
    Ordering { t: usize, last: usize },

    #[error("insufficient excitation: {0}")]
    Excitation(String),

    #[error("data budget: {0}")]
    DataBudget(String),

    #[error("setup: {0}")]
    Setup(String),

    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("diagnostic: {0}")]
    Diagnostic(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn for_agent(self, agent: usize) -> Self {
        Error::Agent {
            agent,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
