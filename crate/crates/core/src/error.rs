use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model or perturbation configuration failed a certified check.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{solver} did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("generator is reducible: {0}")]
    Reducible(String),

    /// Cross-derivative splitting would produce a negative off-diagonal rate.
    #[error("monotone stencil fails at node {node} (x = {coords:?}): {detail}; refine the grid")]
    Monotonicity {
        node: usize,
        coords: Vec<f64>,
        detail: String,
    },

    #[error("assumption check failed: {0}")]
    Assumption(String),

    #[error("linear solve failed: {0}")]
    Linalg(String),

    #[error("simulation error: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Linalg(_))
    }
}
