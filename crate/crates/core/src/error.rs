use thiserror::Error;

/// Errors raised by the model, kernel, objective, solver and diagnostics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {what} = {index}, bound {bound}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("cannot draw {requested} distinct cells from a {n}x{t} matrix")]
    TooManySamples { requested: usize, n: usize, t: usize },

    #[error("rank {rank} exceeds min(n, T) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    /// The interpolation Gram system could not be solved to the required accuracy.
    #[error("singular Gram system on a {points}-point grid (residual {residual:.3e}); coarsen the grid or widen the bandwidth")]
    SingularGram { points: usize, residual: f64 },

    #[error("ill-conditioned kernel ridge system (ridge {ridge:.3e}, residual {residual:.3e})")]
    IllConditioned { ridge: f64, residual: f64 },

    #[error("non-finite loss at iteration {iter}; reduce the step sizes")]
    NonFiniteLoss { iter: usize },

    /// Link atoms left the representable range. `iter` is 0 outside the solver loop.
    #[error("iterates diverged at iteration {iter}; reduce the step sizes")]
    Diverged { iter: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
