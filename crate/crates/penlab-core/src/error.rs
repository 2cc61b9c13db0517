//! Error types shared by every solver module.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction rejected the requested geometry.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two objects that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A parameter failed validation (sign, range, missing piece).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver ran out of iterations.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The penalized state sits on a kink of a nonsmooth family, so the
    /// directional derivative is not linear in the direction there.
    #[error("state touches penalty kinks at {} node(s); first few: {:?}", nodes.len(), preview(nodes))]
    NotGateaux { nodes: Vec<usize> },

    /// Brute-force enumeration is capped to keep 2^N affordable.
    #[error("brute-force reference requires at most {max} nodes, got {got}")]
    TooLargeForBruteForce { max: usize, got: usize },

    /// A least-squares rate fit had too little usable data.
    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    /// A parameter sweep failed part-way; `source` is the underlying
    /// failure and `rho` the schedule entry at which it happened.
    #[error("sweep failed at rho = {rho:.6e}: {source}")]
    Sweep { rho: f64, source: Box<Error> },

    /// Numerical linear algebra failed in a way that indicates a bug,
    /// not bad user input (e.g. an SPD factorization hit a nonpositive pivot).
    #[error("internal error: {0}")]
    Internal(String),

    /// I/O while reading nodal data files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn preview(nodes: &[usize]) -> Vec<usize> {
    nodes.iter().copied().take(8).collect()
}

pub type Result<T> = std::result::Result<T, Error>;
