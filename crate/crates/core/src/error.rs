use thiserror::Error;

use crate::lattice::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid model, driver or run parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// The monotone one-step condition `sqrt(dt) * L_z <= 1` fails.
    #[error(
        "monotone step condition violated: sqrt(dt) * slope = {product:.6} > 1 \
         (slope bound {slope:.6}); need dt <= {required_dt:.6e}"
    )]
    StepCondition {
        product: f64,
        slope: f64,
        required_dt: f64,
    },

    /// An operation was called with inputs outside its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("node {node}: terminal value {terminal} is on the wrong side of the barrier {barrier}")]
    Infeasible {
        node: NodeId,
        terminal: f64,
        barrier: f64,
    },

    #[error("domain error at node {node}: {message}")]
    Domain { node: NodeId, message: String },

    #[error("capacity exceeded: {what} is {value}, bound is {bound}")]
    Capacity {
        what: &'static str,
        value: u64,
        bound: u64,
    },

    /// Penalization schedule ran out before the gap fell below tolerance.
    /// Carries `(n, gap)` for every schedule entry tried.
    #[error("no convergence to tolerance {tol:e}; last gap {last_gap:e} after {} levels", gaps.len())]
    Convergence {
        tol: f64,
        last_gap: f64,
        gaps: Vec<(f64, f64)>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// True for errors caused by the caller's setup rather than by the solve.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::StepCondition { .. } | Error::Capacity { .. }
        )
    }
}
