//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single violated model constraint, located by its tensor indices.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelViolation {
    /// Transition row (a, i) does not sum to 1 within tolerance.
    RowSum { action: usize, state: usize, sum: f64 },
    /// Negative transition probability at (a, i, j).
    NegativeProbability {
        action: usize,
        state: usize,
        next_state: usize,
        value: f64,
    },
    /// Reward outside [0, 1] at (a, i, j).
    RewardRange {
        action: usize,
        state: usize,
        next_state: usize,
        value: f64,
    },
}

impl std::fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelViolation::RowSum { action, state, sum } => {
                write!(f, "transition row (a={action}, i={state}) sums to {sum}")
            }
            ModelViolation::NegativeProbability {
                action,
                state,
                next_state,
                value,
            } => write!(
                f,
                "negative probability p[{action}][{state}][{next_state}] = {value}"
            ),
            ModelViolation::RewardRange {
                action,
                state,
                next_state,
                value,
            } => write!(
                f,
                "reward r[{action}][{state}][{next_state}] = {value} outside [0, 1]"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {} violation(s), first: {}", .0.len(), .0[0])]
    InvalidModel(Vec<ModelViolation>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("chain is not ergodic: states ({from}, {to}) do not communicate aperiodically")]
    NonErgodic { from: usize, to: usize },

    #[error("mixing-time search exceeded cap of {cap} steps")]
    MixingCapExceeded { cap: u64 },

    #[error("deterministic-policy enumeration needs {needed} policies, budget is {budget}")]
    EnumerationBudget { needed: f64, budget: u64 },

    #[error("policy iteration revisited a policy without converging")]
    PolicyIterationCycled,

    #[error("weights are all zero; cannot sample")]
    AllZeroWeights,

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("projection infeasible: {n} entries with floor {lower} exceed total mass 1")]
    InfeasibleProjection { n: usize, lower: f64 },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant breached at iteration {iteration}: {message}")]
    InvariantBreach { iteration: u64, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}
