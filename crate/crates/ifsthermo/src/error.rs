//! Error taxonomy shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong across the toolkit.
///
/// Variants are grouped by how a caller should react: validation problems
/// (bad arguments, mismatched dimensions, structural preconditions),
/// iteration failures (no convergence, unstable evaluations), and resource
/// caps. The CLI maps these groups onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two objects that must share an ambient dimension do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A configured size cap would be exceeded.
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (last residual {last_residual:e})")]
    Convergence {
        iterations: usize,
        last_residual: f64,
        /// Residual after each iteration, oldest first.
        history: Vec<f64>,
    },

    /// A pair of maps coincides on a continuum, so branch points are not a
    /// finite set and the branch analysis does not apply.
    #[error("unsupported branch structure: {0}")]
    UnsupportedBranchStructure(String),

    /// Multiplicity was requested for a pair that no map connects.
    #[error("no map sends y={y:?} to x={x:?} within {tol:e}; pair is not in the cograph")]
    NotInCograph { x: Vec<f64>, y: Vec<f64>, tol: f64 },

    /// An interpolation target sits farther from the grid than the grid's
    /// own error bound allows.
    #[error("grid too coarse: interpolation distance {distance:e} exceeds bound {bound:e}")]
    GridResolution { distance: f64, bound: f64 },

    /// The potential family fails the strict `h > 1` bound.
    #[error("potential not bounded above one: log-margin {margin:e} is not positive")]
    PotentialNotAboveOne { margin: f64 },

    /// A potential evaluated to something unusable.
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    /// The potential family disagrees at a branched point where coinciding
    /// maps force equality.
    #[error("incompatible potential family: {0}")]
    IncompatiblePotential(String),

    /// An operation was invoked in a temperature regime where it is not
    /// defined.
    #[error("operation requires the {required} regime, found {found}")]
    Regime { required: String, found: String },

    /// Numerical output contradicts a structural fact that must hold.
    #[error("inconsistency: {0}")]
    Inconsistency(String),

    /// Evaluations behaved non-monotonically or otherwise outside their
    /// guaranteed envelope.
    #[error("numerical instability: {0}")]
    NumericalInstability(String),
}

pub type Result<T> = std::result::Result<T, Error>;
