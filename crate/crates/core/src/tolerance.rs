use serde::{Deserialize, Serialize};

/// Numerical thresholds shared by every check in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute tolerance on user supplied probabilities (row sums, weights).
    pub input: f64,
    /// Tolerance on identities derived internally (ratios, towers, kernels).
    pub identity: f64,
    /// Slack granted to inequalities `lhs <= rhs + slack` and to the equality
    /// constraints of feasibility problems.
    pub inequality: f64,
    /// Residual bound for solutions returned by the cone solver.
    pub residual: f64,
    /// Relative singular value cutoff for rank decisions.
    pub rank: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            input: 1e-9,
            identity: 1e-12,
            inequality: 1e-9,
            residual: 1e-10,
            rank: 1e-10,
        }
    }
}

impl Tolerances {
    /// Defaults with the inequality/feasibility slack replaced.
    pub fn with_inequality(tol: f64) -> Self {
        Self {
            inequality: tol,
            ..Self::default()
        }
    }
}
