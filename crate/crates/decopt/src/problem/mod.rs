//! Problem-oracle interface and the concrete localization benchmark.
//!
//! A [`RoundProblem`] reveals, for each agent and round, a loss gradient, a
//! constraint value and a constraint Jacobian. The oracles are pure functions
//! of `(instance, agent, round, x)` and are safe to evaluate concurrently
//! within a round.

mod localization;

pub use localization::{LocalizationConfig, LocalizationInstance};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("agent index {agent} out of range (n = {n})")]
    AgentOutOfRange { agent: usize, n: usize },
    #[error("round index {round} out of range")]
    RoundOutOfRange { round: u64 },
    #[error("point lies outside the decision set (component {component}: {value})")]
    OutsideDomain { component: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("slater margin must be positive (b = {b}); pass no_slater to allow")]
    SlaterViolation { b: f64 },
    #[error("instance file error: {0}")]
    File(String),
}

/// A nonempty closed box `[lower, upper]` in `R^p`, the decision set every
/// iterate is projected onto.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ProblemError> {
        if lower.len() != upper.len() {
            return Err(ProblemError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(ProblemError::Config("box must have dimension >= 1".into()));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ProblemError::Config(format!(
                    "invalid box bounds in component {k}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The symmetric box `[-r, r]^p`.
    pub fn symmetric(p: usize, r: f64) -> Result<Self, ProblemError> {
        Self::new(vec![-r; p], vec![r; p])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Euclidean projection: componentwise clamp. NaN components survive the
    /// clamp so numeric guards downstream can catch them.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&v, (&lo, &hi))| if v.is_nan() { v } else { v.clamp(lo, hi) }),
        )
    }

    /// Exact membership (used for clamp outputs, which land in the box bit-for-bit).
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with_slack(x, 0.0)
    }

    /// Membership with an absolute slack, for points formed by convex
    /// combinations whose rounding can overshoot by a few ulps.
    pub fn contains_with_slack(&self, x: &DVector<f64>, slack: f64) -> bool {
        x.len() == self.dimension()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo - slack && v <= hi + slack)
    }

    /// Radius `R(X)`: the largest Euclidean norm over the corner points.
    pub fn radius(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo.abs().max(hi.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Box center, the default initial iterate.
    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dimension(),
            self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| 0.5 * (lo + hi)),
        )
    }

    /// A uniform sample from the box.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> DVector<f64> {
        DVector::from_iterator(
            self.dimension(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) }),
        )
    }
}

/// Constraint oracle output: the value `g_{i,t}(x)` and its Jacobian.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Subgradient/curvature bounds estimated for a problem instance. The
/// estimates come from sampling; `grad_constraint_spectral` is the bound used
/// to validate the regularization scale, `grad_constraint_frobenius` is
/// recorded alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemBounds {
    pub grad_loss: f64,
    pub grad_constraint_spectral: f64,
    pub grad_constraint_frobenius: f64,
    pub loss_gradient_lipschitz: f64,
}

/// A strictly feasible point together with its margin: `g_{i,t}(point) <= -margin`
/// componentwise for every agent and round.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaterCertificate {
    pub point: DVector<f64>,
    pub margin: f64,
}

/// Per-agent, per-round first-order oracle for the loss and the constraints.
pub trait RoundProblem: Sync {
    fn agent_count(&self) -> usize;

    fn dimension(&self) -> usize {
        self.domain().dimension()
    }

    /// Constraint dimension `m_i` for each agent.
    fn constraint_dims(&self) -> Vec<usize>;

    fn domain(&self) -> &BoxSet;

    /// `∇f_{i,t}(x)`. Rounds are 1-based.
    fn loss_gradient(&self, agent: usize, round: u64, x: &DVector<f64>)
        -> Result<DVector<f64>, ProblemError>;

    /// `g_{i,t}(x)` and `∇g_{i,t}(x)`.
    fn constraint(&self, agent: usize, round: u64, x: &DVector<f64>)
        -> Result<ConstraintEval, ProblemError>;

    fn bounds(&self) -> ProblemBounds;

    fn slater(&self) -> Option<SlaterCertificate> {
        None
    }

    /// Stacked constraint dimension `m = Σ m_i`.
    fn stacked_constraint_dim(&self) -> usize {
        self.constraint_dims().iter().sum()
    }

    /// `g_t(x) = col(g_{1,t}(x), ..., g_{n,t}(x))`: every agent's constraint
    /// stacked at one point. An omniscient-evaluator step that exists only in
    /// the metrics layer, never inside the algorithm's information flow.
    fn stacked_constraint(&self, round: u64, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        let mut out = Vec::with_capacity(self.stacked_constraint_dim());
        for agent in 0..self.agent_count() {
            let eval = self.constraint(agent, round, x)?;
            out.extend(eval.value.iter().copied());
        }
        Ok(DVector::from_vec(out))
    }

    /// `∇f_t(x) = (1/n) Σ_j ∇f_{j,t}(x)`: the global-loss gradient at one
    /// point. Same omniscient-evaluator caveat as [`stacked_constraint`].
    ///
    /// [`stacked_constraint`]: RoundProblem::stacked_constraint
    fn global_loss_gradient(&self, round: u64, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        let n = self.agent_count();
        let mut sum = DVector::zeros(self.dimension());
        for agent in 0..n {
            sum += self.loss_gradient(agent, round, x)?;
        }
        Ok(sum / n as f64)
    }
}

pub(crate) fn check_point(
    domain: &BoxSet,
    x: &DVector<f64>,
) -> Result<(), ProblemError> {
    if x.len() != domain.dimension() {
        return Err(ProblemError::DimensionMismatch {
            expected: domain.dimension(),
            got: x.len(),
        });
    }
    // Mixed iterates are convex combinations of in-box points; rounding can
    // overshoot the faces by a few ulps, so the oracle precondition allows
    // machine-precision slack.
    let slack = 1e-9 * (1.0 + domain.radius());
    for (k, (&v, (&lo, &hi))) in x
        .iter()
        .zip(domain.lower().iter().zip(domain.upper()))
        .enumerate()
    {
        if !(v >= lo - slack && v <= hi + slack) {
            return Err(ProblemError::OutsideDomain { component: k, value: v });
        }
    }
    Ok(())
}
