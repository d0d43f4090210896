//! Step, regularization and scaling sequences.
//!
//! Two families ship. The polynomial family uses `α_t = α₀/t^{θ₁}`,
//! `γ_t = γ₀/α_t`, `s_t = s₀/t^{θ₂}` with `θ₁ ∈ (0,1)` and `θ₂ > θ₁`. The
//! geometric family uses `α_t = α₀ √(Ψ_t/t)` with `Ψ_t = Σ_{k≤t} μ^k`,
//! `γ_t = γ₀/α_t`, `s_t = s₀ μ^t` with `μ ∈ (0,1)`. In both, `α_t γ_t = γ₀`
//! by construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::ProblemBounds;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("polynomial family needs theta1 in (0,1) and theta2 > theta1, got ({0}, {1})")]
    InvalidExponents(f64, f64),
    #[error("geometric family needs mu in (0,1), got {0}")]
    InvalidRatio(f64),
    #[error("scale parameters must be positive: alpha0={0}, gamma0={1}, s0={2}")]
    InvalidScales(f64, f64, f64),
    #[error("gamma0 = {gamma0} exceeds 1/(4 G2^2) = {limit} for the configured problem")]
    RegularizationTooLarge { gamma0: f64, limit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum ScheduleFamily {
    Polynomial { theta1: f64, theta2: f64 },
    Geometric { mu: f64 },
}

/// Parameter values for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub gamma: f64,
    pub scaling: f64,
    /// Set when the scaling value underflowed and was floored to the smallest
    /// positive normal.
    pub scaling_floored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(flatten)]
    family: ScheduleFamily,
    alpha0: f64,
    gamma0: f64,
    s0: f64,
}

/// Values this small would make the division in the estimate update blow up,
/// so the scaling sequence is floored here (with a warning upstream).
const SCALING_UNDERFLOW: f64 = 1e-300;

impl Schedule {
    pub fn polynomial(
        theta1: f64,
        theta2: f64,
        alpha0: f64,
        gamma0: f64,
        s0: f64,
    ) -> Result<Self, ScheduleError> {
        if !(theta1 > 0.0 && theta1 < 1.0 && theta2 > theta1) {
            return Err(ScheduleError::InvalidExponents(theta1, theta2));
        }
        Self::with_family(ScheduleFamily::Polynomial { theta1, theta2 }, alpha0, gamma0, s0)
    }

    pub fn geometric(mu: f64, alpha0: f64, gamma0: f64, s0: f64) -> Result<Self, ScheduleError> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(ScheduleError::InvalidRatio(mu));
        }
        Self::with_family(ScheduleFamily::Geometric { mu }, alpha0, gamma0, s0)
    }

    pub fn with_family(
        family: ScheduleFamily,
        alpha0: f64,
        gamma0: f64,
        s0: f64,
    ) -> Result<Self, ScheduleError> {
        match family {
            ScheduleFamily::Polynomial { theta1, theta2 }
                if !(theta1 > 0.0 && theta1 < 1.0 && theta2 > theta1) =>
            {
                return Err(ScheduleError::InvalidExponents(theta1, theta2))
            }
            ScheduleFamily::Geometric { mu } if !(mu > 0.0 && mu < 1.0) => {
                return Err(ScheduleError::InvalidRatio(mu))
            }
            _ => {}
        }
        if !(alpha0 > 0.0 && gamma0 > 0.0 && s0 > 0.0)
            || !(alpha0.is_finite() && gamma0.is_finite() && s0.is_finite())
        {
            return Err(ScheduleError::InvalidScales(alpha0, gamma0, s0));
        }
        Ok(Self { family, alpha0, gamma0, s0 })
    }

    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// `(α_t, γ_t, s_t)` for `t >= 1`. Construction already validated the
    /// parameters, so queries never fail.
    pub fn at(&self, t: u64) -> ScheduleValues {
        debug_assert!(t >= 1, "schedules start at round 1");
        let tf = t as f64;
        let (alpha, raw_scaling) = match self.family {
            ScheduleFamily::Polynomial { theta1, theta2 } => {
                (self.alpha0 / tf.powf(theta1), self.s0 / tf.powf(theta2))
            }
            ScheduleFamily::Geometric { mu } => {
                let partial_sum = mu * (1.0 - mu.powi(t as i32)) / (1.0 - mu);
                (self.alpha0 * (partial_sum / tf).sqrt(), self.s0 * mu.powi(t as i32))
            }
        };
        let scaling_floored = raw_scaling < SCALING_UNDERFLOW;
        ScheduleValues {
            alpha,
            gamma: self.gamma0 / alpha,
            scaling: if scaling_floored { f64::MIN_POSITIVE } else { raw_scaling },
            scaling_floored,
        }
    }

    /// The regularization scale must satisfy `γ₀ ≤ 1/(4 G₂²)` for the
    /// problem's constraint-gradient bound.
    pub fn validate_against(&self, bounds: &ProblemBounds) -> Result<(), ScheduleError> {
        let g2 = bounds.grad_constraint_spectral;
        let limit = 1.0 / (4.0 * g2 * g2);
        if self.gamma0 > limit {
            return Err(ScheduleError::RegularizationTooLarge { gamma0: self.gamma0, limit });
        }
        Ok(())
    }
}
