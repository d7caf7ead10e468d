use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::plant::{euler_rate_matrix, Input4, State14};
use crate::reference::ReferenceSample;

/// Penalty weights of the per-step reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub w_r: f64,
    pub w_v: f64,
    pub w_eta: f64,
    pub w_omega: f64,
    pub w_u: f64,
    pub w_s: f64,
    pub rho_fail: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_r: 1.0,
            w_v: 0.1,
            w_eta: 0.1,
            w_omega: 0.01,
            w_u: 1e-4,
            w_s: 0.01,
            rho_fail: 100.0,
        }
    }
}

impl RewardWeights {
    /// All weights nonnegative; the failure penalty must dwarf the switching
    /// penalty (by 100x) and be at least 1.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("reward.w_r", self.w_r),
            ("reward.w_v", self.w_v),
            ("reward.w_eta", self.w_eta),
            ("reward.w_omega", self.w_omega),
            ("reward.w_u", self.w_u),
            ("reward.w_s", self.w_s),
            ("reward.rho_fail", self.rho_fail),
        ];
        for (name, w) in named {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::validation(name, format!("must be finite and >= 0, got {w}")));
            }
        }
        if self.rho_fail < 1.0 || self.rho_fail < 100.0 * self.w_s {
            return Err(Error::validation(
                "reward.rho_fail",
                format!("must be >= 1 and >= 100 * w_s, got {}", self.rho_fail),
            ));
        }
        Ok(())
    }
}

/// Individual penalty contributions, each reported as a nonnegative cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    pub position: f64,
    pub velocity: f64,
    pub attitude: f64,
    pub body_rate: f64,
    pub effort: f64,
    pub switching: f64,
    pub failure: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        -(self.position + self.velocity + self.attitude + self.body_rate + self.effort + self.switching + self.failure)
    }
}

/// Per-step reward with `omega = E^-1 eta_dot`. At a singular attitude the
/// body-rate term falls back to `eta_dot` itself.
pub fn reward(
    x: &State14,
    reference: &ReferenceSample,
    u: &Input4,
    tau: &Vector3<f64>,
    switched: bool,
    w: &RewardWeights,
    failed: bool,
) -> RewardTerms {
    let omega = euler_rate_matrix(x.eta[0], x.eta[1])
        .map(|e| e.e_inv * x.eta_dot)
        .unwrap_or(x.eta_dot);
    RewardTerms {
        position: w.w_r * (x.r - reference.pos).norm_squared(),
        velocity: w.w_v * (x.v - reference.vel).norm_squared(),
        attitude: w.w_eta * x.eta.norm_squared(),
        body_rate: w.w_omega * omega.norm_squared(),
        effort: w.w_u * (u.u_thrust * u.u_thrust + tau.norm_squared()),
        switching: if switched { w.w_s } else { 0.0 },
        failure: if failed { w.rho_fail } else { 0.0 },
    }
}

/// Bounds whose violation ends an episode with the failure penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafetyLimits {
    /// Maximum position error [m].
    pub position_error: f64,
    /// Maximum |roll| and |pitch| [rad].
    pub tilt: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        Self {
            position_error: 5.0,
            tilt: 1.2,
        }
    }
}

pub fn is_safety_violation(x: &State14, reference: &ReferenceSample, limits: &SafetyLimits) -> bool {
    !x.is_finite()
        || (x.r - reference.pos).norm() > limits.position_error
        || x.eta[0].abs() > limits.tilt
        || x.eta[1].abs() > limits.tilt
}
