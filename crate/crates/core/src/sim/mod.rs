//! Deterministic replay simulator: AV kinematics, BV playback, accident
//! detection, reward shaping and rollouts.

mod collision;
mod env;
mod reward;
mod rollout;

pub use collision::{detect_accident, footprint, AccidentKind, Rect};
pub use env::{Env, EnvConfig, EnvState, Step};
pub use reward::{best_lane, compute_reward, RewardBreakdown, RewardCoefficients};
pub use rollout::{rollout, ActMode, ConstantPolicy, Policy, RolloutResult};

use crate::road::DynamicsLimits;
use crate::scenario::{AvAction, VehicleState};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle into `(-π, π]`. Angles already in range are returned
/// untouched.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// One step of the AV model. Position advances with the pre-update speed
/// and heading; speed is clamped to `[0, v_max]`.
pub fn av_kinematic_step(s: &VehicleState, a: &AvAction, dt: f64, v_max: f64) -> VehicleState {
    VehicleState {
        x: s.x + s.v * s.theta.cos() * dt,
        y: s.y + s.v * s.theta.sin() * dt,
        v: (s.v + a.dv).clamp(0.0, v_max),
        theta: wrap_angle(s.theta + a.dtheta),
    }
}

/// Per-step action box for the AV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub dv_min: f64,
    pub dv_max: f64,
    pub dtheta_min: f64,
    pub dtheta_max: f64,
}

impl ActionBounds {
    /// Rates from `limits` integrated over one frame.
    pub fn from_limits(limits: &DynamicsLimits, dt: f64) -> Self {
        Self {
            dv_min: limits.a_min * dt,
            dv_max: limits.a_max * dt,
            dtheta_min: limits.omega_min * dt,
            dtheta_max: limits.omega_max * dt,
        }
    }

    /// Maps `[-1, 1]²` onto the box. Each half-interval is scaled separately
    /// so that 0 maps to "no change" even when the box is asymmetric.
    pub fn from_unit(&self, u: [f64; 2]) -> AvAction {
        AvAction {
            dv: scale_half(u[0], self.dv_min, self.dv_max),
            dtheta: scale_half(u[1], self.dtheta_min, self.dtheta_max),
        }
    }

    pub fn to_unit(&self, a: &AvAction) -> [f64; 2] {
        [unscale_half(a.dv, self.dv_min, self.dv_max), unscale_half(a.dtheta, self.dtheta_min, self.dtheta_max)]
    }

    pub fn clamp(&self, a: &AvAction) -> AvAction {
        AvAction {
            dv: a.dv.clamp(self.dv_min, self.dv_max),
            dtheta: a.dtheta.clamp(self.dtheta_min, self.dtheta_max),
        }
    }
}

fn scale_half(u: f64, lo: f64, hi: f64) -> f64 {
    if u >= 0.0 {
        u * hi
    } else {
        -u * lo
    }
}

fn unscale_half(a: f64, lo: f64, hi: f64) -> f64 {
    if a >= 0.0 {
        if hi > 0.0 {
            a / hi
        } else {
            0.0
        }
    } else if lo < 0.0 {
        -a / lo
    } else {
        0.0
    }
}
