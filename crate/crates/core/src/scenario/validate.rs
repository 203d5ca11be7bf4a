use super::Scenario;
use crate::road::{DynamicsLimits, RoadGeometry};
use crate::sim::wrap_angle;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Slack for floating-point round-off when re-deriving rates from positions.
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Acceleration,
    AngularVelocity,
    Speed,
    LateralPosition,
    LongitudinalPosition,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Acceleration => "acceleration",
            Quantity::AngularVelocity => "angular_velocity",
            Quantity::Speed => "speed",
            Quantity::LateralPosition => "lateral_position",
            Quantity::LongitudinalPosition => "longitudinal_position",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Frame index `t`; rate quantities refer to the step `t-1 → t`.
    pub frame: usize,
    /// 0 for the AV, `j` for the j-th BV.
    pub vehicle: usize,
    pub quantity: Quantity,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frame {} vehicle {}: {} = {} outside [{}, {}]",
            self.frame, self.vehicle, self.quantity, self.value, self.lo, self.hi
        )
    }
}

/// Checks BV dynamics against the limits and every vehicle against the road
/// bounds. An empty result means the scenario is admissible.
pub fn validate_scenario(s: &Scenario, road: &RoadGeometry, limits: &DynamicsLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |frame, vehicle, quantity, value: f64, lo: f64, hi: f64| {
        if !(value >= lo - TOLERANCE && value <= hi + TOLERANCE) {
            out.push(Violation {
                frame,
                vehicle,
                quantity,
                value,
                lo,
                hi,
            });
        }
    };
    let v_max = limits.v_max.min(road.v_max);
    let width = road.width();

    let av = &s.av_init;
    check(0, 0, Quantity::Speed, av.v, 0.0, v_max);
    check(0, 0, Quantity::LateralPosition, av.y, 0.0, width);
    check(0, 0, Quantity::LongitudinalPosition, av.x, 0.0, road.length);

    for t in 0..=s.horizon() {
        let frame = s.bv_frame(t);
        for (j, st) in frame.iter().enumerate() {
            let vehicle = j + 1;
            check(t, vehicle, Quantity::Speed, st.v, 0.0, v_max);
            check(t, vehicle, Quantity::LateralPosition, st.y, 0.0, width);
            check(t, vehicle, Quantity::LongitudinalPosition, st.x, 0.0, road.length);
            if t > 0 {
                let prev = &s.bv_frame(t - 1)[j];
                let accel = (st.v - prev.v) / s.dt;
                check(t, vehicle, Quantity::Acceleration, accel, limits.a_min, limits.a_max);
                let omega = wrap_angle(st.theta - prev.theta) / s.dt;
                check(t, vehicle, Quantity::AngularVelocity, omega, limits.omega_min, limits.omega_max);
            }
        }
    }
    out
}
