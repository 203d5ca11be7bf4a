use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Straight multi-lane highway. Lane `k` spans `[k·w, (k+1)·w)` laterally,
/// the road spans `[0, length]` longitudinally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub num_lanes: usize,
    pub lane_width: f64,
    pub length: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            num_lanes: 3,
            lane_width: 3.2,
            length: 200.0,
            v_min: 0.0,
            v_max: 40.0,
        }
    }
}

impl RoadGeometry {
    pub fn width(&self) -> f64 {
        self.num_lanes as f64 * self.lane_width
    }

    /// Lane containing lateral coordinate `y`, or `None` off the road.
    pub fn lane_of(&self, y: f64) -> Option<usize> {
        if !(0.0..=self.width()).contains(&y) {
            return None;
        }
        Some(((y / self.lane_width).floor() as usize).min(self.num_lanes - 1))
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    pub fn check(&self) -> Result<(), String> {
        if self.num_lanes == 0 {
            return Err("num_lanes must be at least 1".into());
        }
        if !(self.lane_width > 0.0) {
            return Err("lane_width must be positive".into());
        }
        if !(self.length > 0.0) {
            return Err("road length must be positive".into());
        }
        if !(self.v_min >= 0.0 && self.v_max > self.v_min) {
            return Err("speed range must satisfy v_max > v_min >= 0".into());
        }
        Ok(())
    }
}

/// Vehicle footprint shared by the AV and every BV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self {
            length: 5.0,
            width: 1.8,
        }
    }
}

/// Per-step dynamics envelope for recorded background vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsLimits {
    /// m/s²
    pub a_min: f64,
    pub a_max: f64,
    /// rad/s
    pub omega_min: f64,
    pub omega_max: f64,
    /// m/s
    pub v_max: f64,
}

impl Default for DynamicsLimits {
    fn default() -> Self {
        // -0.8 g / +0.6 g with g = 9.8
        Self {
            a_min: -7.84,
            a_max: 5.88,
            omega_min: -PI / 3.0,
            omega_max: PI / 3.0,
            v_max: 40.0,
        }
    }
}
