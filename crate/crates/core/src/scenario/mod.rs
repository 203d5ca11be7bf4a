//! Scenario and library data model.
//!
//! A scenario is an AV-agnostic recording: the initial joint state plus `H`
//! frames of background-vehicle (BV) states sampled every `dt` seconds.
//! Frame `t` of the BV timeline is `bv_init` for `t = 0` and
//! `bv_frames[t - 1]` for `1 ≤ t ≤ H`.

mod features;
mod io;
mod stats;
mod validate;

pub use features::{FeatureSpec, FeatureVector};
pub use io::{load_library, write_library, write_library_csv, LibraryFormat, LoadOptions};
pub use stats::{library_stats, Histogram, Histogram2d, StatsReport};
pub use validate::{validate_scenario, Quantity, Violation};

use crate::error::{Error, Result};
use crate::road::RoadGeometry;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m).
    pub y: f64,
    /// Speed (m/s).
    pub v: f64,
    /// Heading (rad), 0 along the road.
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        Self { x, y, v, theta }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.v, self.theta]
    }

    /// First broken state invariant, if any.
    pub fn invariant_error(&self) -> Option<String> {
        for (name, value) in [("x", self.x), ("y", self.y), ("v", self.v), ("theta", self.theta)] {
            if !value.is_finite() {
                return Some(format!("{name} must be finite, got {value}"));
            }
        }
        if self.v < 0.0 {
            return Some(format!("v ≥ 0 violated, got {}", self.v));
        }
        if self.theta.abs() > PI {
            return Some(format!("|theta| ≤ π violated, got {}", self.theta));
        }
        None
    }
}

/// Per-step change of the AV's speed (m/s) and heading (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AvAction {
    pub dv: f64,
    pub dtheta: f64,
}

impl AvAction {
    pub fn new(dv: f64, dtheta: f64) -> Self {
        Self { dv, dtheta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub dt: f64,
    pub av_init: VehicleState,
    pub bv_init: Vec<VehicleState>,
    pub bv_frames: Vec<Vec<VehicleState>>,
    /// Generator script name per BV; empty for externally recorded data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maneuvers: Vec<String>,
}

impl Scenario {
    pub fn num_bvs(&self) -> usize {
        self.bv_init.len()
    }

    pub fn horizon(&self) -> usize {
        self.bv_frames.len()
    }

    /// BV states at frame `t` (0 ≤ t ≤ H).
    pub fn bv_frame(&self, t: usize) -> &[VehicleState] {
        if t == 0 {
            &self.bv_init
        } else {
            &self.bv_frames[t - 1]
        }
    }

    /// Structural invariants: shapes, finiteness, speed sign and heading range.
    pub fn check_structure(&self, n_max: usize, h_max: usize) -> Result<()> {
        let id = self.id.as_str();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invariant(id, "dt", format!("dt > 0 violated, got {}", self.dt)));
        }
        let n = self.num_bvs();
        if n == 0 || n > n_max {
            return Err(Error::invariant(id, "bv_init", format!("1 ≤ N ≤ {n_max} violated, got N = {n}")));
        }
        let h = self.horizon();
        if h == 0 || h > h_max {
            return Err(Error::invariant(id, "bv_frames", format!("1 ≤ H ≤ {h_max} violated, got H = {h}")));
        }
        if !self.maneuvers.is_empty() && self.maneuvers.len() != n {
            return Err(Error::invariant(id, "maneuvers", format!("expected {n} entries, got {}", self.maneuvers.len())));
        }
        if let Some(e) = self.av_init.invariant_error() {
            return Err(Error::invariant(id, "av_init", e));
        }
        for (t, frame) in std::iter::once(&self.bv_init).chain(self.bv_frames.iter()).enumerate() {
            if frame.len() != n {
                return Err(Error::invariant(
                    id,
                    format!("frame {t}"),
                    format!("expected {n} vehicles, got {}", frame.len()),
                ));
            }
            for (j, s) in frame.iter().enumerate() {
                if let Some(e) = s.invariant_error() {
                    return Err(Error::invariant(id, format!("frame {t} vehicle {}", j + 1), e));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LibraryMetadata {
    pub provenance: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLibrary {
    pub scenarios: Vec<Scenario>,
    pub road: RoadGeometry,
    pub dt: f64,
    pub n_max: usize,
    pub h_max: usize,
    pub metadata: LibraryMetadata,
}

impl ScenarioLibrary {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.scenarios.iter().position(|s| s.id == id)
    }

    /// Library-level invariants: unique ids, shared `dt`, per-scenario structure.
    pub fn check(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.scenarios.len());
        for s in &self.scenarios {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invariant(&s.id, "id", "duplicate scenario id"));
            }
            if s.dt != self.dt {
                return Err(Error::invariant(&s.id, "dt", format!("library dt is {}, scenario has {}", self.dt, s.dt)));
            }
            s.check_structure(self.n_max, self.h_max)?;
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_rejects_ragged_frames() {
        let mut s = fixtures::simple("a", 2, 5);
        s.bv_frames[3].pop();
        let err = s.check_structure(4, 100).unwrap_err().to_string();
        assert!(err.contains("frame 4"), "{err}");
    }

    #[test]
    fn structure_rejects_negative_speed() {
        let mut s = fixtures::simple("neg", 1, 5);
        s.bv_frames[0][0].v = -1.0;
        let err = s.check_structure(4, 100).unwrap_err().to_string();
        assert!(err.contains("neg") && err.contains("v ≥ 0"), "{err}");
    }

    #[test]
    fn structure_bounds_n_and_h() {
        assert!(fixtures::simple("a", 5, 5).check_structure(4, 100).is_err());
        assert!(fixtures::simple("a", 1, 101).check_structure(4, 100).is_err());
        assert!(fixtures::simple("a", 4, 100).check_structure(4, 100).is_ok());
    }

    #[test]
    fn library_rejects_duplicate_ids() {
        let lib = fixtures::library(vec![fixtures::simple("a", 1, 3), fixtures::simple("a", 1, 3)]);
        assert!(lib.check().is_err());
    }
}
