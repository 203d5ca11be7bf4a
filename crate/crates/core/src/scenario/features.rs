//! Flattening of a whole scenario into a fixed-width predictor input.
//!
//! Layout, in units of 6-tuples `(t, vehicle_id, x, y, v, theta)`:
//! slot 0 holds the AV initial state, then slot `1 + (t-1)·n_max + (j-1)`
//! holds BV `j` at recorded frame `t` (`1 ≤ t ≤ H`, `1 ≤ j ≤ N`).
//! Unoccupied slots stay zero.

use super::Scenario;
use crate::error::{Error, Result};
use crate::road::RoadGeometry;
use std::f64::consts::PI;

pub const TUPLE: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub n_max: usize,
    pub h_max: usize,
    pub road: RoadGeometry,
    pub normalize: bool,
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        TUPLE * (1 + self.n_max * self.h_max)
    }

    /// Offset of BV `vehicle` (1-based) at frame `t` (1-based).
    pub fn offset(&self, t: usize, vehicle: usize) -> usize {
        TUPLE * (1 + (t - 1) * self.n_max + (vehicle - 1))
    }

    pub fn featurize(&self, s: &Scenario) -> Result<FeatureVector> {
        let mut out = vec![0.0; self.dim()];
        self.featurize_into(s, &mut out)?;
        Ok(FeatureVector(out))
    }

    /// Writes into a zeroed buffer of length [`dim`](Self::dim).
    pub fn featurize_into(&self, s: &Scenario, out: &mut [f64]) -> Result<()> {
        if s.num_bvs() > self.n_max || s.horizon() > self.h_max {
            return Err(Error::DimensionOverflow(format!(
                "scenario `{}` has N = {}, H = {} but the feature layout holds n_max = {}, h_max = {}",
                s.id,
                s.num_bvs(),
                s.horizon(),
                self.n_max,
                self.h_max
            )));
        }
        if out.len() != self.dim() {
            return Err(Error::Shape(format!("feature buffer has {} entries, expected {}", out.len(), self.dim())));
        }
        let scale = self.scales();
        let mut put = |offset: usize, t: usize, id: usize, st: &super::VehicleState| {
            let raw = [t as f64, id as f64, st.x, st.y, st.v, st.theta];
            for k in 0..TUPLE {
                out[offset + k] = raw[k] * scale[k];
            }
        };
        put(0, 0, 0, &s.av_init);
        for (i, frame) in s.bv_frames.iter().enumerate() {
            let t = i + 1;
            for (j, st) in frame.iter().enumerate() {
                put(self.offset(t, j + 1), t, j + 1, st);
            }
        }
        Ok(())
    }

    fn scales(&self) -> [f64; TUPLE] {
        if !self.normalize {
            return [1.0; TUPLE];
        }
        [
            1.0 / self.h_max as f64,
            1.0 / self.n_max as f64,
            1.0 / self.road.length,
            1.0 / self.road.width(),
            1.0 / self.road.v_max,
            1.0 / PI,
        ]
    }
}
