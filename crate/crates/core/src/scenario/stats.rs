use super::ScenarioLibrary;
use crate::error::{Error, Result};
use crate::sim::wrap_angle;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fixed-width histogram over `[lo, hi)`; out-of-range samples land in the
/// under/overflow counters so the total always equals the sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0);
        Self {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn bin_of(&self, value: f64) -> Option<usize> {
        if value < self.lo || value.is_nan() {
            return None;
        }
        let k = ((value - self.lo) / (self.hi - self.lo) * self.counts.len() as f64).floor();
        if k >= self.counts.len() as f64 {
            None
        } else {
            Some(k as usize)
        }
    }

    pub fn add(&mut self, value: f64) {
        match self.bin_of(value) {
            Some(k) => self.counts[k] += 1,
            None if value < self.lo => self.underflow += 1,
            None => self.overflow += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        self.lo + (k as f64 + 0.5) * w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x: (f64, f64, usize),
    pub y: (f64, f64, usize),
    /// Row-major `[x_bin][y_bin]`.
    pub counts: Vec<Vec<u64>>,
    pub outside: u64,
}

impl Histogram2d {
    pub fn new(x: (f64, f64, usize), y: (f64, f64, usize)) -> Self {
        Self {
            x,
            y,
            counts: vec![vec![0; y.2]; x.2],
            outside: 0,
        }
    }

    pub fn add(&mut self, xv: f64, yv: f64) {
        let bx = Histogram::new(self.x.0, self.x.1, self.x.2).bin_of(xv);
        let by = Histogram::new(self.y.0, self.y.1, self.y.2).bin_of(yv);
        match (bx, by) {
            (Some(i), Some(j)) => self.counts[i][j] += 1,
            _ => self.outside += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.outside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub scenarios: usize,
    /// Number of scenarios per BV count.
    pub per_bv_count: BTreeMap<usize, usize>,
    pub total_frames: usize,
    pub bv_yaw: Histogram,
    pub bv_speed: Histogram,
    pub bv_accel: Histogram,
    pub bv_bv_distance: Histogram,
    pub initial_bv_av_distance: Histogram,
    /// Initial BV position relative to the AV, `(dx, dy)`.
    pub initial_relative_position: Histogram2d,
}

pub fn library_stats(lib: &ScenarioLibrary) -> Result<StatsReport> {
    if lib.is_empty() {
        return Err(Error::Empty("library has no scenarios".into()));
    }
    let mut r = StatsReport {
        scenarios: lib.len(),
        per_bv_count: BTreeMap::new(),
        total_frames: 0,
        bv_yaw: Histogram::new(-0.5, 0.5, 50),
        bv_speed: Histogram::new(0.0, 40.0, 40),
        bv_accel: Histogram::new(-8.0, 6.0, 56),
        bv_bv_distance: Histogram::new(0.0, 100.0, 50),
        initial_bv_av_distance: Histogram::new(0.0, 100.0, 50),
        initial_relative_position: Histogram2d::new((-60.0, 60.0, 48), (-10.0, 10.0, 20)),
    };
    for s in &lib.scenarios {
        *r.per_bv_count.entry(s.num_bvs()).or_default() += 1;
        r.total_frames += s.horizon();
        for t in 0..=s.horizon() {
            let frame = s.bv_frame(t);
            for (j, st) in frame.iter().enumerate() {
                r.bv_yaw.add(wrap_angle(st.theta));
                r.bv_speed.add(st.v);
                if t > 0 {
                    r.bv_accel.add((st.v - s.bv_frame(t - 1)[j].v) / s.dt);
                }
                for other in &frame[j + 1..] {
                    r.bv_bv_distance.add((st.x - other.x).hypot(st.y - other.y));
                }
            }
        }
        let av = &s.av_init;
        for st in &s.bv_init {
            let (dx, dy) = (st.x - av.x, st.y - av.y);
            r.initial_bv_av_distance.add(dx.hypot(dy));
            r.initial_relative_position.add(dx, dy);
        }
    }
    Ok(r)
}
