//! Synthetic scenario libraries.
//!
//! Each BV follows an open-loop script laid out against the AV's
//! constant-velocity projection: a lateral target (lane centre or drift
//! offset) that switches at scripted times and a piecewise-constant
//! acceleration. A small heading controller tracks the lateral target and
//! every control is clamped to the dynamics limits before integration.

use crate::error::{Error, Result};
use crate::road::{DynamicsLimits, RoadGeometry, VehicleDims};
use crate::scenario::{validate_scenario, LibraryMetadata, Scenario, ScenarioLibrary, VehicleState};
use crate::seed::{child_rng, SimRng, Stage};
use crate::sim::{footprint, wrap_angle};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    CutIn,
    HardBrake,
    LaneDrift,
    TailgatePass,
    Cruise,
}

impl Maneuver {
    pub const ALL: [Maneuver; 5] = [
        Maneuver::CutIn,
        Maneuver::HardBrake,
        Maneuver::LaneDrift,
        Maneuver::TailgatePass,
        Maneuver::Cruise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::CutIn => "cut_in",
            Maneuver::HardBrake => "hard_brake",
            Maneuver::LaneDrift => "lane_drift",
            Maneuver::TailgatePass => "tailgate_pass",
            Maneuver::Cruise => "cruise",
        }
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverMix {
    pub cut_in: f64,
    pub hard_brake: f64,
    pub lane_drift: f64,
    pub tailgate_pass: f64,
    pub cruise: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        Self {
            cut_in: 0.3,
            hard_brake: 0.2,
            lane_drift: 0.15,
            tailgate_pass: 0.1,
            cruise: 0.25,
        }
    }
}

impl ManeuverMix {
    pub fn only(m: Maneuver) -> Self {
        let mut mix = Self {
            cut_in: 0.0,
            hard_brake: 0.0,
            lane_drift: 0.0,
            tailgate_pass: 0.0,
            cruise: 0.0,
        };
        *mix.weight_mut(m) = 1.0;
        mix
    }

    fn weight_mut(&mut self, m: Maneuver) -> &mut f64 {
        match m {
            Maneuver::CutIn => &mut self.cut_in,
            Maneuver::HardBrake => &mut self.hard_brake,
            Maneuver::LaneDrift => &mut self.lane_drift,
            Maneuver::TailgatePass => &mut self.tailgate_pass,
            Maneuver::Cruise => &mut self.cruise,
        }
    }

    fn weights(&self) -> [f64; 5] {
        [self.cut_in, self.hard_brake, self.lane_drift, self.tailgate_pass, self.cruise]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub size: usize,
    /// Relative frequency of 1, 2, … BVs per scenario.
    pub bv_count_weights: Vec<f64>,
    pub h_min: usize,
    pub h_max: usize,
    pub mix: ManeuverMix,
    pub av_speed: (f64, f64),
    pub av_x: (f64, f64),
    pub dt: f64,
    pub seed: u64,
    /// Shortest horizon kept after truncating at the road end.
    pub min_kept_horizon: usize,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            bv_count_weights: vec![1.0; 4],
            h_min: 50,
            h_max: 100,
            mix: ManeuverMix::default(),
            av_speed: (18.0, 28.0),
            av_x: (30.0, 50.0),
            dt: 0.04,
            seed: 0,
            min_kept_horizon: 40,
            max_attempts: 1000,
        }
    }
}

impl GenConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.size == 0 {
            return bad("library size must be at least 1");
        }
        let w = self.mix.weights();
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            return bad("maneuver weights must be non-negative and not all zero");
        }
        if self.bv_count_weights.is_empty()
            || self.bv_count_weights.iter().any(|&v| !(v >= 0.0 && v.is_finite()))
            || self.bv_count_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("BV count weights must be non-negative and not all zero");
        }
        if self.h_min == 0 || self.h_min > self.h_max {
            return bad("horizon range must satisfy 1 ≤ h_min ≤ h_max");
        }
        if self.min_kept_horizon == 0 || self.min_kept_horizon > self.h_min {
            return bad("min_kept_horizon must lie in [1, h_min]");
        }
        if !(self.dt > 0.0) || !(self.av_speed.0 >= 0.0 && self.av_speed.1 >= self.av_speed.0) {
            return bad("dt must be positive and the AV speed range ordered");
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.bv_count_weights.len()
    }
}

fn pick(weights: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Open-loop BV script.
#[derive(Debug, Clone, PartialEq)]
struct Script {
    kind: Maneuver,
    init: VehicleState,
    /// `(start time, lateral target)`, sorted by time.
    lateral: Vec<(f64, f64)>,
    /// `(start time, acceleration)`, sorted by time.
    accel: Vec<(f64, f64)>,
}

impl Script {
    fn at<T: Copy>(seq: &[(f64, T)], t: f64, default: T) -> T {
        seq.iter().rev().find(|(s, _)| *s <= t).map_or(default, |&(_, v)| v)
    }

    fn describe(&self) -> String {
        format!(
            "{} from ({:.1}, {:.1}) at {:.1} m/s, lateral {:?}, accel {:?}",
            self.kind, self.init.x, self.init.y, self.init.v, self.lateral, self.accel
        )
    }
}

struct Ctx<'a> {
    road: &'a RoadGeometry,
    av: VehicleState,
    av_lane: usize,
}

impl Ctx<'_> {
    fn adjacent(&self, rng: &mut SimRng) -> usize {
        let n = self.road.num_lanes;
        match (self.av_lane > 0, self.av_lane + 1 < n) {
            (true, true) => {
                if rng.random_bool(0.5) {
                    self.av_lane - 1
                } else {
                    self.av_lane + 1
                }
            }
            (true, false) => self.av_lane - 1,
            (false, true) => self.av_lane + 1,
            (false, false) => self.av_lane,
        }
    }

    fn lane_y(&self, lane: usize, rng: &mut SimRng) -> f64 {
        self.road.lane_center(lane) + rng.random_range(-0.3..0.3)
    }

    fn script(&self, kind: Maneuver, rng: &mut SimRng) -> Script {
        let v0 = self.av.v;
        let x0 = self.av.x;
        let lane_c = |l: usize| self.road.lane_center(l);
        match kind {
            Maneuver::Cruise => {
                let lane = rng.random_range(0..self.road.num_lanes);
                let (dx, dv) = if lane == self.av_lane {
                    if rng.random_bool(0.5) {
                        (rng.random_range(15.0..50.0), rng.random_range(-4.0..4.0))
                    } else {
                        (rng.random_range(-35.0..-10.0), rng.random_range(-5.0..2.0))
                    }
                } else {
                    (rng.random_range(-30.0..40.0), rng.random_range(-5.0..5.0))
                };
                let v = (v0 + dv).max(5.0);
                let a = rng.random_range(-0.8..0.8);
                let y = self.lane_y(lane, rng);
                Script {
                    kind,
                    init: VehicleState::new(x0 + dx, y, v, 0.0),
                    lateral: vec![(0.0, lane_c(lane))],
                    accel: vec![(0.0, a)],
                }
            }
            Maneuver::CutIn => {
                let lane = self.adjacent(rng);
                let dv = rng.random_range(-3.0..5.0);
                let t_c = rng.random_range(0.3..2.0);
                let gap = rng.random_range(2.0..16.0);
                // Longitudinal offset that puts the BV `gap` ahead of the
                // projected AV when it starts to merge.
                let dx = gap - dv * t_c;
                let brake = if rng.random_bool(0.6) { rng.random_range(-6.0..-1.0) } else { 0.0 };
                let y = self.lane_y(lane, rng);
                Script {
                    kind,
                    init: VehicleState::new(x0 + dx, y, (v0 + dv).max(2.0), 0.0),
                    lateral: vec![(0.0, lane_c(lane)), (t_c, lane_c(self.av_lane))],
                    accel: vec![(0.0, 0.0), (t_c + rng.random_range(0.5..1.5), brake)],
                }
            }
            Maneuver::HardBrake => {
                let gap = rng.random_range(8.0..32.0);
                let dv = rng.random_range(-3.0..3.0);
                let t_b = rng.random_range(0.2..2.0);
                let y = self.lane_y(self.av_lane, rng);
                Script {
                    kind,
                    init: VehicleState::new(x0 + gap, y, (v0 + dv).max(2.0), 0.0),
                    lateral: vec![(0.0, lane_c(self.av_lane))],
                    accel: vec![(0.0, 0.0), (t_b, rng.random_range(-7.8..-4.0))],
                }
            }
            Maneuver::LaneDrift => {
                let lane = self.adjacent(rng);
                let dx = rng.random_range(-6.0..14.0);
                let dv = rng.random_range(-2.0..2.0);
                let t_d = rng.random_range(0.2..1.5);
                let toward = (lane_c(self.av_lane) - lane_c(lane)).signum();
                let boundary = 0.5 * (lane_c(self.av_lane) + lane_c(lane));
                let target = boundary + toward * rng.random_range(0.2..1.6);
                let y = self.lane_y(lane, rng);
                Script {
                    kind,
                    init: VehicleState::new(x0 + dx, y, (v0 + dv).max(2.0), 0.0),
                    lateral: vec![(0.0, lane_c(lane)), (t_d, target)],
                    accel: vec![(0.0, rng.random_range(-1.0..1.0))],
                }
            }
            Maneuver::TailgatePass => {
                let lane = self.adjacent(rng);
                let dv: f64 = rng.random_range(4.0..10.0);
                let dx: f64 = -rng.random_range(18.0..40.0);
                // Leave the AV's lane before closing the gap and return once
                // a few metres ahead.
                let t_out = ((-dx - rng.random_range(14.0..22.0)) / dv).max(0.1);
                let back_gap = rng.random_range(2.0..10.0);
                let t_back = (back_gap - dx) / dv;
                let y = self.lane_y(self.av_lane, rng);
                Script {
                    kind,
                    init: VehicleState::new(x0 + dx, y, (v0 + dv).min(self.road.v_max - 1.0), 0.0),
                    lateral: vec![(0.0, lane_c(self.av_lane)), (t_out, lane_c(lane)), (t_back, lane_c(self.av_lane))],
                    accel: vec![(0.0, 0.0), (t_back + 0.5, rng.random_range(-4.0..0.0))],
                }
            }
        }
    }
}

/// Integrates a script for `h` frames, returning `h + 1` states.
fn integrate(script: &Script, h: usize, dt: f64, road: &RoadGeometry, limits: &DynamicsLimits) -> Vec<VehicleState> {
    // Stay a hair inside the limits so validation never trips on rounding.
    let (a_lo, a_hi) = (limits.a_min * 0.999, limits.a_max * 0.999);
    let (w_lo, w_hi) = (limits.omega_min * 0.95, limits.omega_max * 0.95);
    let mut s = script.init;
    let mut out = Vec::with_capacity(h + 1);
    out.push(s);
    for k in 0..h {
        let t = k as f64 * dt;
        let y_target = Script::at(&script.lateral, t, s.y);
        let look = (s.v * 1.2).max(8.0);
        let heading = ((y_target - s.y) / look).atan().clamp(-0.2, 0.2);
        let omega = ((heading - s.theta) / 0.25).clamp(w_lo, w_hi);
        let a = Script::at(&script.accel, t, 0.0).clamp(a_lo, a_hi);
        s = VehicleState {
            x: s.x + s.v * s.theta.cos() * dt,
            y: s.y + s.v * s.theta.sin() * dt,
            v: (s.v + a * dt).clamp(0.0, road.v_max),
            theta: wrap_angle(s.theta + omega * dt),
        };
        out.push(s);
    }
    out
}

fn overlaps(a: &VehicleState, b: &VehicleState, dims: &VehicleDims, margin: f64) -> bool {
    let grown = VehicleDims {
        length: dims.length + margin,
        width: dims.width + margin,
    };
    footprint(a, &grown).intersects(&footprint(b, &grown))
}

fn inside(s: &VehicleState, road: &RoadGeometry) -> bool {
    (0.0..=road.length).contains(&s.x) && (0.0..=road.width()).contains(&s.y)
}

/// One scenario, or the description of the last rejected attempt.
fn generate_one(id: String, cfg: &GenConfig, road: &RoadGeometry, limits: &DynamicsLimits, rng: &mut SimRng) -> Result<Scenario> {
    let dims = VehicleDims::default();
    let mut last = String::new();
    let n = 1 + pick(&cfg.bv_count_weights, rng);
    for _ in 0..cfg.max_attempts {
        let av_lane = rng.random_range(0..road.num_lanes);
        let av = VehicleState::new(
            rng.random_range(cfg.av_x.0..=cfg.av_x.1),
            road.lane_center(av_lane),
            rng.random_range(cfg.av_speed.0..=cfg.av_speed.1),
            0.0,
        );
        let ctx = Ctx { road, av, av_lane };
        let h = rng.random_range(cfg.h_min..=cfg.h_max);
        let weights = cfg.mix.weights();
        let scripts: Vec<Script> = (0..n).map(|_| ctx.script(Maneuver::ALL[pick(&weights, rng)], rng)).collect();
        let tracks: Vec<Vec<VehicleState>> = scripts.iter().map(|s| integrate(s, h, cfg.dt, road, limits)).collect();

        last = scripts.iter().map(Script::describe).collect::<Vec<_>>().join("; ");
        if tracks.iter().any(|tr| !inside(&tr[0], road) || overlaps(&tr[0], &av, &dims, 1.0)) {
            continue;
        }
        // Keep frames while every BV stays on the road.
        let kept = (1..=h).take_while(|&t| tracks.iter().all(|tr| inside(&tr[t], road))).count();
        if kept < cfg.min_kept_horizon {
            continue;
        }
        let bv_bv_clash = (0..=kept).any(|t| {
            (0..n).any(|i| (i + 1..n).any(|j| overlaps(&tracks[i][t], &tracks[j][t], &dims, 0.0)))
        });
        if bv_bv_clash {
            continue;
        }
        let s = Scenario {
            id: id.clone(),
            dt: cfg.dt,
            av_init: av,
            bv_init: tracks.iter().map(|tr| tr[0]).collect(),
            bv_frames: (1..=kept).map(|t| tracks.iter().map(|tr| tr[t]).collect()).collect(),
            maneuvers: scripts.iter().map(|s| s.kind.to_string()).collect(),
        };
        if !validate_scenario(&s, road, limits).is_empty() {
            continue;
        }
        return Ok(s);
    }
    Err(Error::GenerationBudget(format!("scenario `{id}` after {} attempts; last attempt: {last}", cfg.max_attempts)))
}

/// Deterministic in `(cfg, road)`; scenarios are generated in parallel from
/// per-index seeds.
pub fn generate_library(cfg: &GenConfig, road: &RoadGeometry) -> Result<ScenarioLibrary> {
    cfg.check()?;
    road.check().map_err(Error::Config)?;
    let limits = DynamicsLimits {
        v_max: road.v_max,
        ..DynamicsLimits::default()
    };
    let scenarios = (0..cfg.size)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_rng(cfg.seed, 0, Stage::Generate, i as u64);
            generate_one(format!("s{i:05}"), cfg, road, &limits, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let lib = ScenarioLibrary {
        scenarios,
        road: *road,
        dt: cfg.dt,
        n_max: cfg.n_max(),
        h_max: cfg.h_max,
        metadata: LibraryMetadata {
            provenance: "synthetic".into(),
            seed: Some(cfg.seed),
        },
    };
    lib.check()?;
    Ok(lib)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// Smallest distance of any BV acceleration to the nearest limit (m/s²).
    pub accel: f64,
    pub omega: f64,
    pub speed: f64,
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub scenarios: usize,
    pub maneuver_counts: BTreeMap<String, usize>,
    /// Scenarios whose BVs all share one maneuver, keyed by it.
    pub pure_counts: BTreeMap<String, usize>,
    /// Index `k` counts scenarios with `k + 1` BVs.
    pub per_n_counts: Vec<usize>,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub horizon_mean: f64,
    pub margins: Margins,
}

pub fn describe_library(lib: &ScenarioLibrary, limits: &DynamicsLimits) -> Result<GenerationReport> {
    if lib.is_empty() {
        return Err(Error::Empty("library".into()));
    }
    let mut maneuver_counts = BTreeMap::new();
    let mut pure_counts = BTreeMap::new();
    let mut per_n_counts = vec![0; lib.n_max];
    let mut margins = Margins {
        accel: f64::INFINITY,
        omega: f64::INFINITY,
        speed: f64::INFINITY,
        lateral: f64::INFINITY,
    };
    let width = lib.road.width();
    for s in &lib.scenarios {
        for m in &s.maneuvers {
            *maneuver_counts.entry(m.clone()).or_insert(0) += 1;
        }
        if let Some(first) = s.maneuvers.first() {
            if s.maneuvers.iter().all(|m| m == first) {
                *pure_counts.entry(first.clone()).or_insert(0) += 1;
            }
        }
        per_n_counts[s.num_bvs() - 1] += 1;
        for t in 0..=s.horizon() {
            for (j, b) in s.bv_frame(t).iter().enumerate() {
                margins.speed = margins.speed.min(b.v.min(limits.v_max - b.v));
                margins.lateral = margins.lateral.min(b.y.min(width - b.y));
                if t > 0 {
                    let p = &s.bv_frame(t - 1)[j];
                    let a = (b.v - p.v) / s.dt;
                    let w = wrap_angle(b.theta - p.theta) / s.dt;
                    margins.accel = margins.accel.min((a - limits.a_min).min(limits.a_max - a));
                    margins.omega = margins.omega.min((w - limits.omega_min).min(limits.omega_max - w));
                }
            }
        }
    }
    let hs: Vec<usize> = lib.scenarios.iter().map(|s| s.horizon()).collect();
    Ok(GenerationReport {
        scenarios: lib.len(),
        maneuver_counts,
        pure_counts,
        per_n_counts,
        horizon_min: *hs.iter().min().expect("non-empty"),
        horizon_max: *hs.iter().max().expect("non-empty"),
        horizon_mean: hs.iter().sum::<usize>() as f64 / hs.len() as f64,
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(size: usize, mix: ManeuverMix) -> GenConfig {
        GenConfig {
            size,
            mix,
            seed: 3,
            ..GenConfig::default()
        }
    }

    #[test]
    fn cruise_only_library_validates() {
        let road = RoadGeometry::default();
        let lib = generate_library(&small(60, ManeuverMix::only(Maneuver::Cruise)), &road).unwrap();
        assert_eq!(lib.len(), 60);
        for s in &lib.scenarios {
            assert!(validate_scenario(s, &road, &DynamicsLimits::default()).is_empty());
        }
    }

    #[test]
    fn generation_is_seeded() {
        let road = RoadGeometry::default();
        let a = generate_library(&small(30, ManeuverMix::default()), &road).unwrap();
        let b = generate_library(&small(30, ManeuverMix::default()), &road).unwrap();
        assert_eq!(a, b);
        let c = generate_library(&GenConfig { seed: 4, ..small(30, ManeuverMix::default()) }, &road).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn report_counts_all_cut_in() {
        let road = RoadGeometry::default();
        // Four simultaneous cut-ins rarely fit on three lanes.
        let cfg = GenConfig {
            bv_count_weights: vec![1.0, 1.0, 0.0, 0.0],
            ..small(100, ManeuverMix::only(Maneuver::CutIn))
        };
        let lib = generate_library(&cfg, &road).unwrap();
        let r = describe_library(&lib, &DynamicsLimits::default()).unwrap();
        assert_eq!(r.pure_counts.get("cut_in"), Some(&100));
        assert_eq!(r.per_n_counts.iter().sum::<usize>(), 100);
        let m = &r.margins;
        assert!(m.accel >= 0.0 && m.omega >= 0.0 && m.speed >= 0.0 && m.lateral >= 0.0, "{m:?}");
    }

    #[test]
    fn no_initial_overlaps() {
        let road = RoadGeometry::default();
        let dims = VehicleDims::default();
        let lib = generate_library(&small(200, ManeuverMix::default()), &road).unwrap();
        for s in &lib.scenarios {
            for i in 0..s.num_bvs() {
                assert!(!overlaps(&s.bv_init[i], &s.av_init, &dims, 0.0));
                for j in i + 1..s.num_bvs() {
                    assert!(!overlaps(&s.bv_init[i], &s.bv_init[j], &dims, 0.0));
                }
            }
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let road = RoadGeometry::default();
        let mut c = small(5, ManeuverMix::only(Maneuver::Cruise));
        c.mix.cruise = 0.0;
        assert!(matches!(generate_library(&c, &road), Err(Error::Config(_))));
        let c = GenConfig { size: 0, ..small(5, ManeuverMix::default()) };
        assert!(generate_library(&c, &road).is_err());
    }
}
