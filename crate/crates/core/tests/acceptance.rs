//! Acceptance gate. Each criterion prints one PASS/FAIL line to stderr,
//! bypassing output capture, then asserts.
//!
//! The desk-scale training runs are shared between criteria through a
//! per-key cache, so every (strategy, seed) pair trains at most once.

use clic_core::config::Config;
use clic_core::curriculum::{predict_all, selection_probabilities, weighted_sample, DifficultyPredictor, Strategy};
use clic_core::gen::generate_library;
use clic_core::metrics::{compute_metrics, individualization_experiment, label_histograms, matrix_experiment, test_all, Confusion, MetricsReport, OutcomeTable};
use clic_core::nn::{grad, DenseNet, Head, Loss};
use clic_core::pipeline::{self, RunOutput};
use clic_core::sac::{SacAgent, SacConfig};
use clic_core::scenario::{validate_scenario, FeatureSpec};
use clic_core::seed::{rng_from, SimRng};
use clic_core::sim::{av_kinematic_step, ActionBounds, compute_reward, detect_accident, wrap_angle, AccidentKind, EnvConfig, EnvState, Rect, RewardCoefficients};
use clic_core::{AvAction, RoadGeometry, ScenarioLibrary, VehicleDims, VehicleState};
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

const DESK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const LIBRARY_SEED: u64 = 1;

fn report(name: &str, ok: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

// ---------------------------------------------------------------------------
// Shared desk runs

struct Trained {
    out: RunOutput,
    after: OutcomeTable,
    metrics: MetricsReport,
    dir: Option<tempfile::TempDir>,
}

struct Desk {
    cfg: Config,
    lib: ScenarioLibrary,
    env: EnvConfig,
    runs: Mutex<HashMap<(Strategy, u64), &'static OnceLock<Trained>>>,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = Config::desk();
        let lib = generate_library(&Config { seed: LIBRARY_SEED, ..cfg.clone() }.gen_config(), &cfg.road()).unwrap();
        let env = cfg.env_for(&lib);
        Desk { cfg, lib, env, runs: Mutex::new(HashMap::new()) }
    })
}

impl Desk {
    fn config(&self, strategy: Strategy, seed: u64) -> Config {
        Config { strategy, seed, ..self.cfg.clone() }
    }

    /// Trains on a worker pool of `threads`, writing to `dir` when given.
    fn train(&self, strategy: Strategy, seed: u64, threads: usize, dir: Option<tempfile::TempDir>) -> Trained {
        let cfg = self.config(strategy, seed);
        pool(threads).install(|| {
            let out = pipeline::run(&cfg.loop_config(), &self.lib, &self.env, dir.as_ref().map(|d| d.path())).unwrap();
            let before = test_all(&out.initial_agent, &self.lib, &self.env, Some(threads)).unwrap();
            let after = test_all(&out.agent, &self.lib, &self.env, Some(threads)).unwrap();
            let metrics = compute_metrics(&before, &after).unwrap();
            Trained { out, after, metrics, dir }
        })
    }

    /// Cached single-worker run. CLIC seed 0 keeps its run directory.
    fn run(&self, strategy: Strategy, seed: u64) -> &'static Trained {
        let cell: &'static OnceLock<Trained> = *self.runs.lock().unwrap().entry((strategy, seed)).or_insert_with(|| Box::leak(Box::default()));
        cell.get_or_init(|| {
            let dir = (strategy == Strategy::Clic && seed == 0).then(|| tempfile::tempdir().unwrap());
            self.train(strategy, seed, 1, dir)
        })
    }
}

// ---------------------------------------------------------------------------
// Kinematics

#[test]
fn kinematics_oracle() {
    let start = Instant::now();
    let (dt, v_max) = (0.04, 40.0);
    let mut rng = rng_from(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let s0 = VehicleState::new(rng.random_range(0.0..200.0), rng.random_range(0.0..9.6), rng.random_range(0.0..=v_max), rng.random_range(-PI..PI));
        let a = AvAction::new(rng.random_range(-0.3..0.3), rng.random_range(-0.05..0.05));
        let k = rng.random_range(1..=25usize);
        let mut s = s0;
        for _ in 0..k {
            s = av_kinematic_step(&s, &a, dt, v_max);
        }
        // Constant input: speed and heading are arithmetic sequences, and
        // position sums the pre-update velocity of every step.
        let v_at = |i: usize| (s0.v + i as f64 * a.dv).clamp(0.0, v_max);
        let th_at = |i: usize| s0.theta + i as f64 * a.dtheta;
        let x = s0.x + (0..k).map(|i| v_at(i) * th_at(i).cos() * dt).sum::<f64>();
        let y = s0.y + (0..k).map(|i| v_at(i) * th_at(i).sin() * dt).sum::<f64>();
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
        worst = worst
            .max(rel(s.x, x))
            .max(rel(s.y, y))
            .max(rel(s.v, v_at(k)))
            .max(wrap_angle(s.theta - th_at(k)).abs() / th_at(k).abs().max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-9 && secs < 1.0;
    report("kinematics oracle", ok, format!("10000 pairs, max relative error {worst:.2e} (limit 1e-9), {secs:.3} s"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Reward

fn hand_best_lane(av: &VehicleState, bvs: &[VehicleState], lane_width: f64) -> usize {
    let lane = |y: f64| ((y / lane_width).floor() as usize).min(2);
    let mut gap = [f64::INFINITY; 3];
    for b in bvs.iter().filter(|b| b.x > av.x && (0.0..=3.0 * lane_width).contains(&b.y)) {
        gap[lane(b.y)] = gap[lane(b.y)].min(b.x - av.x);
    }
    let top = gap[0].max(gap[1]).max(gap[2]);
    let own = lane(av.y);
    if gap[own] == top {
        own
    } else {
        (0..3).find(|&k| gap[k] == top).unwrap()
    }
}

/// Table I reward written out term by term.
fn hand_reward(st: &EnvState) -> f64 {
    let r_acc = if st.accident == AccidentKind::None { 0.0 } else { -40.0 };
    let r_vel = 0.8 * (st.av.v - 20.0) / 20.0;
    let r_yaw = -(st.av.theta.abs() / (PI / 6.0));
    let on_road = (0.0..=9.6).contains(&st.av.y);
    let r_lane = if on_road && ((st.av.y / 3.2).floor() as usize).min(2) == hand_best_lane(&st.av, &st.bvs, 3.2) { 2.0 } else { 0.0 };
    r_acc + r_vel + r_yaw + r_lane
}

#[test]
fn reward_oracle() {
    let road = RoadGeometry::default();
    let c = RewardCoefficients::default();
    assert_eq!(c, RewardCoefficients { rho_acc: 40.0, rho_vel: 0.8, rho_yaw: 6.0 / PI, rho_lane: 2.0 });
    let state = |av: VehicleState, bvs: Vec<VehicleState>, accident| EnvState { frame_index: 1, av, bvs, done: false, accident };
    let lead = |x: f64, lane: usize| VehicleState::new(x, road.lane_center(lane), 20.0, 0.0);

    let mut slow = lead(0.0, 0);
    slow.v = 0.0;
    slow.theta = PI / 6.0;
    let tabulated = [
        (compute_reward(&state(lead(0.0, 1), vec![], AccidentKind::None), &road, &c).total, 2.0),
        (compute_reward(&state(VehicleState::new(0.0, road.lane_center(1), 40.0, 0.0), vec![lead(3.0, 1)], AccidentKind::Collision), &road, &c).total, -39.2),
        (compute_reward(&state(slow, vec![lead(10.0, 0)], AccidentKind::None), &road, &c).total, -1.8),
    ];
    let mut mismatches: Vec<String> = tabulated.iter().filter(|(g, w)| g != w).map(|(g, w)| format!("{g:?} != {w:?}")).collect();

    let mut rng = rng_from(202);
    for case in 0..100 {
        let av = VehicleState::new(rng.random_range(0.0..150.0), rng.random_range(-0.5..10.1), rng.random_range(0.0..=40.0), rng.random_range(-1.0..1.0));
        let n = rng.random_range(0..=4);
        let bvs: Vec<VehicleState> = (0..n)
            .map(|_| VehicleState::new(rng.random_range(0.0..200.0), road.lane_center(rng.random_range(0..3)), rng.random_range(0.0..40.0), 0.0))
            .collect();
        let accident = [AccidentKind::None, AccidentKind::Collision, AccidentKind::OffRoad][rng.random_range(0..3)];
        let st = state(av, bvs, accident);
        let r = compute_reward(&st, &road, &c);
        let want = hand_reward(&st);
        if r.total != want || r.total != r.r_acc + r.r_vel + r.r_yaw + r.r_lane {
            mismatches.push(format!("case {case}: {:?} != {want:?}", r.total));
        }
    }
    let ok = mismatches.is_empty();
    report("reward oracle", ok, format!("3 tabulated + 100 random cases, {} bitwise mismatches{}", mismatches.len(), mismatches.first().map(|m| format!(", first {m}")).unwrap_or_default()));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Collision

fn corners(r: &Rect) -> [(f64, f64); 4] {
    let (s, c) = r.theta.sin_cos();
    [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
        .map(|(a, b)| (r.cx + a * r.half_length * c - b * r.half_width * s, r.cy + a * r.half_length * s + b * r.half_width * c))
}

fn strictly_inside(r: &Rect, p: (f64, f64)) -> bool {
    let (s, c) = r.theta.sin_cos();
    let (dx, dy) = (p.0 - r.cx, p.1 - r.cy);
    (dx * c + dy * s).abs() < r.half_length && (-dx * s + dy * c).abs() < r.half_width
}

/// Perimeter points of `r`, corners included, evenly spaced per edge.
fn perimeter(r: &Rect, n: usize) -> Vec<(f64, f64)> {
    let k = corners(r);
    let per_edge = n / 4;
    (0..4)
        .flat_map(|e| {
            let (a, b) = (k[e], k[(e + 1) % 4]);
            (0..per_edge).map(move |i| {
                let t = i as f64 / per_edge as f64;
                (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
            })
        })
        .collect()
}

/// Positive-area overlap of two convex rectangles shows up as a boundary
/// point of one strictly inside the other.
fn sampled_overlap(a: &Rect, b: &Rect) -> bool {
    perimeter(a, 5000).into_iter().any(|p| strictly_inside(b, p)) || perimeter(b, 5000).into_iter().any(|p| strictly_inside(a, p))
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ux, uy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * ux + (p.1 - a.1) * uy) / (ux * ux + uy * uy)).clamp(0.0, 1.0);
    (p.0 - a.0 - t * ux).hypot(p.1 - a.1 - t * uy)
}

/// Gap between disjoint rectangles, or penetration depth of overlapping
/// ones (smallest projected overlap over the four edge normals).
fn margin(a: &Rect, b: &Rect) -> f64 {
    let (ka, kb) = (corners(a), corners(b));
    let mut depth = f64::INFINITY;
    for r in [a, b] {
        for (ux, uy) in [(r.theta.cos(), r.theta.sin()), (-r.theta.sin(), r.theta.cos())] {
            let proj = |k: &[(f64, f64); 4]| k.iter().map(|p| p.0 * ux + p.1 * uy).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let ((a0, a1), (b0, b1)) = (proj(&ka), proj(&kb));
            depth = depth.min(a1.min(b1) - a0.max(b0));
        }
    }
    if depth > 0.0 {
        return depth;
    }
    let mut gap = f64::INFINITY;
    for (pts, poly) in [(&ka, &kb), (&kb, &ka)] {
        for &p in pts.iter() {
            for e in 0..4 {
                gap = gap.min(segment_distance(p, poly[e], poly[(e + 1) % 4]));
            }
        }
    }
    gap
}

#[test]
fn collision_oracle() {
    let start = Instant::now();
    let mut rng = rng_from(303);
    let dims = VehicleDims::default();
    let road = RoadGeometry { num_lanes: 30, ..RoadGeometry::default() };
    let (mut checked, mut hits, mut disagreements) = (0, 0, Vec::new());
    for pair in 0..1000 {
        let theta = |rng: &mut SimRng| rng.random_range(-PI..PI);
        let (detected, a, b) = if pair % 2 == 0 {
            // Vehicle footprints through the full accident detector on a road
            // wide enough that nothing leaves it.
            let av = VehicleState::new(100.0, 48.0, 20.0, theta(&mut rng));
            let bv = VehicleState::new(100.0 + rng.random_range(-6.0..6.0), 48.0 + rng.random_range(-4.0..4.0), 20.0, theta(&mut rng));
            let hit = detect_accident(&av, &[bv], &road, &dims) == AccidentKind::Collision;
            (hit, clic_core::sim::footprint(&av, &dims), clic_core::sim::footprint(&bv, &dims))
        } else {
            let rect = |rng: &mut SimRng, cx: f64, cy: f64| Rect { cx, cy, half_length: rng.random_range(0.5..3.5), half_width: rng.random_range(0.3..1.5), theta: theta(rng) };
            let a = rect(&mut rng, 0.0, 0.0);
            let (cx, cy) = (rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0));
            let b = rect(&mut rng, cx, cy);
            (a.intersects(&b), a, b)
        };
        if margin(&a, &b) <= 1e-3 {
            continue;
        }
        checked += 1;
        let oracle = sampled_overlap(&a, &b);
        hits += oracle as usize;
        if oracle != detected {
            disagreements.push(pair);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = disagreements.is_empty() && checked > 900 && hits > 100 && hits < checked - 100 && secs < 10.0;
    report(
        "collision oracle",
        ok,
        format!("{checked} of 1000 pairs beyond 1e-3 m margin ({hits} overlapping), {} disagreements, {secs:.2} s", disagreements.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Gradients

/// Worst relative error of `analytic` against central differences of `f`.
fn fd_worst(analytic: &[f64], mut f: impl FnMut(usize, f64) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, &g) in analytic.iter().enumerate() {
        let fd = (f(k, h) - f(k, -h)) / (2.0 * h);
        let scale = fd.abs().max(g.abs());
        if scale > 1e-7 {
            worst = worst.max((fd - g).abs() / scale);
        }
    }
    worst
}

fn small_env() -> EnvConfig {
    let cfg = Config::desk();
    EnvConfig { road: cfg.road(), dims: cfg.dims(), n_max: 2, bounds: ActionBounds::from_limits(&cfg.limits(), cfg.dt), coeffs: cfg.coeffs() }
}

fn random_obs(rng: &mut SimRng, rows: usize) -> Vec<f64> {
    (0..rows)
        .flat_map(|_| {
            let mut o = vec![rng.random_range(0.0..200.0), rng.random_range(0.5..9.0), rng.random_range(0.0..40.0), rng.random_range(-0.3..0.3)];
            for _ in 0..2 {
                o.extend([rng.random_range(0.0..200.0), rng.random_range(0.5..9.0), rng.random_range(0.0..40.0), rng.random_range(-0.3..0.3)]);
            }
            o
        })
        .collect()
}

#[test]
fn gradient_checks() {
    let start = Instant::now();
    let mut rng = rng_from(404);

    let net = DenseNet::new(&[5, 8, 8, 2], Head::Softmax, 0.0, &mut rng).unwrap();
    let x = Array2::from_shape_fn((7, 5), |_| rng.random_range(-2.0..2.0));
    let y = Array2::from_shape_fn((7, 1), |(i, _)| (i % 2) as f64);
    let (g, _) = grad(&net, x.view(), Loss::Bce, y.view(), None).unwrap();
    let bce = fd_worst(&g, |k, h| {
        let mut p = net.clone();
        p.params_mut()[k] += h;
        grad(&p, x.view(), Loss::Bce, y.view(), None).unwrap().1
    });

    let env = small_env();
    let cfg = SacConfig { hidden: 8, layers: 2, batch_size: 6, warmup: 0, ..SacConfig::default() };
    let agent = SacAgent::new(cfg, &env, &mut rng).unwrap();
    let dim = agent.obs_dim();
    let obs = agent.transform().apply_rows(&random_obs(&mut rng, 6), dim);
    let noise = Array2::from_shape_fn((6, 2), |_| rng.sample(StandardNormal));
    let (_, ga, _) = agent.actor_objective(&obs, noise.clone()).unwrap();
    let actor = fd_worst(&ga, |k, h| {
        let mut p = agent.clone();
        p.actor.params_mut()[k] += h;
        p.actor_objective(&obs, noise.clone()).unwrap().0
    });

    let actions = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
    let xq = ndarray::concatenate(Axis(1), &[obs.view(), actions.view()]).unwrap();
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
    let w: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.0)).collect();
    let mut critic: f64 = 0.0;
    for which in [1, 2] {
        let (_, gq, _) = agent.critic_objective(which, xq.view(), &targets, &w).unwrap();
        critic = critic.max(fd_worst(&gq, |k, h| {
            let mut p = agent.clone();
            if which == 1 { &mut p.q1 } else { &mut p.q2 }.params_mut()[k] += h;
            p.critic_objective(which, xq.view(), &targets, &w).unwrap().0
        }));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = bce < 1e-4 && actor < 1e-3 && critic < 1e-3 && secs < 30.0;
    report("gradient checks", ok, format!("BCE {bce:.2e} (limit 1e-4), actor {actor:.2e}, critic {critic:.2e} (limit 1e-3), {secs:.2} s"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Sampler

#[test]
fn proportional_sampler() {
    let start = Instant::now();
    let lib = generate_library(&Config { library_size: 50, seed: 5, ..Config::desk() }.gen_config(), &Config::desk().road()).unwrap();
    let mut rng = rng_from(505);
    let labels: Vec<f64> = (0..50).map(|_| rng.random_range(0.001..1.0)).collect();
    let total: f64 = labels.iter().sum();
    let draws = 100_000;
    let cur = weighted_sample(&lib, draws, &labels, 1, &mut rng).unwrap();
    let mut counts = vec![0usize; 50];
    for &i in &cur.indices {
        counts[i] += 1;
    }
    let mut worst_z: f64 = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let p = labels[i] / total;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        worst_z = worst_z.max((c as f64 - draws as f64 * p).abs() / sd);
    }
    let probs_ok = selection_probabilities(&labels).iter().zip(&labels).all(|(p, l)| (p - l / total).abs() < 1e-15);
    let hist = label_histograms(&labels, 10, draws, &mut rng).unwrap();
    let r2 = hist.r_squared.unwrap_or(f64::NAN);
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_z <= 3.0 && probs_ok && r2 > 0.95 && secs < 10.0;
    report("proportional sampler", ok, format!("M=50, 1e5 draws, worst |z| {worst_z:.2} (limit 3), ratio fit R² {r2:.4} (limit 0.95), {secs:.2} s"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Confusion

#[test]
fn confusion_metrics() {
    let mut failures = Vec::new();
    // Every pair of label vectors up to length 4.
    for len in 1..=4u32 {
        for bits in 0..(1u32 << (2 * len)) {
            let before: Vec<u8> = (0..len).map(|i| ((bits >> i) & 1) as u8).collect();
            let after: Vec<u8> = (0..len).map(|i| ((bits >> (len + i)) & 1) as u8).collect();
            let c = Confusion::from_labels(&before, &after);
            let count = |b: u8, a: u8| before.iter().zip(&after).filter(|&(&x, &y)| x == b && y == a).count();
            let (tp, fn_, fp, tn) = (count(1, 1), count(1, 0), count(0, 1), count(0, 0));
            let fnr = (tp + fn_ > 0).then(|| 100.0 * fn_ as f64 / (tp + fn_) as f64);
            let tnr = (fp + tn > 0).then(|| 100.0 * tn as f64 / (fp + tn) as f64);
            if (c.tp, c.fn_, c.fp, c.tn) != (tp, fn_, fp, tn) || c.fnr() != fnr || c.tnr() != tnr {
                failures.push(format!("{before:?} -> {after:?}"));
            }
        }
    }
    let mut rng = rng_from(606);
    for _ in 0..1000 {
        let m = rng.random_range(1..500);
        let before: Vec<u8> = (0..m).map(|_| rng.random_range(0..2)).collect();
        let after: Vec<u8> = (0..m).map(|_| rng.random_range(0..2)).collect();
        if Confusion::from_labels(&before, &after).total() != m {
            failures.push(format!("total of random table with M = {m}"));
        }
    }
    let ok = failures.is_empty();
    report("confusion metrics", ok, format!("340 enumerated tables + 1000 random tables, {} mismatches{}", failures.len(), failures.first().map(|m| format!(", first {m:?}")).unwrap_or_default()));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Featurization

#[test]
fn featurization_layout() {
    let cfg = Config::paper();
    let spec = FeatureSpec { n_max: 4, h_max: 100, road: cfg.road(), normalize: true };
    let dim_ok = spec.dim() == 6 * (1 + 4 * 100) && spec.dim() == 2406;

    let lib = generate_library(&Config { library_size: 40, seed: 7, ..Config::desk() }.gen_config(), &cfg.road()).unwrap();
    let s = lib.scenarios.iter().find(|s| s.num_bvs() >= 2 && s.num_bvs() < 4 && s.horizon() >= 7 && s.horizon() < 100).expect("a partial scenario").clone();
    let f = spec.featurize(&s).unwrap();
    let f = f.as_slice();
    // Slots past the last frame or the last vehicle stay zero.
    let mut padding_ok = f.len() == 2406;
    for t in 1..=100 {
        for j in 1..=4 {
            let at = 6 * (1 + (t - 1) * 4 + (j - 1));
            let empty = f[at..at + 6].iter().all(|&v| v == 0.0);
            if t > s.horizon() || j > s.num_bvs() {
                padding_ok &= empty;
            } else {
                padding_ok &= !empty;
            }
        }
    }

    let mut moved = s.clone();
    moved.bv_frames[6][1].x += 1.5;
    let g = spec.featurize(&moved).unwrap();
    let diff: Vec<usize> = (0..2406).filter(|&k| f[k] != g.as_slice()[k]).collect();
    let expected = 6 * (1 + (7 - 1) * 4 + (2 - 1)) + 2;
    let perturb_ok = diff == vec![expected];
    let ok = dim_ok && padding_ok && perturb_ok;
    report("featurization", ok, format!("dimension {} (expect 2406), padding {padding_ok}, perturbation changed {diff:?} (expect [{expected}])", spec.dim()));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Generator

#[test]
fn generator_audit() {
    let cfg = Config::desk();
    let lib = generate_library(&Config { library_size: 2000, seed: 808, ..cfg.clone() }.gen_config(), &cfg.road()).unwrap();
    let violations: usize = lib.scenarios.iter().map(|s| validate_scenario(s, &cfg.road(), &cfg.limits()).len()).sum();
    let ok = lib.len() == 2000 && violations == 0;
    report("generator audit", ok, format!("{} scenarios, {violations} violations", lib.len()));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// Desk-scale training

fn files_under(dir: &Path, sub: &str) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join(sub))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn determinism_across_pool_sizes() {
    let d = desk();
    let single = d.run(Strategy::Clic, 0);
    let wide = d.train(Strategy::Clic, 0, 8, Some(tempfile::tempdir().unwrap()));
    let (a, b) = (single.dir.as_ref().unwrap().path(), wide.dir.as_ref().unwrap().path());
    let records_ok = json(&pipeline::read_records(a).unwrap()) == json(&pipeline::read_records(b).unwrap()) && json(&single.out.records) == json(&wide.out.records);
    let metrics_ok = json(&single.metrics) == json(&wide.metrics) && json(&single.after) == json(&wide.after);
    let ckpt_a = files_under(a, "checkpoints");
    let checkpoints_ok = ckpt_a.len() >= 2 * d.cfg.iterations && ckpt_a == files_under(b, "checkpoints") && files_under(a, "state") == files_under(b, "state");
    let ok = records_ok && metrics_ok && checkpoints_ok;
    report(
        "determinism",
        ok,
        format!("CLIC seed 0 at 1 and 8 workers: records {records_ok}, metrics {metrics_ok}, {} checkpoint files identical {checkpoints_ok}", ckpt_a.len()),
    );
    assert!(ok);
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap()
}

#[test]
fn directional_clic_vs_rand() {
    let d = desk();
    let mut lines = Vec::new();
    let (mut sr, mut fnr, mut wins) = ([0.0; 2], [0.0; 2], 0);
    for seed in DESK_SEEDS {
        let c = &d.run(Strategy::Clic, seed).metrics;
        let r = &d.run(Strategy::Rand, seed).metrics;
        sr[0] += c.sr;
        sr[1] += r.sr;
        fnr[0] += c.fnr.unwrap_or(0.0);
        fnr[1] += r.fnr.unwrap_or(0.0);
        wins += (c.sr > r.sr) as usize;
        lines.push(format!("seed {seed}: SR {:.2} vs {:.2}, FNR {:.2} vs {:.2}", c.sr, r.sr, c.fnr.unwrap_or(f64::NAN), r.fnr.unwrap_or(f64::NAN)));
    }
    let n = DESK_SEEDS.len() as f64;
    let (sr, fnr) = (sr.map(|v| v / n), fnr.map(|v| v / n));
    for l in &lines {
        let _ = writeln!(std::io::stderr(), "    {l}");
    }
    let ok = sr[0] >= sr[1] && fnr[0] >= fnr[1] && wins >= 4;
    report(
        "directional CLIC vs rand",
        ok,
        format!("mean SR {:.2} vs {:.2}, mean FNR {:.2} vs {:.2}, CLIC wins SR on {wins} of 5 seeds", sr[0], sr[1], fnr[0], fnr[1]),
    );
    assert!(ok);
}

#[test]
fn matrix_trends() {
    let d = desk();
    let t = d.run(Strategy::Clic, 0);
    let dir = t.dir.as_ref().unwrap().path();
    let cfg = d.config(Strategy::Clic, 0);
    let mut agents = Vec::new();
    let mut preds = Vec::new();
    for r in &t.out.records {
        agents.push(SacAgent::load(&pipeline::agent_checkpoint_path(dir, r.iteration)).unwrap());
        preds.push(DifficultyPredictor::load(&pipeline::predictor_checkpoint_path(dir, r.iteration), cfg.predictor_config()).unwrap());
    }
    let feats = clic_core::curriculum::featurize_library(&d.lib, &cfg.feature_spec(&d.lib)).unwrap();
    // Sanity: the stored predictors reproduce labels in [0, 1].
    assert!(predict_all(&preds[0], feats.view()).unwrap().iter().all(|l| (0.0..=1.0).contains(l)));
    let m = pool(1).install(|| matrix_experiment(&agents, &preds, &d.lib, feats.view(), cfg.matrix_size(), cfg.seed, &d.env)).unwrap();
    let (agent, predictor) = (m.agent_trend(), m.predictor_trend());
    for row in &m.sr {
        let _ = writeln!(std::io::stderr(), "    {}", row.iter().map(|v| format!("{v:6.2}")).collect::<Vec<_>>().join(" "));
    }
    let ok = agent > 0.5 && predictor < -0.3;
    report("matrix trends", ok, format!("{}x{} matrix, agent trend {agent:.3} (limit > 0.5), predictor trend {predictor:.3} (limit < -0.3)", m.sr.len(), m.sr[0].len()));
    assert!(ok);
}

#[test]
fn individualization_direction() {
    let d = desk();
    let (mut masked, mut unmasked) = (0.0, 0.0);
    let mut lines = Vec::new();
    for seed in [0, 1, 2] {
        let cfg = d.config(Strategy::Clic, seed);
        let agent = &d.run(Strategy::Clic, seed).out.agent;
        let feats = clic_core::curriculum::featurize_library(&d.lib, &cfg.feature_spec(&d.lib)).unwrap();
        let r = pool(1).install(|| individualization_experiment(agent, cfg.mask(), &cfg.individualize_config(), &d.lib, feats.view(), &d.env)).unwrap();
        masked += r.masked.left_front_share / 3.0;
        unmasked += r.unmasked.left_front_share / 3.0;
        lines.push(format!("seed {seed}: masked {:.2}%, unmasked {:.2}%", r.masked.left_front_share, r.unmasked.left_front_share));
    }
    for l in &lines {
        let _ = writeln!(std::io::stderr(), "    {l}");
    }
    let ok = masked > unmasked;
    report("individualization direction", ok, format!("left-front share masked {masked:.2}% vs unmasked {unmasked:.2}% over 3 seeds"));
    assert!(ok);
}
