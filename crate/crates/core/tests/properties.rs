use clic_core::config::Config;
use clic_core::curriculum::{selection_probabilities, CdfSampler};
use clic_core::gen::generate_library;
use clic_core::metrics::{compute_metrics, spearman, Confusion, OutcomeRow, OutcomeTable};
use clic_core::nn::{DenseNet, Head};
use clic_core::sac::{SacAgent, SacConfig};
use clic_core::seed::rng_from;
use clic_core::sim::{av_kinematic_step, best_lane, compute_reward, rollout, wrap_angle, AccidentKind, ActMode, ConstantPolicy, Env, EnvConfig, EnvState, Rect, RewardCoefficients};
use clic_core::{AvAction, RoadGeometry, ScenarioLibrary, VehicleState};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;

fn library() -> &'static (ScenarioLibrary, EnvConfig) {
    static LIB: OnceLock<(ScenarioLibrary, EnvConfig)> = OnceLock::new();
    LIB.get_or_init(|| {
        let cfg = Config { library_size: 60, seed: 3, ..Config::desk() };
        let lib = generate_library(&cfg.gen_config(), &cfg.road()).unwrap();
        let env = cfg.env_for(&lib);
        (lib, env)
    })
}

fn state() -> impl Strategy<Value = VehicleState> {
    (0.0..200.0f64, -1.0..10.6f64, 0.0..=40.0f64, -PI..PI).prop_map(|(x, y, v, t)| VehicleState::new(x, y, v, t))
}

fn rect() -> impl Strategy<Value = Rect> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.1..4.0f64, 0.1..2.0f64, -PI..PI).prop_map(|(cx, cy, half_length, half_width, theta)| Rect { cx, cy, half_length, half_width, theta })
}

fn outcome_rows() -> impl Strategy<Value = Vec<OutcomeRow>> {
    prop::collection::vec((0u8..2, prop::collection::vec((0.0..40.0f64, -0.5..0.5f64), 1..12)), 1..30).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (label, traj))| OutcomeRow {
                id: format!("s{i:03}"),
                label,
                elapsed_time: 0.04 * (traj.len() - 1) as f64,
                distance: traj.iter().map(|p| p.0 * 0.04).sum(),
                speeds: traj.iter().map(|p| p.0).collect(),
                headings: traj.iter().map(|p| p.1).collect(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn speed_stays_clamped_and_heading_wrapped(s in state(), dv in -100.0..100.0f64, dth in -10.0..10.0f64) {
        let n = av_kinematic_step(&s, &AvAction::new(dv, dth), 0.04, 40.0);
        prop_assert!((0.0..=40.0).contains(&n.v));
        prop_assert!(n.theta > -PI && n.theta <= PI);
        prop_assert_eq!(n.x, s.x + s.v * s.theta.cos() * 0.04);
        prop_assert_eq!(n.y, s.y + s.v * s.theta.sin() * 0.04);
    }

    #[test]
    fn wrap_angle_is_idempotent(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert_eq!(wrap_angle(w), w);
        prop_assert!(((a - w) / (2.0 * PI)).fract().abs().min(1.0 - ((a - w) / (2.0 * PI)).fract().abs()) < 1e-9);
    }

    #[test]
    fn reward_decomposes_exactly(av in state(), bvs in prop::collection::vec(state(), 0..5), kind in 0usize..3) {
        let accident = [AccidentKind::None, AccidentKind::Collision, AccidentKind::OffRoad][kind];
        let st = EnvState { frame_index: 1, av, bvs, done: accident.is_accident(), accident };
        let c = RewardCoefficients::default();
        let r = compute_reward(&st, &RoadGeometry::default(), &c);
        prop_assert_eq!(r.total, r.r_acc + r.r_vel + r.r_yaw + r.r_lane);
        prop_assert!(r.r_acc == 0.0 || r.r_acc == -c.rho_acc);
        prop_assert!(r.r_lane == 0.0 || r.r_lane == c.rho_lane);
        prop_assert_eq!(r.r_acc != 0.0, accident.is_accident());
    }

    #[test]
    fn best_lane_ignores_vehicles_behind(av in state(), ahead in prop::collection::vec(state(), 0..4), behind in prop::collection::vec(state(), 0..4)) {
        let road = RoadGeometry::default();
        let behind: Vec<VehicleState> = behind.into_iter().map(|mut b| { b.x = av.x - b.x.abs() / 2.0; b }).collect();
        let mut all = ahead.clone();
        all.extend(behind);
        prop_assert_eq!(best_lane(&av, &ahead, &road), best_lane(&av, &all, &road));
    }

    #[test]
    fn collision_test_is_symmetric(a in rect(), b in rect()) {
        prop_assert_eq!(a.intersects(&b), b.intersects(&a));
        prop_assert!(a.intersects(&a));
    }

    #[test]
    fn selection_probabilities_normalize(labels in prop::collection::vec(0.0..1.0f64, 1..200)) {
        let p = selection_probabilities(&labels);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&q| q > 0.0 && q.is_finite()));
        let sampler = CdfSampler::new(&p);
        let mut rng = rng_from(labels.len() as u64);
        for _ in 0..20 {
            prop_assert!(sampler.draw(&mut rng) < labels.len());
        }
    }

    #[test]
    fn confusion_total_and_success_identity(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..300)) {
        let (b, a): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let c = Confusion::from_labels(&b, &a);
        prop_assert_eq!(c.total(), pairs.len());
        let passed = a.iter().filter(|&&l| l == 0).count();
        prop_assert_eq!(c.fn_ + c.tn, passed);
        for r in [c.fnr(), c.tnr()].into_iter().flatten() {
            prop_assert!((0.0..=100.0).contains(&r));
        }
    }

    #[test]
    fn rates_ignore_row_order(rows in outcome_rows(), shift in 0usize..30) {
        let before = OutcomeTable { dt: 0.04, rows: rows.clone() };
        let mut rotated = rows.clone();
        let k = shift % rotated.len();
        rotated.rotate_left(k);
        let m = compute_metrics(&before, &OutcomeTable { dt: 0.04, rows: rows.clone() }).unwrap();
        let r = compute_metrics(&before, &OutcomeTable { dt: 0.04, rows: rotated }).unwrap();
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(1.0),
            (x, y) => x == y,
        };
        prop_assert!(close(m.cps, r.cps) && close(m.cpm, r.cpm));
        prop_assert_eq!(m.sr, r.sr);
        prop_assert_eq!(m.confusion, r.confusion);
        for v in [m.vel, m.acc, m.jerk, m.ang_vel, m.lat_acc] {
            prop_assert!(v >= 0.0 && v.is_finite());
        }
        prop_assert!((0.0..=100.0).contains(&m.sr));
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(xy in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let r = spearman(&x, &y);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((r - spearman(&y, &x)).abs() < 1e-12);
    }

    #[test]
    fn softmax_head_is_a_distribution(seed in 0u64..1000, x in prop::collection::vec(-50.0..50.0f64, 4)) {
        let net = DenseNet::new(&[4, 6, 2], Head::Softmax, 0.0, &mut rng_from(seed)).unwrap();
        let p = net.forward(&x, false, &mut rng_from(0)).unwrap();
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn env_steps_keep_invariants(idx in 0usize..60, dv in -1.0..1.0f64, dth in -1.0..1.0f64) {
        let (lib, env) = library();
        let s = &lib.scenarios[idx];
        let action = env.bounds.from_unit([dv, dth]);
        let mut e = Env::new(s, env);
        loop {
            let step = e.step(&action).unwrap();
            let st = e.state();
            prop_assert!((0.0..=env.road.v_max).contains(&st.av.v));
            prop_assert!(st.frame_index <= s.horizon());
            prop_assert!(!st.accident.is_accident() || st.done);
            let r = step.reward;
            prop_assert_eq!(r.total, r.r_acc + r.r_vel + r.r_yaw + r.r_lane);
            prop_assert_eq!(step.obs.len(), env.obs_dim());
            if step.done {
                break;
            }
        }
    }

    #[test]
    fn rollout_bookkeeping(idx in 0usize..60, dv in -1.0..1.0f64, dth in -0.2..0.2f64) {
        let (lib, env) = library();
        let s = &lib.scenarios[idx];
        let r = rollout(&ConstantPolicy(env.bounds.from_unit([dv, dth])), s, env, ActMode::Deterministic, 0.99, &mut rng_from(0)).unwrap();
        prop_assert_eq!(r.elapsed_time, r.steps as f64 * s.dt);
        prop_assert_eq!(r.longitudinal_distance, r.av_trajectory.last().unwrap().x - s.av_init.x);
        prop_assert_eq!(r.accident_label == 1, r.accident.is_accident());
        prop_assert_eq!(r.av_trajectory.len(), r.steps + 1);
        prop_assert!(r.steps <= s.horizon());
        prop_assert!(r.accident.is_accident() || r.steps == s.horizon());
    }

    #[test]
    fn soft_update_is_exact_blend(seed in 0u64..1000, tau in 0.0..=1.0f64) {
        let (_, env) = library();
        let cfg = SacConfig { hidden: 6, layers: 2, tau, ..SacConfig::default() };
        let mut a = SacAgent::new(cfg, env, &mut rng_from(seed)).unwrap();
        for (k, p) in a.q1.params_mut().iter_mut().enumerate() {
            *p += 0.01 * (k % 7) as f64;
        }
        let (before, online) = (a.q1_target.params().to_vec(), a.q1.params().to_vec());
        a.soft_update();
        for ((t, o), n) in before.iter().zip(&online).zip(a.q1_target.params()) {
            prop_assert_eq!(*n, (1.0 - tau) * t + tau * o);
        }
    }

    #[test]
    fn agent_actions_stay_in_bounds(seed in 0u64..1000, idx in 0usize..60) {
        let (lib, env) = library();
        let a = SacAgent::new(SacConfig { hidden: 8, layers: 2, ..SacConfig::default() }, env, &mut rng_from(seed)).unwrap();
        let obs = Env::new(&lib.scenarios[idx], env).observe();
        let mut rng = rng_from(seed + 1);
        for mode in [ActMode::Deterministic, ActMode::Stochastic] {
            let u = a.act_unit(&obs, mode, &mut rng);
            prop_assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
