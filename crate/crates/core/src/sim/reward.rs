use super::env::EnvState;
use crate::road::RoadGeometry;
use crate::scenario::VehicleState;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCoefficients {
    pub rho_acc: f64,
    pub rho_vel: f64,
    pub rho_yaw: f64,
    pub rho_lane: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self {
            rho_acc: 40.0,
            rho_vel: 0.8,
            rho_yaw: 6.0 / PI,
            rho_lane: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_vel: f64,
    pub r_yaw: f64,
    pub r_lane: f64,
    pub total: f64,
}

/// Lane whose nearest BV ahead of the AV is farthest away. Ties prefer the
/// AV's current lane, then the lowest lane index.
pub fn best_lane(av: &VehicleState, bvs: &[VehicleState], road: &RoadGeometry) -> usize {
    let current = road
        .lane_of(av.y)
        .unwrap_or(if av.y < 0.0 { 0 } else { road.num_lanes - 1 });
    let mut gaps = vec![f64::INFINITY; road.num_lanes];
    for b in bvs {
        if b.x <= av.x {
            continue;
        }
        if let Some(lane) = road.lane_of(b.y) {
            gaps[lane] = gaps[lane].min(b.x - av.x);
        }
    }
    let best = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if gaps[current] == best {
        current
    } else {
        gaps.iter().position(|&g| g == best).unwrap_or(current)
    }
}

/// Reward for the state reached after a step.
pub fn compute_reward(state: &EnvState, road: &RoadGeometry, coeffs: &RewardCoefficients) -> RewardBreakdown {
    let av = &state.av;
    let r_acc = if state.accident.is_accident() { -coeffs.rho_acc } else { 0.0 };
    let mid = (road.v_max + road.v_min) / 2.0;
    let half = (road.v_max - road.v_min) / 2.0;
    let r_vel = coeffs.rho_vel * (av.v - mid) / half;
    // Dividing by the reference angle 1/ρ_yaw keeps |θ| = π/6 at exactly one unit.
    let r_yaw = -(av.theta.abs() / (1.0 / coeffs.rho_yaw));
    let on_best = road
        .lane_of(av.y)
        .is_some_and(|lane| lane == best_lane(av, &state.bvs, road));
    let r_lane = if on_best { coeffs.rho_lane } else { 0.0 };
    RewardBreakdown {
        r_acc,
        r_vel,
        r_yaw,
        r_lane,
        total: r_acc + r_vel + r_yaw + r_lane,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::AccidentKind;

    fn state(av: VehicleState, bvs: Vec<VehicleState>, accident: AccidentKind) -> EnvState {
        EnvState {
            frame_index: 1,
            av,
            bvs,
            done: accident.is_accident(),
            accident,
        }
    }

    fn lead(x: f64, lane: usize) -> VehicleState {
        VehicleState::new(x, RoadGeometry::default().lane_center(lane), 20.0, 0.0)
    }

    #[test]
    fn unique_largest_gap_wins() {
        let road = RoadGeometry::default();
        let av = lead(0.0, 0);
        assert_eq!(best_lane(&av, &[lead(20.0, 0), lead(50.0, 1)], &road), 2);
    }

    #[test]
    fn tie_prefers_current_lane() {
        let road = RoadGeometry::default();
        let av = lead(0.0, 0);
        assert_eq!(best_lane(&av, &[lead(10.0, 2)], &road), 0);
        assert_eq!(best_lane(&lead(0.0, 1), &[], &road), 1);
    }

    #[test]
    fn tie_without_current_prefers_lowest_index() {
        let road = RoadGeometry::default();
        let av = lead(0.0, 2);
        assert_eq!(best_lane(&av, &[lead(10.0, 2)], &road), 0);
    }

    #[test]
    fn vehicles_behind_are_ignored() {
        let road = RoadGeometry::default();
        let av = lead(50.0, 1);
        let ahead = [lead(70.0, 1), lead(90.0, 2)];
        let with_behind = [lead(70.0, 1), lead(90.0, 2), lead(10.0, 0), lead(45.0, 2)];
        assert_eq!(best_lane(&av, &ahead, &road), best_lane(&av, &with_behind, &road));
    }

    #[test]
    fn tabulated_examples() {
        let road = RoadGeometry::default();
        let c = RewardCoefficients::default();
        let r = compute_reward(&state(lead(0.0, 1), vec![], AccidentKind::None), &road, &c);
        assert_eq!(r.total, 2.0);

        let mut av = lead(0.0, 0);
        av.v = 40.0;
        let r = compute_reward(&state(av, vec![lead(10.0, 0)], AccidentKind::Collision), &road, &c);
        assert_eq!((r.r_acc, r.r_vel, r.r_yaw, r.r_lane), (-40.0, 0.8, 0.0, 0.0));
        assert_eq!(r.total, -39.2);

        let mut av = lead(0.0, 0);
        av.v = 0.0;
        av.theta = PI / 6.0;
        let r = compute_reward(&state(av, vec![lead(10.0, 0)], AccidentKind::None), &road, &c);
        assert_eq!(r.total, -1.8);
    }
}
