use crate::road::{RoadGeometry, VehicleDims};
use crate::scenario::VehicleState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccidentKind {
    #[default]
    None,
    Collision,
    OffRoad,
}

impl AccidentKind {
    pub fn is_accident(self) -> bool {
        self != AccidentKind::None
    }
}

/// Oriented rectangle: center, half extents along/across the heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub theta: f64,
}

impl Rect {
    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.theta.sin_cos();
        [(c, s), (-s, c)]
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let [(ux, uy), (vx, vy)] = self.axes();
        let (l, w) = (self.half_length, self.half_width);
        [(l, w), (l, -w), (-l, -w), (-l, w)].map(|(a, b)| (self.cx + a * ux + b * vx, self.cy + a * uy + b * vy))
    }

    fn project(&self, axis: (f64, f64)) -> (f64, f64) {
        let center = self.cx * axis.0 + self.cy * axis.1;
        let [(ux, uy), (vx, vy)] = self.axes();
        let r = self.half_length * (ux * axis.0 + uy * axis.1).abs() + self.half_width * (vx * axis.0 + vy * axis.1).abs();
        (center - r, center + r)
    }

    /// Separating-axis test over the four edge normals. Touching rectangles
    /// do not intersect.
    pub fn intersects(&self, other: &Rect) -> bool {
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            if a1 <= b0 || b1 <= a0 {
                return false;
            }
        }
        true
    }
}

pub fn footprint(s: &VehicleState, dims: &VehicleDims) -> Rect {
    Rect {
        cx: s.x,
        cy: s.y,
        half_length: 0.5 * dims.length,
        half_width: 0.5 * dims.width,
        theta: s.theta,
    }
}

/// Collision is reported ahead of off-road when both hold.
pub fn detect_accident(av: &VehicleState, bvs: &[VehicleState], road: &RoadGeometry, dims: &VehicleDims) -> AccidentKind {
    let me = footprint(av, dims);
    // Cheap reject before the full test: farther apart than the diagonal.
    let reach = dims.length.hypot(dims.width);
    let hit = bvs.iter().any(|b| {
        (b.x - av.x).abs() < reach && (b.y - av.y).abs() < reach && me.intersects(&footprint(b, dims))
    });
    if hit {
        return AccidentKind::Collision;
    }
    let width = road.width();
    if me.corners().iter().any(|&(_, y)| y < 0.0 || y > width) {
        return AccidentKind::OffRoad;
    }
    AccidentKind::None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> VehicleDims {
        VehicleDims::default()
    }

    #[test]
    fn rear_end_overlap_is_collision() {
        let av = VehicleState::new(50.0, 4.8, 20.0, 0.0);
        let bv = VehicleState::new(52.0, 4.8, 10.0, 0.0);
        assert_eq!(detect_accident(&av, &[bv], &RoadGeometry::default(), &dims()), AccidentKind::Collision);
    }

    #[test]
    fn clear_gap_is_safe() {
        let av = VehicleState::new(50.0, 4.8, 20.0, 0.0);
        let bv = VehicleState::new(56.0, 4.8, 10.0, 0.0);
        let side = VehicleState::new(50.0, 1.6, 10.0, 0.0);
        assert_eq!(detect_accident(&av, &[bv, side], &RoadGeometry::default(), &dims()), AccidentKind::None);
    }

    #[test]
    fn corner_below_edge_is_off_road() {
        let av = VehicleState::new(50.0, -2.0, 20.0, 0.0);
        assert_eq!(detect_accident(&av, &[], &RoadGeometry::default(), &dims()), AccidentKind::OffRoad);
        let av = VehicleState::new(50.0, 0.85, 20.0, 0.0);
        assert_eq!(detect_accident(&av, &[], &RoadGeometry::default(), &dims()), AccidentKind::OffRoad);
        let av = VehicleState::new(50.0, 0.95, 20.0, 0.0);
        assert_eq!(detect_accident(&av, &[], &RoadGeometry::default(), &dims()), AccidentKind::None);
    }

    #[test]
    fn collision_wins_over_off_road() {
        let av = VehicleState::new(50.0, 0.5, 20.0, 0.0);
        let bv = VehicleState::new(51.0, 0.5, 20.0, 0.0);
        assert_eq!(detect_accident(&av, &[bv], &RoadGeometry::default(), &dims()), AccidentKind::Collision);
    }

    #[test]
    fn rotated_cross_overlap() {
        let a = Rect { cx: 0.0, cy: 0.0, half_length: 2.5, half_width: 0.9, theta: 0.0 };
        let b = Rect { cx: 0.0, cy: 0.0, half_length: 2.5, half_width: 0.9, theta: std::f64::consts::FRAC_PI_2 };
        assert!(a.intersects(&b));
        let c = Rect { cx: 3.6, cy: 0.0, ..b };
        assert!(!a.intersects(&c));
    }
}
