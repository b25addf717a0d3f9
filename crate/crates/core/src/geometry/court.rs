use nalgebra::Vector3;

use super::Point3;
use crate::data::CourtBounds;
use crate::numerics::Real;
use crate::synthgen::HOOP_Y;

const BASELINE_Y: Real = -5.5;
/// Restricted-area half width and depth from the baseline.
const LANE_HALF: Real = 2.45;
const LANE_DEPTH: Real = 5.8;
/// Where the two-point arc meets the baseline.
const ARC_X: Real = 6.6;
const RIM_Z: Real = 3.05;
/// Backboard face plane, 1.2 m in from the baseline.
const BOARD_Y: Real = BASELINE_Y + 1.2;

/// Half-court landmarks in the court frame (meters, z up).
#[derive(Clone, Debug, PartialEq)]
pub struct CourtModel {
    /// Ten ground points at z = 0.
    pub ground: Vec<Point3>,
    /// Nine backboard points: basket center and the corners of the outer
    /// and inner boxes.
    pub backboard: Vec<Point3>,
    pub bounds: CourtBounds,
}

impl Default for CourtModel {
    fn default() -> Self {
        let p = |x: Real, y: Real, z: Real| Vector3::new(x, y, z);
        let hw = CourtBounds::default().half_width;
        let hd = CourtBounds::default().half_depth;
        let ground = vec![
            p(-hw, -hd, 0.0),
            p(hw, -hd, 0.0),
            p(-hw, hd, 0.0),
            p(hw, hd, 0.0),
            p(-ARC_X, BASELINE_Y, 0.0),
            p(ARC_X, BASELINE_Y, 0.0),
            p(-LANE_HALF, BASELINE_Y, 0.0),
            p(LANE_HALF, BASELINE_Y, 0.0),
            p(-LANE_HALF, BASELINE_Y + LANE_DEPTH, 0.0),
            p(LANE_HALF, BASELINE_Y + LANE_DEPTH, 0.0),
        ];
        let mut backboard = vec![p(0.0, HOOP_Y, RIM_Z)];
        for (hx, lo, hi) in [(0.9, 2.90, 3.95), (0.295, RIM_Z, 3.50)] {
            for (x, z) in [(-hx, lo), (hx, lo), (hx, hi), (-hx, hi)] {
                backboard.push(p(x, BOARD_Y, z));
            }
        }
        Self {
            ground,
            backboard,
            bounds: CourtBounds::default(),
        }
    }
}

impl CourtModel {
    /// Ground then backboard landmarks.
    pub fn all(&self) -> Vec<Point3> {
        self.ground.iter().chain(&self.backboard).copied().collect()
    }
}
