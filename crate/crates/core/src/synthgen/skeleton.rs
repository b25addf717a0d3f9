//! Procedural skeleton: a fixed T-pose with sinusoidal limb swing.

use crate::data::NUM_JOINTS;

pub const BODY_HEIGHT: f64 = 1.8;

// (lateral, forward, up) for a body of unit height; negative lateral is the
// body's left side. COCO-17 order.
const TEMPLATE: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.055, 0.935],
    [-0.02, 0.045, 0.955],
    [0.02, 0.045, 0.955],
    [-0.045, 0.0, 0.945],
    [0.045, 0.0, 0.945],
    [-0.11, 0.0, 0.81],
    [0.11, 0.0, 0.81],
    [-0.265, 0.0, 0.81],
    [0.265, 0.0, 0.81],
    [-0.415, 0.0, 0.81],
    [0.415, 0.0, 0.81],
    [-0.055, 0.0, 0.52],
    [0.055, 0.0, 0.52],
    [-0.055, 0.0, 0.28],
    [0.055, 0.0, 0.28],
    [-0.055, 0.0, 0.045],
    [0.055, 0.0, 0.045],
];

#[derive(Clone, Copy, Debug)]
pub struct Gait {
    /// Peak leg swing angle, radians.
    pub amplitude: f64,
    /// Stride cycles per meter travelled.
    pub frequency: f64,
}

/// Poses for one person following `root` (ground position per frame).
/// Writes `frames × 17 × 3` values into `out`.
pub fn render_track(root: &[[f64; 2]], fps: f64, gait: Gait, initial_heading: f64, out: &mut Vec<[f64; 3]>) {
    let n = root.len();
    let mut heading = initial_heading;
    let mut dist = 0.0;
    for t in 0..n {
        if t > 0 {
            let d = [root[t][0] - root[t - 1][0], root[t][1] - root[t - 1][1]];
            dist += d[0].hypot(d[1]);
        }
        let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
        if b > a {
            let v = [root[b][0] - root[a][0], root[b][1] - root[a][1]];
            let speed = v[0].hypot(v[1]) * fps / (b - a) as f64;
            if speed > 0.2 {
                heading = v[1].atan2(v[0]);
            }
        }
        pose(root[t], heading, dist * gait.frequency * std::f64::consts::TAU, gait.amplitude, out);
    }
}

fn pose(root: [f64; 2], heading: f64, phase: f64, amp: f64, out: &mut Vec<[f64; 3]>) {
    let h = BODY_HEIGHT;
    let fwd = [heading.cos(), heading.sin()];
    let right = [fwd[1], -fwd[0]];
    let swing = amp * phase.sin();
    let mut local = TEMPLATE.map(|p| [p[0] * h, p[1] * h, p[2] * h]);
    // legs swing about the hips in the sagittal plane, opposite phases
    for (side, theta) in [(0usize, swing), (1, -swing)] {
        let hip = local[11 + side];
        for (j, len) in [(13 + side, 0.24 * h), (15 + side, 0.475 * h)] {
            local[j][1] = hip[1] + len * theta.sin();
            local[j][2] = hip[2] - len * theta.cos();
        }
    }
    // arms swing horizontally about the shoulders, opposite to the legs
    for (side, psi) in [(0usize, -0.5 * swing), (1, 0.5 * swing)] {
        let sh = local[5 + side];
        let sign = if side == 0 { -1.0 } else { 1.0 };
        for (j, len) in [(7 + side, 0.155 * h), (9 + side, 0.305 * h)] {
            local[j][0] = sh[0] + sign * len * psi.cos();
            local[j][1] = sh[1] - len * psi.sin();
        }
    }
    for p in local {
        out.push([
            root[0] + p[0] * right[0] + p[1] * fwd[0],
            root[1] + p[0] * right[1] + p[1] * fwd[1],
            p[2],
        ]);
    }
}
