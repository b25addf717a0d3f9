use serde::{Deserialize, Serialize};

use super::{Camera, GeometryError, Pixel, Point3};
use crate::data::CourtBounds;
use crate::numerics::Real;

/// Cost marking a forbidden pair.
pub const FORBIDDEN: Real = Real::INFINITY;

/// Above this size the lexicographic tie refinement is skipped.
const TIE_REFINE_LIMIT: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Column of each row, `None` when the row stays unmatched.
    pub rows: Vec<Option<usize>>,
    pub cost: Real,
}

/// Square minimum-cost assignment (shortest augmenting paths with
/// potentials); returns the column of every row. `fixed` rows/columns are
/// excluded.
fn solve_square(c: &[Vec<Real>], skip_rows: &[bool], skip_cols: &[bool]) -> (Vec<usize>, Real) {
    let rows: Vec<usize> = (0..c.len()).filter(|&i| !skip_rows[i]).collect();
    let cols: Vec<usize> = (0..c.len()).filter(|&j| !skip_cols[j]).collect();
    let n = rows.len();
    let m = cols.len();
    debug_assert_eq!(n, m);
    let cost = |i: usize, j: usize| c[rows[i - 1]][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![Real::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Real::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![usize::MAX; c.len()];
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] > 0 {
            out[rows[p[j] - 1]] = cols[j - 1];
            total += cost(p[j], j);
        }
    }
    (out, total)
}

/// Minimum-cost one-to-one assignment of an `n × m` cost matrix.
/// [`FORBIDDEN`] entries are never used; among optimal assignments the
/// lexicographically smallest column sequence is returned.
pub fn assign_hungarian(cost: &[Vec<Real>]) -> Result<Assignment, GeometryError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Assignment { rows: vec![], cost: 0.0 });
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(GeometryError::Invalid("ragged cost matrix".into()));
    }
    if let Some(v) = cost.iter().flatten().find(|v| v.is_nan() || *v == &Real::NEG_INFINITY) {
        return Err(GeometryError::Invalid(format!("cost {v}")));
    }
    if let Some(i) = cost.iter().position(|r| r.iter().all(|v| v.is_infinite())) {
        return Err(GeometryError::ForbiddenRow(i));
    }
    let size = n.max(m);
    let finite_max = cost.iter().flatten().filter(|v| v.is_finite()).fold(0.0 as Real, |a, v| a.max(v.abs()));
    // larger than any all-finite assignment
    let big = (finite_max + 1.0) * (size as Real + 1.0) * 2.0;
    let square: Vec<Vec<Real>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match cost.get(i).and_then(|r| r.get(j)) {
                    Some(v) if v.is_finite() => *v,
                    Some(_) => big,
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    let mut skip_r = vec![false; size];
    let mut skip_c = vec![false; size];
    let (mut cols, best) = solve_square(&square, &skip_r, &skip_c);
    if size <= TIE_REFINE_LIMIT {
        let tol = 1e-9 * (1.0 + best.abs());
        let mut fixed_cost = 0.0;
        for i in 0..size {
            for j in 0..size {
                if skip_c[j] {
                    continue;
                }
                skip_r[i] = true;
                skip_c[j] = true;
                let (_, rest) = solve_square(&square, &skip_r, &skip_c);
                if (fixed_cost + square[i][j] + rest - best).abs() <= tol {
                    fixed_cost += square[i][j];
                    cols[i] = j;
                    break;
                }
                skip_r[i] = false;
                skip_c[j] = false;
            }
        }
    }
    let rows: Vec<Option<usize>> = (0..n).map(|i| (cols[i] < m && cost[i][cols[i]].is_finite()).then_some(cols[i])).collect();
    let total = rows.iter().enumerate().filter_map(|(i, c)| c.map(|j| cost[i][j])).sum();
    Ok(Assignment { rows, cost: total })
}

/// Modal id; ties go to the lowest id.
pub fn vote_identity(votes: &[usize]) -> Result<usize, GeometryError> {
    let mut sorted = votes.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, usize)> = None;
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, n)| chunk.len() > n) {
            best = Some((chunk[0], chunk.len()));
        }
    }
    best.map(|(id, _)| id).ok_or(GeometryError::EmptyVotes)
}

/// Distance from a point to the viewing ray through a pixel.
pub fn ray_distance(cam: &Camera, px: Pixel, p: &Point3) -> Real {
    let d = cam.ray(px);
    let v = p - cam.extrinsics.center();
    (v - d * v.dot(&d)).norm()
}

/// Detection-to-track costs in one view: pixel distance between the
/// detection and the projected track position, plus `beta` times the 3D
/// distance from the track position to the detection's viewing ray.
pub fn association_costs(cam: &Camera, detections: &[Pixel], tracks: &[Point3], beta: Real) -> Vec<Vec<Real>> {
    detections
        .iter()
        .map(|&d| {
            tracks
                .iter()
                .map(|t| match cam.project(t) {
                    Some(q) => ((q[0] - d[0]).powi(2) + (q[1] - d[1]).powi(2)).sqrt() + beta * ray_distance(cam, d, t),
                    None => FORBIDDEN,
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub start: usize,
    /// One ground-frame position per frame from `start`.
    pub positions: Vec<[Real; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub min_length: usize,
    /// Tracks with a larger fraction of frames out of bounds are dropped.
    pub max_outside: Real,
    pub bounds: CourtBounds,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_length: 10,
            max_outside: 0.5,
            bounds: CourtBounds::default(),
        }
    }
}

pub fn filter_trajectories(tracks: &[Track], cfg: &FilterConfig) -> Vec<Track> {
    tracks
        .iter()
        .filter(|t| {
            let n = t.positions.len();
            if n < cfg.min_length || n == 0 {
                return false;
            }
            let outside = t.positions.iter().filter(|p| !cfg.bounds.contains(p[0], p[1])).count();
            (outside as Real / n as Real) <= cfg.max_outside
        })
        .cloned()
        .collect()
}
