use nalgebra::{DMatrix, Vector3};

use super::{Camera, GeometryError, Pixel, Point3};
use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangulateConfig {
    pub min_views: usize,
    /// Ratio of the two smallest singular values of the linear system
    /// below which the rays count as near-parallel.
    pub min_conditioning: Real,
}

impl Default for TriangulateConfig {
    fn default() -> Self {
        Self {
            min_views: 2,
            min_conditioning: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulated {
    pub point: Point3,
    /// Mean reprojection error over the views, in pixels.
    pub residual: Real,
}

/// Linear (DLT) triangulation on undistorted normalized coordinates.
pub fn triangulate(views: &[(Camera, Pixel)], cfg: &TriangulateConfig) -> Result<Triangulated, GeometryError> {
    let need = cfg.min_views.max(2);
    if views.len() < need {
        return Err(GeometryError::TooFew {
            what: "views",
            needed: need,
            got: views.len(),
        });
    }
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (i, (cam, px)) in views.iter().enumerate() {
        let (x, y) = cam.intrinsics.normalize(*px);
        let r = cam.extrinsics.rotation.matrix();
        let t = cam.extrinsics.translation;
        let row = |k: usize| [r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]];
        let (p1, p2, p3) = (row(0), row(1), row(2));
        for c in 0..4 {
            a[(2 * i, c)] = x * p3[c] - p1[c];
            a[(2 * i + 1, c)] = y * p3[c] - p2[c];
        }
    }
    for mut row in a.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let (s_small, s_next) = (svd.singular_values[order[3]], svd.singular_values[order[2]]);
    if s_next <= cfg.min_conditioning * svd.singular_values[order[0]] || s_small >= s_next {
        return Err(GeometryError::Degenerate(format!(
            "near-parallel rays (singular values {s_next:.3e}, {s_small:.3e})"
        )));
    }
    let h = vt.row(order[3]);
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(GeometryError::Degenerate("point at infinity".into()));
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    let mut total = 0.0;
    for (cam, px) in views {
        let q = cam
            .project(&point)
            .ok_or_else(|| GeometryError::Degenerate("triangulated point behind a camera".into()))?;
        total += ((q[0] - px[0]).powi(2) + (q[1] - px[1]).powi(2)).sqrt();
    }
    Ok(Triangulated {
        point,
        residual: total / views.len() as Real,
    })
}
