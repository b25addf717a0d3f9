use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use super::{Camera, CameraExtrinsics, CameraIntrinsics, GeometryError, Pixel, Point3};
use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iters: usize,
    pub lambda0: Real,
    /// Damping at which a non-improving search gives up.
    pub lambda_max: Real,
    /// Relative decrease of the squared error below which the search stops.
    pub tol: Real,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            lambda0: 1e-3,
            lambda_max: 1e12,
            tol: 1e-14,
        }
    }
}

struct LmOutcome {
    params: DVector<Real>,
    /// Squared error at the start and after every accepted step.
    history: Vec<Real>,
    stalled: bool,
}

fn numeric_jacobian(p: &DVector<Real>, r0_len: usize, f: &impl Fn(&DVector<Real>) -> DVector<Real>) -> DMatrix<Real> {
    let mut j = DMatrix::zeros(r0_len, p.len());
    for i in 0..p.len() {
        let h = 1e-6 * p[i].abs().max(1.0);
        let mut a = p.clone();
        a[i] += h;
        let mut b = p.clone();
        b[i] -= h;
        let d = (f(&a) - f(&b)) / (2.0 * h);
        j.set_column(i, &d);
    }
    j
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and a numeric
/// Jacobian.
fn levenberg_marquardt(p0: DVector<Real>, f: impl Fn(&DVector<Real>) -> DVector<Real>, cfg: &LmConfig) -> LmOutcome {
    let mut p = p0;
    let mut r = f(&p);
    let mut sse = r.norm_squared();
    let mut history = vec![sse];
    let mut lambda = cfg.lambda0;
    let mut stalled = false;
    for _ in 0..cfg.max_iters {
        if sse < 1e-24 {
            break;
        }
        let j = numeric_jacobian(&p, r.len(), &f);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        while lambda <= cfg.lambda_max {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.clone().cholesky().map(|c| c.solve(&(-&g))).or_else(|| a.lu().solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = &p + &delta;
            let rc = f(&cand);
            let sc = rc.norm_squared();
            if sc.is_finite() && sc < sse {
                let rel = (sse - sc) / sse;
                p = cand;
                r = rc;
                sse = sc;
                history.push(sse);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if rel < cfg.tol || delta.norm() < 1e-14 * (p.norm() + 1e-14) {
                    return LmOutcome { params: p, history, stalled };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: a minimum unless the gradient is large
            stalled = g.norm() > 1e-6 * (1.0 + sse.sqrt()) * (jtj.diagonal().max().sqrt() + 1.0);
            break;
        }
    }
    LmOutcome { params: p, history, stalled }
}

fn rot_from(omega: Vector3<Real>, base: &Rotation3<Real>) -> Rotation3<Real> {
    let mut r = Rotation3::new(omega) * base;
    r.renormalize();
    r
}

fn mean_error(cam: &Camera, points: &[Point3], obs: &[Pixel]) -> Real {
    let total: Real = points
        .iter()
        .zip(obs)
        .map(|(p, o)| match cam.project(p) {
            Some(q) => ((q[0] - o[0]).powi(2) + (q[1] - o[1]).powi(2)).sqrt(),
            None => Real::INFINITY,
        })
        .sum();
    total / points.len() as Real
}

fn residuals(cam: &Camera, points: &[Point3], obs: &[Pixel]) -> DVector<Real> {
    let mut out = DVector::zeros(2 * points.len());
    for (i, (p, o)) in points.iter().zip(obs).enumerate() {
        // behind the camera: a large but finite penalty keeps LM well defined
        let q = cam.project(p).unwrap_or([o[0] + 1e6, o[1] + 1e6]);
        out[2 * i] = q[0] - o[0];
        out[2 * i + 1] = q[1] - o[1];
    }
    out
}

/// Singular values of the centered point cloud, descending.
fn spread(points: &[Vector3<Real>]) -> Vec<Real> {
    let n = points.len() as Real;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let m = DMatrix::from_fn(points.len().max(3), 3, |i, j| points.get(i).map_or(0.0, |p| p[j] - mean[j]));
    let mut s: Vec<Real> = m.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Right singular vector of the smallest singular value.
fn null_vector(a: DMatrix<Real>) -> DVector<Real> {
    let cols = a.ncols();
    let a = if a.nrows() < cols { a.resize_vertically(cols, 0.0) } else { a };
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    vt.row(k).transpose()
}

/// Homography from ground `(X, Y)` to undistorted normalized image
/// coordinates, with Hartley normalization.
fn homography(src: &[(Real, Real)], dst: &[(Real, Real)]) -> Matrix3<Real> {
    let norm = |pts: &[(Real, Real)]| {
        let n = pts.len() as Real;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let d = pts.iter().map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt()).sum::<Real>() / n;
        let s = std::f64::consts::SQRT_2 / d.max(1e-300);
        Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
    };
    let (ts, td) = (norm(src), norm(dst));
    let apply = |t: &Matrix3<Real>, p: (Real, Real)| {
        let v = t * Vector3::new(p.0, p.1, 1.0);
        (v.x / v.z, v.y / v.z)
    };
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (&s, &d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = apply(&ts, s);
        let (u, v) = apply(&td, d);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h = null_vector(a);
    let hn = Matrix3::from_row_slice(h.as_slice());
    td.try_inverse().expect("similarity is invertible") * hn * ts
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrinsicsFit {
    pub extrinsics: CameraExtrinsics,
    /// Mean reprojection error in pixels.
    pub mean_error: Real,
}

/// Pose from coplanar (z = 0) landmarks: homography decomposition, then
/// least-squares refinement of the reprojection residuals.
pub fn solve_extrinsics(
    landmarks: &[Point3],
    observations: &[Pixel],
    intrinsics: &CameraIntrinsics,
) -> Result<ExtrinsicsFit, GeometryError> {
    intrinsics.validate()?;
    if landmarks.len() != observations.len() {
        return Err(GeometryError::Invalid(format!(
            "{} landmarks for {} observations",
            landmarks.len(),
            observations.len()
        )));
    }
    if landmarks.len() < 4 {
        return Err(GeometryError::TooFew {
            what: "correspondences",
            needed: 4,
            got: landmarks.len(),
        });
    }
    if let Some(p) = landmarks.iter().find(|p| p.z.abs() > 1e-9) {
        return Err(GeometryError::Invalid(format!("landmark {p:?} is off the z = 0 plane")));
    }
    let s = spread(landmarks);
    if s[1] <= 1e-9 * s[0].max(1e-300) {
        return Err(GeometryError::Degenerate("landmarks are collinear".into()));
    }
    let src: Vec<(Real, Real)> = landmarks.iter().map(|p| (p.x, p.y)).collect();
    let dst: Vec<(Real, Real)> = observations.iter().map(|&o| intrinsics.normalize(o)).collect();
    let h = homography(&src, &dst);
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if (h3 * scale).z < 0.0 {
        scale = -scale;
    }
    let (r1, r2) = (h1 * scale, h2 * scale);
    let m = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let base = Rotation3::from_matrix(&m);
    let t0 = h3 * scale;

    let cost = |p: &DVector<Real>| {
        let cam = Camera {
            intrinsics: *intrinsics,
            extrinsics: CameraExtrinsics {
                rotation: rot_from(Vector3::new(p[0], p[1], p[2]), &base),
                translation: Vector3::new(p[3], p[4], p[5]),
            },
        };
        residuals(&cam, landmarks, observations)
    };
    let p0 = DVector::from_vec(vec![0.0, 0.0, 0.0, t0.x, t0.y, t0.z]);
    let out = levenberg_marquardt(p0, cost, &LmConfig::default());
    let p = out.params;
    let extrinsics = CameraExtrinsics {
        rotation: rot_from(Vector3::new(p[0], p[1], p[2]), &base),
        translation: Vector3::new(p[3], p[4], p[5]),
    };
    let cam = Camera {
        intrinsics: *intrinsics,
        extrinsics,
    };
    Ok(ExtrinsicsFit {
        extrinsics,
        mean_error: mean_error(&cam, landmarks, observations),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineResult {
    pub camera: Camera,
    /// Total squared reprojection error at the start and after every
    /// accepted step.
    pub history: Vec<Real>,
    pub mean_error: Real,
    /// The search stopped without reaching a minimum; `camera` is the best
    /// iterate found.
    pub stalled: bool,
}

/// Joint damped least-squares refinement of `(fx, fy, cx, cy, R, t)` on a
/// non-coplanar landmark set; distortion is held fixed.
pub fn refine_calibration(
    camera: &Camera,
    points: &[Point3],
    observations: &[Pixel],
    cfg: &LmConfig,
) -> Result<RefineResult, GeometryError> {
    camera.intrinsics.validate()?;
    if points.len() != observations.len() {
        return Err(GeometryError::Invalid(format!("{} points for {} observations", points.len(), observations.len())));
    }
    if points.len() < 6 {
        return Err(GeometryError::TooFew {
            what: "correspondences",
            needed: 6,
            got: points.len(),
        });
    }
    let s = spread(points);
    if s[2] <= 1e-6 * s[0].max(1e-300) {
        return Err(GeometryError::Degenerate("joint refinement needs non-coplanar points".into()));
    }
    let base = camera.extrinsics.rotation;
    let build = |p: &DVector<Real>| {
        let mut intr = camera.intrinsics;
        intr.fx = p[0];
        intr.fy = p[1];
        intr.cx = p[2];
        intr.cy = p[3];
        Camera {
            intrinsics: intr,
            extrinsics: CameraExtrinsics {
                rotation: rot_from(Vector3::new(p[4], p[5], p[6]), &base),
                translation: Vector3::new(p[7], p[8], p[9]),
            },
        }
    };
    let i = &camera.intrinsics;
    let t = camera.extrinsics.translation;
    let p0 = DVector::from_vec(vec![i.fx, i.fy, i.cx, i.cy, 0.0, 0.0, 0.0, t.x, t.y, t.z]);
    let out = levenberg_marquardt(p0, |p| residuals(&build(p), points, observations), cfg);
    if out.stalled {
        log::warn!("calibration refinement stalled at squared error {:.6e}", out.history.last().unwrap_or(&0.0));
    }
    let cam = build(&out.params);
    Ok(RefineResult {
        camera: cam,
        mean_error: mean_error(&cam, points, observations),
        history: out.history,
        stalled: out.stalled,
    })
}
