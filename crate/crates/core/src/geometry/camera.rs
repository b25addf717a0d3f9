use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::numerics::Real;

pub type Point3 = Vector3<Real>;
pub type Pixel = [Real; 2];

/// Pinhole intrinsics with Brown distortion (radial k1, k2; tangential
/// p1, p2) applied in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: Real,
    pub fy: Real,
    pub cx: Real,
    pub cy: Real,
    #[serde(default)]
    pub k1: Real,
    #[serde(default)]
    pub k2: Real,
    #[serde(default)]
    pub p1: Real,
    #[serde(default)]
    pub p2: Real,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: Real, fy: Real, cx: Real, cy: Real) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            p1: 0.0,
            p2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::Invalid(format!("focal lengths {} / {} must be positive", self.fx, self.fy)));
        }
        Ok(())
    }

    pub fn distort(&self, x: Real, y: Real) -> (Real, Real) {
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        (
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Inverts [`distort`](Self::distort) by fixed-point iteration.
    pub fn undistort(&self, xd: Real, yd: Real) -> (Real, Real) {
        let (mut x, mut y) = (xd, yd);
        for _ in 0..100 {
            let (dx, dy) = self.distort(x, y);
            let (ex, ey) = (dx - xd, dy - yd);
            x -= ex;
            y -= ey;
            if ex.abs().max(ey.abs()) < 1e-15 {
                break;
            }
        }
        (x, y)
    }

    pub fn to_pixel(&self, xn: Real, yn: Real) -> Pixel {
        let (xd, yd) = self.distort(xn, yn);
        [self.fx * xd + self.cx, self.fy * yd + self.cy]
    }

    /// Undistorted normalized coordinates of a pixel.
    pub fn normalize(&self, p: Pixel) -> (Real, Real) {
        self.undistort((p[0] - self.cx) / self.fx, (p[1] - self.cy) / self.fy)
    }
}

/// World-to-camera transform `x_c = R·X + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Rotation3<Real>,
    pub translation: Vector3<Real>,
}

impl CameraExtrinsics {
    pub fn to_camera(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Point3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Largest deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> Real {
        let m = self.rotation.matrix();
        (m.transpose() * m - Matrix3::identity()).abs().max()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    /// Pixel of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<Pixel> {
        let c = self.extrinsics.to_camera(p);
        (c.z > 1e-9).then(|| self.intrinsics.to_pixel(c.x / c.z, c.y / c.z))
    }

    /// Unit ray direction (world frame) through a pixel.
    pub fn ray(&self, p: Pixel) -> Point3 {
        let (x, y) = self.intrinsics.normalize(p);
        (self.extrinsics.rotation.inverse() * Vector3::new(x, y, 1.0)).normalize()
    }
}

/// Extrinsics of a camera at `eye` looking at `target` with world `up`
/// (image y points down).
pub fn look_at(eye: Point3, target: Point3, up: Point3) -> CameraExtrinsics {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rotation = Rotation3::from_matrix_unchecked(m);
    CameraExtrinsics {
        rotation,
        translation: -(rotation * eye),
    }
}

/// `n` 4K (3840×2160) cameras behind the court corners, 7 m high, aimed
/// at a floor point on their own half of the court.
pub fn synthetic_rig(n: usize) -> Vec<Camera> {
    let corners = [(12.0, -10.0), (-12.0, -10.0), (-12.0, 10.0), (12.0, 10.0)];
    (0..n)
        .map(|i| {
            let (x, y) = corners[i % 4];
            let lift = (i / 4) as Real;
            let mut intrinsics = CameraIntrinsics::pinhole(2000.0, 2000.0, 1920.0, 1080.0);
            intrinsics.k1 = -0.05;
            intrinsics.k2 = 0.01;
            Camera {
                intrinsics,
                extrinsics: look_at(
                    Vector3::new(x, y, 7.0 + lift),
                    Vector3::new(0.3 * x, 0.3 * y, 0.0),
                    Vector3::z(),
                ),
            }
        })
        .collect()
}

/// Camera file layout (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    /// Row-major world-to-camera rotation.
    pub rotation: Option<[[Real; 3]; 3]>,
    pub translation: Option<[Real; 3]>,
    /// Mean reprojection error of the last calibration, in pixels.
    pub reprojection_error: Option<Real>,
}

impl CameraFile {
    pub fn from_camera(cam: &Camera, reprojection_error: Option<Real>) -> Self {
        let m = cam.extrinsics.rotation.matrix();
        let t = cam.extrinsics.translation;
        Self {
            intrinsics: cam.intrinsics,
            rotation: Some([0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])),
            translation: Some([t.x, t.y, t.z]),
            reprojection_error,
        }
    }

    pub fn camera(&self) -> Option<Camera> {
        let (r, t) = (self.rotation?, self.translation?);
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        Some(Camera {
            intrinsics: self.intrinsics,
            extrinsics: CameraExtrinsics {
                rotation: Rotation3::from_matrix(&m),
                translation: Vector3::from(t),
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let f: Self = toml::from_str(&text).map_err(|e| GeometryError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        f.intrinsics.validate()?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let text = toml::to_string_pretty(self).map_err(|e| GeometryError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
