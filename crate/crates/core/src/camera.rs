//! Camera, ellipse and sphere value types shared by every stage.
//!
//! Pose convention: a world point maps into the camera frame as
//! `x_cam = rot * x_world + t`.

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, Vector2, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Interior orientation of a unit-aspect, zero-skew pinhole camera (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub f: f64,
    pub px: f64,
    pub py: f64,
}

impl Intrinsics {
    pub fn new(f: f64, px: f64, py: f64) -> Self {
        Self { f, px, py }
    }

    pub fn calibration_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.px, 0.0, self.f, self.py, 0.0, 0.0, 1.0)
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }
}

/// Interior and exterior orientation of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub image_id: String,
    pub intrinsics: Intrinsics,
    /// World to camera rotation.
    pub rot: Matrix3<f64>,
    /// World to camera translation.
    pub t: Vector3<f64>,
    /// Covariance of (p_x, p_y, f) in pixels².
    pub iop_cov: Option<Matrix3<f64>>,
}

impl CameraView {
    pub fn new(
        image_id: impl Into<String>,
        intrinsics: Intrinsics,
        rot: Matrix3<f64>,
        t: Vector3<f64>,
        iop_cov: Option<Matrix3<f64>>,
    ) -> Result<Self> {
        let view = Self {
            image_id: image_id.into(),
            intrinsics,
            rot,
            t,
            iop_cov,
        };
        view.validate()?;
        Ok(view)
    }

    /// Camera looking from `eye` towards `target`, with `up` fixing the roll.
    /// The camera y axis points down in the image, matching pixel rows.
    pub fn look_at(
        image_id: impl Into<String>,
        intrinsics: Intrinsics,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        let z = (target - eye)
            .try_normalize(1e-15)
            .ok_or_else(|| Error::InvalidCamera {
                id: image_id.clone(),
                reason: "eye coincides with target".into(),
            })?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera {
                id: image_id.clone(),
                reason: "viewing direction parallel to up vector".into(),
            })?;
        let y = z.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(rot * eye);
        Self::new(image_id, intrinsics, rot, t, None)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidCamera {
            id: self.image_id.clone(),
            reason,
        };
        let k = &self.intrinsics;
        if !(k.f.is_finite() && k.f > 0.0) {
            return Err(fail(format!("focal length must be positive, got {}", k.f)));
        }
        if !(k.px.is_finite() && k.py.is_finite()) {
            return Err(fail("principal point is not finite".into()));
        }
        if self.rot.iter().chain(self.t.iter()).any(|v| !v.is_finite()) {
            return Err(fail("pose contains non-finite values".into()));
        }
        let ortho = (self.rot.transpose() * self.rot - Matrix3::identity()).norm();
        if ortho >= ORTHONORMAL_TOL {
            return Err(fail(format!("rotation is not orthonormal (deviation {ortho:e})")));
        }
        if self.rot.determinant() <= 0.0 {
            return Err(fail("rotation has negative determinant".into()));
        }
        if let Some(cov) = &self.iop_cov {
            check_psd(cov, "iop_cov").map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rot * point + self.t
    }

    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rot.transpose() * (point - self.t)
    }

    /// Projection center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rot.transpose() * self.t)
    }

    /// Pinhole projection of a world point. `None` when the point is not in
    /// front of the camera.
    pub fn project(&self, point: &Vector3<f64>) -> Option<Vector2<f64>> {
        let c = self.world_to_camera(point);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some(Vector2::new(k.px + k.f * c.x / c.z, k.py + k.f * c.y / c.z))
    }

    pub fn iop_cov_or_zero(&self) -> Matrix3<f64> {
        self.iop_cov.unwrap_or_else(Matrix3::zeros)
    }
}

/// Geometric ellipse parameters in pixels; `theta` is the major-axis angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub x_ce: f64,
    pub y_ce: f64,
    pub a_e: f64,
    pub b_e: f64,
    pub theta: f64,
}

impl Ellipse {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.x_ce, self.y_ce)
    }
}

/// One detected ellipse with optional 4×4 covariance in
/// (a_e, b_e, x_ce, y_ce) order.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseObservation {
    pub image_id: String,
    pub ellipse_id: String,
    pub ellipse: Ellipse,
    pub cov: Option<Matrix4<f64>>,
}

impl EllipseObservation {
    pub fn new(
        image_id: impl Into<String>,
        ellipse_id: impl Into<String>,
        ellipse: Ellipse,
        cov: Option<Matrix4<f64>>,
    ) -> Result<Self> {
        let obs = Self {
            image_id: image_id.into(),
            ellipse_id: ellipse_id.into(),
            ellipse,
            cov,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidEllipse {
            id: self.ellipse_id.clone(),
            reason,
        };
        let e = &self.ellipse;
        if [e.x_ce, e.y_ce, e.a_e, e.b_e, e.theta]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(fail("non-finite parameter".into()));
        }
        if !(e.b_e > 0.0) {
            return Err(fail(format!("semi-minor axis must be positive, got {}", e.b_e)));
        }
        if e.a_e < e.b_e {
            return Err(fail(format!("a_e ({}) < b_e ({})", e.a_e, e.b_e)));
        }
        if !(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&e.theta) {
            return Err(fail(format!("theta {} outside [-pi/2, pi/2)", e.theta)));
        }
        if let Some(cov) = &self.cov {
            check_psd(cov, "ellipse covariance").map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    World,
    Camera(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub frame: Frame,
}

impl Sphere {
    pub fn world(center: Vector3<f64>, radius: f64) -> Self {
        Self {
            center,
            radius,
            frame: Frame::World,
        }
    }

    pub fn in_camera(center: Vector3<f64>, radius: f64, image_id: impl Into<String>) -> Self {
        Self {
            center,
            radius,
            frame: Frame::Camera(image_id.into()),
        }
    }

    /// The same sphere expressed in `view`'s camera frame.
    pub fn to_camera(&self, view: &CameraView) -> Sphere {
        Sphere::in_camera(view.world_to_camera(&self.center), self.radius, &view.image_id)
    }
}

/// Symmetric positive semi-definite check used for every covariance input.
/// Fails when the matrix is visibly asymmetric or when the smallest
/// eigenvalue of its symmetric part is below `-1e-9 * trace`.
pub fn check_psd<const N: usize>(m: &SMatrix<f64, N, N>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance(format!("{what} has non-finite entries")));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::InvalidCovariance(format!("{what} is not symmetric")));
    }
    let sym = DMatrix::from_column_slice(N, N, ((m + m.transpose()) * 0.5).as_slice());
    let trace = sym.trace();
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -1e-9 * trace.abs() {
        return Err(Error::InvalidCovariance(format!(
            "{what} is not positive semi-definite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}
