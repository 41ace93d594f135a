//! Closed-form mapping between a sphere in the camera frame and its image
//! ellipse, plus the single-view inverses.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3x4, Vector2, Vector3};

use crate::camera::{CameraView, Ellipse, EllipseObservation, Intrinsics, Sphere};
use crate::error::{Error, Result};

/// Relative margin on `Z_C > R` below which projection is refused.
pub const DEPTH_MARGIN: f64 = 1e-9;

/// `K [rot | t]`.
pub fn build_projective_matrix(view: &CameraView) -> Matrix3x4<f64> {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&view.rot);
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&view.t);
    view.intrinsics.calibration_matrix() * rt
}

pub fn world_to_camera(point: &Vector3<f64>, view: &CameraView) -> Vector3<f64> {
    view.world_to_camera(point)
}

/// Folds an orientation into `[-pi/2, pi/2)`; ellipse axes are pi-periodic.
pub fn fold_orientation(theta: f64) -> f64 {
    let mut t = theta % PI;
    if t >= FRAC_PI_2 {
        t -= PI;
    } else if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Image ellipse of a sphere whose center is given in the camera frame.
///
/// The major axis lies along the direction from the principal point to the
/// image of the center; on-axis spheres project to circles with `theta = 0`.
pub fn project_sphere(center: &Vector3<f64>, radius: f64, k: &Intrinsics) -> Result<Ellipse> {
    let (x, y, z) = (center.x, center.y, center.z);
    if !(radius > 0.0) || z <= radius * (1.0 + DEPTH_MARGIN) {
        return Err(Error::DegenerateProjection {
            depth: z,
            radius,
        });
    }
    let r2 = radius * radius;
    let denom = z * z - r2;
    let lateral2 = x * x + y * y;
    let a_e = k.f * radius * (lateral2 + denom).sqrt() / denom;
    let b_e = k.f * radius / denom.sqrt();
    let x_ce = k.px + k.f * z * x / denom;
    let y_ce = k.py + k.f * z * y / denom;
    let theta = if lateral2.sqrt() <= 1e-12 * z {
        0.0
    } else {
        fold_orientation(y.atan2(x))
    };
    Ok(Ellipse {
        x_ce,
        y_ce,
        a_e,
        b_e,
        theta,
    })
}

/// Projects a world-frame sphere into `view` and wraps the result as an
/// observation without covariance.
pub fn observe_sphere(
    sphere: &Sphere,
    view: &CameraView,
    ellipse_id: impl Into<String>,
) -> Result<EllipseObservation> {
    let c = view.world_to_camera(&sphere.center);
    let ellipse = project_sphere(&c, sphere.radius, &view.intrinsics)?;
    Ok(EllipseObservation {
        image_id: view.image_id.clone(),
        ellipse_id: ellipse_id.into(),
        ellipse,
        cov: None,
    })
}

/// Image of the sphere center, which differs from the ellipse center
/// whenever the sphere is off the principal axis.
pub fn projected_sphere_center(e: &Ellipse, k: &Intrinsics) -> Vector2<f64> {
    let f2 = k.f * k.f;
    let b2 = e.b_e * e.b_e;
    let s = f2 + b2;
    Vector2::new(
        (f2 * e.x_ce + b2 * k.px) / s,
        (f2 * e.y_ce + b2 * k.py) / s,
    )
}

/// Camera-frame sphere center from one ellipse, given the radius. The
/// result scales linearly with `radius`.
pub fn center_from_single_view(e: &Ellipse, k: &Intrinsics, radius: f64) -> Vector3<f64> {
    let root = (k.f * k.f + e.b_e * e.b_e).sqrt();
    let z = radius * root / e.b_e;
    let lateral = k.f * radius / (e.b_e * root);
    Vector3::new(lateral * (e.x_ce - k.px), lateral * (e.y_ce - k.py), z)
}

pub fn sphere_from_single_view(obs: &EllipseObservation, k: &Intrinsics, radius: f64) -> Sphere {
    Sphere::in_camera(
        center_from_single_view(&obs.ellipse, k, radius),
        radius,
        &obs.image_id,
    )
}

pub fn radius_from_depth(depth: f64, b_e: f64, f: f64) -> f64 {
    depth * b_e / (b_e * b_e + f * f).sqrt()
}
