//! Multi-view sphere recovery and metric scale definition.
//!
//! A sphere is recovered in four steps: each ellipse center is corrected to
//! the image of the sphere center, the corrected centers are triangulated,
//! the triangulated center is moved into every camera frame to read off a
//! per-view radius from its depth, and the per-view radii are averaged.

use nalgebra::{DMatrix, Vector2, Vector3};

use crate::camera::{CameraView, EllipseObservation, Sphere};
use crate::error::{Error, Result};
use crate::projection::{projected_sphere_center, radius_from_depth};

/// Singular-value ratio below which the triangulation system is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SphereModel {
    pub sphere: Sphere,
    pub per_view_radii: Vec<(String, f64)>,
    /// Largest deviation of a per-view radius from the combined radius.
    pub radius_spread: f64,
    /// RMS reprojection residual of the center against the corrected
    /// ellipse centers, in pixels.
    pub triangulation_residual: f64,
    pub scale_applied: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleResult {
    pub s_r: f64,
    /// RMSE of `R_real - s_r * R_estimated` over the anchors, real units.
    pub residual_rmse: f64,
}

/// Linear (DLT) triangulation of one point from pixel observations.
///
/// World coordinates are recentred on the camera centroid and rescaled
/// before solving so the homogeneous system stays well conditioned.
pub fn triangulate_center(observations: &[(&CameraView, Vector2<f64>)]) -> Result<Vector3<f64>> {
    if observations.len() < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation needs at least two views, got {}",
            observations.len()
        )));
    }
    let centers: Vec<Vector3<f64>> = observations.iter().map(|(v, _)| v.center()).collect();
    let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let spread = centers.iter().map(|c| (c - centroid).norm()).sum::<f64>() / centers.len() as f64;
    let magnitude = centroid.norm().max(spread);
    if spread <= 1e-12 * magnitude.max(1.0) {
        return Err(Error::DegenerateGeometry("camera centers coincide".into()));
    }

    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (row, (view, pixel)) in observations.iter().enumerate() {
        let k = &view.intrinsics;
        let u = (pixel.x - k.px) / k.f;
        let v = (pixel.y - k.py) / k.f;
        let rot = view.rot;
        let t = (rot * centroid + view.t) / spread;
        let p = |r: usize| [rot[(r, 0)], rot[(r, 1)], rot[(r, 2)], t[r]];
        let (p1, p2, p3) = (p(0), p(1), p(2));
        for (offset, (coord, pr)) in [(u, p1), (v, p2)].into_iter().enumerate() {
            let mut eq = [0.0; 4];
            for c in 0..4 {
                eq[c] = coord * p3[c] - pr[c];
            }
            let norm = eq.iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..4 {
                a[(2 * row + offset, c)] = eq[c] / norm;
            }
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |i: usize| svd.singular_values[order[i]];
    if s(2) < RANK_TOL * s(0) {
        return Err(Error::DegenerateGeometry(
            "triangulation system is rank deficient (rays coincide)".into(),
        ));
    }
    let h = v_t.row(order[3]);
    let w = h[3];
    if w.abs() < 1e-12 * h.norm() {
        return Err(Error::DegenerateGeometry("triangulated point at infinity".into()));
    }
    let local = Vector3::new(h[0] / w, h[1] / w, h[2] / w);
    Ok(centroid + local * spread)
}

/// Two-view midpoint of the common perpendicular between the viewing rays.
/// Diagnostic only; [`triangulate_center`] is the authoritative method.
pub fn triangulate_midpoint(
    first: (&CameraView, Vector2<f64>),
    second: (&CameraView, Vector2<f64>),
) -> Result<Vector3<f64>> {
    let ray = |view: &CameraView, px: Vector2<f64>| {
        let k = &view.intrinsics;
        let dir_cam = Vector3::new((px.x - k.px) / k.f, (px.y - k.py) / k.f, 1.0);
        (view.center(), (view.rot.transpose() * dir_cam).normalize())
    };
    let (o1, d1) = ray(first.0, first.1);
    let (o2, d2) = ray(second.0, second.1);
    let w0 = o1 - o2;
    let b = d1.dot(&d2);
    let denom = 1.0 - b * b;
    if denom < 1e-14 {
        return Err(Error::DegenerateGeometry("rays are parallel".into()));
    }
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    Ok(((o1 + d1 * s) + (o2 + d2 * t)) * 0.5)
}

/// Least-squares radius: the (weighted) mean of the per-view radii.
pub fn estimate_radius_ls(radii: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if radii.is_empty() {
        return Err(Error::EmptyInput);
    }
    match weights {
        None => Ok(radii.iter().sum::<f64>() / radii.len() as f64),
        Some(w) => {
            if w.len() != radii.len() {
                return Err(Error::InvalidWeights(format!(
                    "{} weights for {} radii",
                    w.len(),
                    radii.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidWeights("weights must be nonnegative".into()));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InvalidWeights("weights sum to zero".into()));
            }
            Ok(radii.iter().zip(w).map(|(r, w)| r * w).sum::<f64>() / total)
        }
    }
}

/// Recovers the world-frame sphere from two or more matched observations.
pub fn reconstruct_sphere(
    matched: &[(&CameraView, &EllipseObservation)],
    weights: Option<&[f64]>,
) -> Result<SphereModel> {
    if matched.len() < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "sphere recovery needs at least two views, got {}",
            matched.len()
        )));
    }
    for (view, obs) in matched {
        if view.image_id != obs.image_id {
            return Err(Error::UnknownImage(format!(
                "ellipse `{}` belongs to `{}` but was paired with `{}`",
                obs.ellipse_id, obs.image_id, view.image_id
            )));
        }
    }

    let corrected: Vec<(&CameraView, Vector2<f64>)> = matched
        .iter()
        .map(|(view, obs)| (*view, projected_sphere_center(&obs.ellipse, &view.intrinsics)))
        .collect();
    let center = triangulate_center(&corrected)?;

    let mut per_view_radii = Vec::with_capacity(matched.len());
    let mut sq_residual = 0.0;
    for ((view, obs), (_, pixel)) in matched.iter().zip(&corrected) {
        let local = view.world_to_camera(&center);
        if local.z <= 0.0 {
            return Err(Error::DegenerateProjection {
                depth: local.z,
                radius: 0.0,
            });
        }
        let k = &view.intrinsics;
        per_view_radii.push((
            view.image_id.clone(),
            radius_from_depth(local.z, obs.ellipse.b_e, k.f),
        ));
        let reproj = Vector2::new(k.px + k.f * local.x / local.z, k.py + k.f * local.y / local.z);
        sq_residual += (reproj - pixel).norm_squared();
    }

    let radii: Vec<f64> = per_view_radii.iter().map(|(_, r)| *r).collect();
    let radius = estimate_radius_ls(&radii, weights)?;
    let radius_spread = radii.iter().fold(0.0f64, |m, r| m.max((r - radius).abs()));
    Ok(SphereModel {
        sphere: Sphere::world(center, radius),
        per_view_radii,
        radius_spread,
        triangulation_residual: (sq_residual / matched.len() as f64).sqrt(),
        scale_applied: None,
    })
}

/// Scale factor from spheres of known real radius, as pairs
/// `(real_radius, estimated_radius)`.
pub fn metric_scale(anchors: &[(f64, f64)]) -> Result<ScaleResult> {
    if anchors.is_empty() {
        return Err(Error::EmptyInput);
    }
    for &(real, est) in anchors {
        if !(real.is_finite() && real > 0.0 && est.is_finite() && est > 0.0) {
            return Err(Error::InvalidAnchor(format!(
                "radii must be positive (real {real}, estimated {est})"
            )));
        }
    }
    let s_r = if let [(real, est)] = anchors {
        real / est
    } else {
        let real2: f64 = anchors.iter().map(|(r, _)| r * r).sum();
        let est2: f64 = anchors.iter().map(|(_, e)| e * e).sum();
        (real2 / est2).sqrt()
    };
    let mse = anchors
        .iter()
        .map(|(r, e)| (r - s_r * e).powi(2))
        .sum::<f64>()
        / anchors.len() as f64;
    Ok(ScaleResult {
        s_r,
        residual_rmse: mse.sqrt(),
    })
}

/// Anything carrying lengths that a metric scale factor applies to.
pub trait Scalable {
    fn scaled(&self, s: f64) -> Self;
}

impl Scalable for Vector3<f64> {
    fn scaled(&self, s: f64) -> Self {
        self * s
    }
}

impl Scalable for Sphere {
    fn scaled(&self, s: f64) -> Self {
        Sphere {
            center: self.center * s,
            radius: self.radius * s,
            frame: self.frame.clone(),
        }
    }
}

impl Scalable for SphereModel {
    fn scaled(&self, s: f64) -> Self {
        SphereModel {
            sphere: self.sphere.scaled(s),
            per_view_radii: self
                .per_view_radii
                .iter()
                .map(|(id, r)| (id.clone(), r * s))
                .collect(),
            radius_spread: self.radius_spread * s,
            triangulation_residual: self.triangulation_residual,
            scale_applied: Some(self.scale_applied.unwrap_or(1.0) * s),
        }
    }
}

impl<T: Scalable> Scalable for Vec<T> {
    fn scaled(&self, s: f64) -> Self {
        self.iter().map(|x| x.scaled(s)).collect()
    }
}

pub fn apply_scale<T: Scalable>(value: &T, s_r: f64) -> T {
    debug_assert!(s_r > 0.0, "scale factor must be positive");
    value.scaled(s_r)
}
