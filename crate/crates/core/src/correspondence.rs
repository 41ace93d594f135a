//! Matching spherical ellipses between two images.
//!
//! Candidates are first filtered by the epipolar constraint on corrected
//! (sphere-center) image points, then each surviving pair is verified by
//! reconstructing the hypothesised sphere and reprojecting it into both
//! images.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::{CameraView, Ellipse, EllipseObservation};
use crate::error::{Error, Result};
use crate::projection::{project_sphere, projected_sphere_center};
use crate::reconstruction::{reconstruct_sphere, SphereModel};

pub const DEFAULT_TOL_PX: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchCandidate {
    pub ellipse_l: String,
    pub ellipse_k: String,
    /// Distance of the corrected center in image k from the epipolar line of
    /// the corrected center in image l.
    pub epipolar_distance: f64,
    /// Sum of the reprojection distances in both images.
    pub reprojection_distance: f64,
    pub sphere: SphereModel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutcome {
    pub matches: Vec<MatchCandidate>,
    pub unmatched_l: Vec<String>,
    pub unmatched_k: Vec<String>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix with `x_kᵀ F x_l = 0` for corresponding pixels.
pub fn fundamental_from_views(view_l: &CameraView, view_k: &CameraView) -> Result<Matrix3<f64>> {
    let (cl, ck) = (view_l.center(), view_k.center());
    let scale = cl.norm().max(ck.norm()).max(1.0);
    if (cl - ck).norm() <= 1e-12 * scale {
        return Err(Error::DegenerateGeometry(format!(
            "views `{}` and `{}` share a projection center",
            view_l.image_id, view_k.image_id
        )));
    }
    let rel_rot = view_k.rot * view_l.rot.transpose();
    let rel_t = view_k.t - rel_rot * view_l.t;
    let essential = skew(&rel_t) * rel_rot;
    let kl_inv = view_l
        .intrinsics
        .calibration_matrix()
        .try_inverse()
        .expect("calibration matrix with f > 0 is invertible");
    let kk_inv = view_k
        .intrinsics
        .calibration_matrix()
        .try_inverse()
        .expect("calibration matrix with f > 0 is invertible");
    Ok(kk_inv.transpose() * essential * kl_inv)
}

/// Pixel distance of `x_k` from the epipolar line `F x_l`.
pub fn epipolar_distance(f: &Matrix3<f64>, x_l: &Vector2<f64>, x_k: &Vector2<f64>) -> f64 {
    let line = f * Vector3::new(x_l.x, x_l.y, 1.0);
    let norm = line.x.hypot(line.y);
    if norm == 0.0 {
        return f64::INFINITY;
    }
    (line.x * x_k.x + line.y * x_k.y + line.z).abs() / norm
}

/// Center standard deviation implied by an ellipse covariance, if any.
pub fn center_sigma(obs: &EllipseObservation) -> f64 {
    obs.cov
        .map(|c| c[(2, 2)].max(c[(3, 3)]).max(0.0).sqrt())
        .unwrap_or(0.0)
}

/// Indices (with distances) of the candidates whose corrected center lies
/// within `tol` pixels of the epipolar line of `e_l`'s corrected center.
pub fn epipolar_candidates(
    e_l: &EllipseObservation,
    view_l: &CameraView,
    candidates_k: &[EllipseObservation],
    view_k: &CameraView,
    f: &Matrix3<f64>,
    tol: f64,
) -> Vec<(usize, f64)> {
    let x_l = projected_sphere_center(&e_l.ellipse, &view_l.intrinsics);
    candidates_k
        .iter()
        .enumerate()
        .filter_map(|(n, e_k)| {
            let x_k = projected_sphere_center(&e_k.ellipse, &view_k.intrinsics);
            let d = epipolar_distance(f, &x_l, &x_k);
            (d <= tol).then_some((n, d))
        })
        .collect()
}

/// Euclidean distance over (x_ce, y_ce, a_e, b_e); orientation is ignored.
pub fn reprojection_distance(observed: &Ellipse, predicted: &Ellipse) -> f64 {
    let d = [
        observed.x_ce - predicted.x_ce,
        observed.y_ce - predicted.y_ce,
        observed.a_e - predicted.a_e,
        observed.b_e - predicted.b_e,
    ];
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Builds the sphere hypothesis for one candidate pair and scores it by the
/// reprojection distance summed over every participating view.
pub fn verify_hypothesis(matched: &[(&CameraView, &EllipseObservation)]) -> Result<(SphereModel, f64)> {
    let model = reconstruct_sphere(matched, None)?;
    let mut total = 0.0;
    for (view, obs) in matched {
        let local = view.world_to_camera(&model.sphere.center);
        let predicted = project_sphere(&local, model.sphere.radius, &view.intrinsics)?;
        total += reprojection_distance(&obs.ellipse, &predicted);
    }
    Ok((model, total))
}

/// Matches ellipses between two images. Every epipolar-admissible pair is
/// verified, then pairs are accepted greedily by ascending total
/// reprojection distance so each ellipse is used at most once.
///
/// The epipolar tolerance for a pair is `max(tol, 2 sigma_center)` using the
/// larger center standard deviation of the two ellipses.
pub fn match_ellipses(
    view_l: &CameraView,
    ellipses_l: &[EllipseObservation],
    view_k: &CameraView,
    ellipses_k: &[EllipseObservation],
    tol: f64,
) -> Result<MatchOutcome> {
    let f = fundamental_from_views(view_l, view_k)?;
    let corrected_k: Vec<Vector2<f64>> = ellipses_k
        .iter()
        .map(|e| projected_sphere_center(&e.ellipse, &view_k.intrinsics))
        .collect();

    let mut scored: Vec<(f64, usize, usize, MatchCandidate)> = Vec::new();
    for (il, e_l) in ellipses_l.iter().enumerate() {
        let x_l = projected_sphere_center(&e_l.ellipse, &view_l.intrinsics);
        for (ik, e_k) in ellipses_k.iter().enumerate() {
            let pair_tol = tol.max(2.0 * center_sigma(e_l).max(center_sigma(e_k)));
            let d_epi = epipolar_distance(&f, &x_l, &corrected_k[ik]);
            if d_epi > pair_tol {
                continue;
            }
            let Ok((sphere, total)) = verify_hypothesis(&[(view_l, e_l), (view_k, e_k)]) else {
                continue;
            };
            if !total.is_finite() {
                continue;
            }
            scored.push((
                total,
                il,
                ik,
                MatchCandidate {
                    ellipse_l: e_l.ellipse_id.clone(),
                    ellipse_k: e_k.ellipse_id.clone(),
                    epipolar_distance: d_epi,
                    reprojection_distance: total,
                    sphere,
                },
            ));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_l = vec![false; ellipses_l.len()];
    let mut used_k = vec![false; ellipses_k.len()];
    let mut matches = Vec::new();
    for (_, il, ik, cand) in scored {
        if used_l[il] || used_k[ik] {
            continue;
        }
        used_l[il] = true;
        used_k[ik] = true;
        matches.push(cand);
    }
    let unmatched = |obs: &[EllipseObservation], used: &[bool]| {
        obs.iter()
            .zip(used)
            .filter(|(_, u)| !**u)
            .map(|(o, _)| o.ellipse_id.clone())
            .collect()
    };
    Ok(MatchOutcome {
        unmatched_l: unmatched(ellipses_l, &used_l),
        unmatched_k: unmatched(ellipses_k, &used_k),
        matches,
    })
}
