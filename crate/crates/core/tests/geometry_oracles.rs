//! Closed forms checked against independent constructions: the sphere's
//! silhouette fitted as a general conic, and triangulation against a
//! brute-force least-squares ray intersection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphere_recon::camera::{CameraView, Intrinsics};
use sphere_recon::projection::{project_sphere, projected_sphere_center};
use sphere_recon::reconstruction::triangulate_center;

struct Conic {
    center: Vector2<f64>,
    a: f64,
    b: f64,
    theta: f64,
}

/// Rim of the tangent cone from the camera center to the sphere, projected
/// into the image.
fn silhouette(c: &Vector3<f64>, r: f64, k: &Intrinsics, n: usize) -> Vec<Vector2<f64>> {
    let d = c.norm();
    let axis = c / d;
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    let dist = (d * d - r * r) / d;
    let rho = r * (d * d - r * r).sqrt() / d;
    (0..n)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / n as f64;
            let p = dist * axis + rho * (phi.cos() * u + phi.sin() * v);
            Vector2::new(k.px + k.f * p.x / p.z, k.py + k.f * p.y / p.z)
        })
        .collect()
}

fn fit_conic(points: &[Vector2<f64>]) -> Conic {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let scale = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    let rows: Vec<f64> = points
        .iter()
        .flat_map(|p| {
            let q = (p - mean) / scale;
            [q.x * q.x, q.x * q.y, q.y * q.y, q.x, q.y, 1.0]
        })
        .collect();
    let m = DMatrix::from_row_slice(points.len(), 6, &rows);
    let svd = (m.transpose() * &m).symmetric_eigen();
    let (imin, _) = svd
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let mut w = svd.eigenvectors.column(imin).into_owned();
    if w[0] + w[2] < 0.0 {
        w = -w;
    }
    let (a, b, c, d, e, f) = (w[0], w[1], w[2], w[3], w[4], w[5]);
    let quad = Matrix2::new(a, b / 2.0, b / 2.0, c);
    let center = -quad.try_inverse().unwrap() * Vector2::new(d / 2.0, e / 2.0);
    let f0 = f + (d * center.x + e * center.y) / 2.0;
    let eig = quad.symmetric_eigen();
    let (i_major, i_minor) = if eig.eigenvalues[0] < eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let major = (-f0 / eig.eigenvalues[i_major]).sqrt();
    let minor = (-f0 / eig.eigenvalues[i_minor]).sqrt();
    let dir = eig.eigenvectors.column(i_major);
    Conic {
        center: mean + center * scale,
        a: major * scale,
        b: minor * scale,
        theta: dir.y.atan2(dir.x),
    }
}

fn same_axis(t1: f64, t2: f64) -> f64 {
    let d = (t1 - t2).rem_euclid(PI);
    d.min(PI - d)
}

#[test]
fn projected_ellipse_matches_fitted_silhouette() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = Intrinsics::new(1200.0, 640.0, 480.0);
    for _ in 0..200 {
        let z: f64 = rng.random_range(2.0..20.0);
        let c = Vector3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.5..0.5) * z, z);
        let r = rng.random_range(0.05..0.5) * z;
        let e = project_sphere(&c, r, &k).unwrap();
        let fit = fit_conic(&silhouette(&c, r, &k, 64));
        let tol = 1e-7 * e.a_e.max(1.0);
        assert!((fit.center - e.center()).norm() < tol * 10.0, "center {:?} vs {:?}", fit.center, e.center());
        assert!((fit.a - e.a_e).abs() < tol * 10.0, "a {} vs {}", fit.a, e.a_e);
        assert!((fit.b - e.b_e).abs() < tol * 10.0, "b {} vs {}", fit.b, e.b_e);
        if e.a_e - e.b_e > 1e-6 * e.a_e {
            assert!(same_axis(fit.theta, e.theta) < 1e-6, "theta {} vs {}", fit.theta, e.theta);
        }
    }
}

#[test]
fn corrected_center_is_the_image_of_the_sphere_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = Intrinsics::new(900.0, 500.0, 400.0);
    for _ in 0..200 {
        let z = rng.random_range(1.5..15.0);
        let c = Vector3::new(rng.random_range(-0.7..0.7) * z, rng.random_range(-0.7..0.7) * z, z);
        let r = rng.random_range(0.05..0.6);
        let e = project_sphere(&c, r, &k).unwrap();
        let pinhole = Vector2::new(k.px + k.f * c.x / c.z, k.py + k.f * c.y / c.z);
        assert!((projected_sphere_center(&e, &k) - pinhole).norm() < 1e-8 * k.f);
    }
}

/// Point minimising the summed squared distance to the viewing rays.
fn ray_least_squares(rays: &[(Vector3<f64>, Vector3<f64>)]) -> Vector3<f64> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (origin, dir) in rays {
        let d = dir.normalize();
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * origin;
    }
    a.try_inverse().unwrap() * b
}

#[test]
fn triangulation_agrees_with_ray_intersection_on_exact_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let k = Intrinsics::new(1500.0, 960.0, 540.0);
    for _ in 0..100 {
        let target = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = rng.random_range(2..6);
        let views: Vec<CameraView> = (0..n)
            .map(|i| {
                let az = rng.random_range(0.0..2.0 * PI);
                let eye = target + 5.0 * Vector3::new(az.cos(), az.sin(), rng.random_range(0.2..1.0));
                CameraView::look_at(format!("v{i}"), k, eye, target, Vector3::z()).unwrap()
            })
            .collect();
        if n == 2 && (views[0].center() - views[1].center()).norm() < 1.0 {
            continue;
        }
        let point = target + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0);
        let obs: Vec<_> = views.iter().map(|v| (v, v.project(&point).unwrap())).collect();
        let dlt = triangulate_center(&obs).unwrap();
        let rays: Vec<_> = views
            .iter()
            .map(|v| (v.center(), v.camera_to_world(&v.world_to_camera(&point)) - v.center()))
            .collect();
        let oracle = ray_least_squares(&rays);
        assert!((dlt - oracle).norm() < 1e-9, "{dlt:?} vs {oracle:?}");
        assert!((dlt - point).norm() < 1e-9);
    }
}
