use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector3};
use proptest::prelude::*;

use sphere_recon::camera::{CameraView, Ellipse, EllipseObservation, Intrinsics, Sphere};
use sphere_recon::correspondence::fundamental_from_views;
use sphere_recon::gate::{classify_spherical, default_ellipse_cov, tau, tau_jacobian};
use sphere_recon::io::{parse_ellipses, write_ellipses, NetworkFile, SphereOutputFile, SphereRecord};
use sphere_recon::network::{ImageNetwork, TiePoint};
use sphere_recon::projection::{center_from_single_view, fold_orientation, observe_sphere, project_sphere, radius_from_depth};
use sphere_recon::reconstruction::{apply_scale, metric_scale, reconstruct_sphere};

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (300.0..5000.0f64, 100.0..2000.0f64, 100.0..2000.0f64).prop_map(|(f, px, py)| Intrinsics::new(f, px, py))
}

/// Sphere in front of the camera, inside a generous field of view.
fn camera_sphere() -> impl Strategy<Value = (Vector3<f64>, f64)> {
    (1.0..50.0f64, -0.8..0.8f64, -0.8..0.8f64, 0.01..0.6f64)
        .prop_map(|(z, u, v, rr)| (Vector3::new(u * z, v * z, z), rr * z))
}

fn rig(n: usize, dist: f64, spread: f64) -> Vec<CameraView> {
    let k = Intrinsics::new(2000.0, 960.0, 540.0);
    (0..n)
        .map(|i| {
            let az = spread * (i as f64 - (n as f64 - 1.0) / 2.0);
            let eye = dist * Vector3::new(az.cos(), az.sin(), 0.6);
            CameraView::look_at(format!("v{i}"), k, eye, Vector3::zeros(), Vector3::z()).unwrap()
        })
        .collect()
}

fn central_difference(e: &Ellipse, k: &Intrinsics) -> [f64; 7] {
    let vars = [e.a_e, e.b_e, e.x_ce, e.y_ce, k.px, k.py, k.f];
    let eval = |v: &[f64; 7]| {
        tau(
            &Ellipse { a_e: v[0], b_e: v[1], x_ce: v[2], y_ce: v[3], theta: 0.0 },
            &Intrinsics::new(v[6], v[4], v[5]),
        )
    };
    let mut out = [0.0; 7];
    for i in 0..7 {
        let h = 1e-5 * vars[i].abs().max(1.0);
        let (mut p, mut m) = (vars, vars);
        p[i] += h;
        m[i] -= h;
        out[i] = (eval(&p) - eval(&m)) / (2.0 * h);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn single_view_round_trip(k in intrinsics(), (c, r) in camera_sphere()) {
        let e = project_sphere(&c, r, &k).unwrap();
        prop_assert!(e.a_e >= e.b_e && e.b_e > 0.0);
        prop_assert!((-PI / 2.0..PI / 2.0).contains(&e.theta));
        let back = center_from_single_view(&e, &k, r);
        prop_assert!((back - c).norm() <= 1e-9 * c.norm());
        let r_back = radius_from_depth(c.z, e.b_e, k.f);
        prop_assert!((r_back - r).abs() <= 1e-9 * r);
    }

    #[test]
    fn jacobian_matches_finite_differences(k in intrinsics(), (c, r) in camera_sphere(), infl in 0.9..1.3f64) {
        let mut e = project_sphere(&c, r, &k).unwrap();
        e.a_e = (e.a_e * infl).max(e.b_e);
        let j = tau_jacobian(&e, &k);
        let fd = central_difference(&e, &k);
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..7 {
            prop_assert!((j[i] - fd[i]).abs() <= 1e-6 * fd[i].abs().max(1e-6 * scale), "component {i}: {} vs {}", j[i], fd[i]);
        }
    }

    #[test]
    fn exact_images_pass_the_gate(k in intrinsics(), (c, r) in camera_sphere(), sigma in 0.05..2.0f64) {
        let e = project_sphere(&c, r, &k).unwrap();
        let report = classify_spherical(&e, &k, &default_ellipse_cov(sigma), &nalgebra::Matrix3::zeros(), 2.0).unwrap();
        prop_assert!(report.accepted);
        prop_assert!(report.tau.abs() < 1e-9);
    }

    #[test]
    fn tau_grows_with_the_major_axis(k in intrinsics(), (c, r) in camera_sphere(), s1 in 1.0..1.5f64, ds in 0.001..0.5f64) {
        let e = project_sphere(&c, r, &k).unwrap();
        let mut e1 = e;
        e1.a_e *= s1;
        let mut e2 = e;
        e2.a_e *= s1 + ds;
        prop_assert!(tau(&e2, &k) > tau(&e1, &k));
    }

    #[test]
    fn orientation_folds_into_half_open_range(t in -20.0..20.0f64) {
        let f = fold_orientation(t);
        prop_assert!((-PI / 2.0..PI / 2.0).contains(&f));
        let d = (f - t).rem_euclid(PI);
        prop_assert!(d.min(PI - d) < 1e-9);
    }

    #[test]
    fn reconstruction_is_view_order_invariant(n in 2usize..6, x in -0.3..0.3f64, y in -0.3..0.3f64, r in 0.02..0.2f64) {
        let views = rig(n, 3.0, 0.5);
        let sphere = Sphere::world(Vector3::new(x, y, 0.1), r);
        let obs: Vec<EllipseObservation> = views.iter().map(|v| observe_sphere(&sphere, v, "e").unwrap()).collect();
        let fwd: Vec<_> = views.iter().zip(&obs).collect();
        let rev: Vec<_> = views.iter().zip(&obs).rev().collect();
        let a = reconstruct_sphere(&fwd, None).unwrap();
        let b = reconstruct_sphere(&rev, None).unwrap();
        prop_assert!((a.sphere.center - b.sphere.center).norm() < 1e-10);
        prop_assert!((a.sphere.radius - b.sphere.radius).abs() < 1e-12);
        prop_assert!((a.sphere.center - sphere.center).norm() < 1e-9);
    }

    #[test]
    fn reconstruction_follows_world_similarity(s in 0.1..10.0f64, x in -0.3..0.3f64, y in -0.3..0.3f64, r in 0.02..0.2f64) {
        let views = rig(3, 3.0, 0.6);
        let sphere = Sphere::world(Vector3::new(x, y, 0.1), r);
        let obs: Vec<_> = views.iter().map(|v| observe_sphere(&sphere, v, "e").unwrap()).collect();
        let scaled_views: Vec<CameraView> = views
            .iter()
            .map(|v| CameraView::new(v.image_id.clone(), v.intrinsics, v.rot, v.t * s, None).unwrap())
            .collect();
        let base = reconstruct_sphere(&views.iter().zip(&obs).collect::<Vec<_>>(), None).unwrap();
        let scaled = reconstruct_sphere(&scaled_views.iter().zip(&obs).collect::<Vec<_>>(), None).unwrap();
        prop_assert!((scaled.sphere.center - base.sphere.center * s).norm() < 1e-9 * s);
        prop_assert!((scaled.sphere.radius - base.sphere.radius * s).abs() < 1e-9 * s);
        let rescaled = apply_scale(&base, s);
        prop_assert!((rescaled.sphere.center - scaled.sphere.center).norm() < 1e-9 * s);
    }

    #[test]
    fn consistent_anchors_leave_no_residual(s in 0.01..100.0f64, radii in prop::collection::vec(0.01..1.0f64, 1..6)) {
        let anchors: Vec<(f64, f64)> = radii.iter().map(|&r| (r * s, r)).collect();
        let res = metric_scale(&anchors).unwrap();
        prop_assert!((res.s_r - s).abs() <= 1e-12 * s);
        prop_assert!(res.residual_rmse <= 1e-12 * s);
    }

    #[test]
    fn epipolar_constraint_holds(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -0.5..0.5f64, spread in 0.2..1.2f64) {
        let views = rig(2, 4.0, spread);
        let p = Vector3::new(x, y, z);
        let f = fundamental_from_views(&views[0], &views[1]).unwrap();
        let (a, b) = (views[0].project(&p).unwrap(), views[1].project(&p).unwrap());
        let lhs = b.push(1.0).transpose() * f * a.push(1.0);
        let line = f * a.push(1.0);
        prop_assert!(lhs[(0, 0)].abs() / line.xy().norm() < 1e-7);
    }

    #[test]
    fn ellipse_csv_round_trips(
        rows in prop::collection::vec((0.5..500.0f64, 1.0..2.0f64, -1e4..1e4f64, -1e4..1e4f64, -1.5707..1.5707f64, any::<bool>(), 0.0..4.0f64), 0..20)
    ) {
        let obs: Vec<EllipseObservation> = rows
            .iter()
            .enumerate()
            .map(|(n, &(b, ratio, x, y, theta, with_cov, v))| EllipseObservation {
                image_id: format!("img,{}", n % 3),
                ellipse_id: format!("e{n}"),
                ellipse: Ellipse { x_ce: x, y_ce: y, a_e: b * ratio, b_e: b, theta },
                cov: with_cov.then(|| Matrix4::identity() * v + Matrix4::from_element(v / 8.0)),
            })
            .collect();
        let text = write_ellipses(&obs);
        prop_assert_eq!(parse_ellipses(&text).unwrap(), obs);
    }

    #[test]
    fn network_and_sphere_files_round_trip(n in 2usize..6, spread in 0.1..1.0f64, r in 0.01..1.0f64) {
        let views = rig(n, 3.0, spread);
        let tie_points = vec![TiePoint {
            xyz: Vector3::new(0.1, -0.2, 1.0 / 3.0),
            visible_in: views.iter().map(|v| v.image_id.clone()).collect(),
        }];
        let net = ImageNetwork::new(views.clone(), tie_points).unwrap();
        let file = NetworkFile::from_network(&net, true);
        let back = NetworkFile::parse(&file.to_json()).unwrap().to_network().unwrap();
        prop_assert_eq!(back, net);

        let sphere = Sphere::world(Vector3::new(0.01, 0.02, 0.1), r);
        let obs: Vec<_> = views.iter().map(|v| observe_sphere(&sphere, v, "e").unwrap()).collect();
        let model = reconstruct_sphere(&views.iter().zip(&obs).collect::<Vec<_>>(), None).unwrap();
        let out = SphereOutputFile {
            pair: None,
            spheres: vec![SphereRecord::from_model("sphere-000", &model, vec![], vec![])],
        };
        prop_assert_eq!(SphereOutputFile::parse(&out.to_json()).unwrap(), out);
    }
}
