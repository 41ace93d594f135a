use std::collections::BTreeSet;

use nalgebra::Vector3;

use sphere_recon::camera::CameraView;
use sphere_recon::correspondence::match_ellipses;
use sphere_recon::io::{SphereOutputFile, SphereRecord};
use sphere_recon::network::{best_pair, ImageNetwork, TiePoint};
use sphere_recon::pipeline::*;
use sphere_recon::reconstruction::SphereModel;
use sphere_recon::synth::*;
use sphere_recon::{Error, Sphere};

#[test]
fn exact_scene_recovers_all_nine_spheres() {
    let scene = generate_scene(&SceneConfig::default(), 21).unwrap();
    let (_, file) = run_reconstruction(&scene.network(), &scene.observations, &ReconstructOptions::default()).unwrap();
    assert_eq!(file.spheres.len(), 9);
    let mut seen = BTreeSet::new();
    for rec in &file.spheres {
        let r = &rec.ellipse_ids[0];
        let sid = scene.truth_of(&r.image_id, &r.ellipse_id).expect("spherical ellipse");
        let other = &rec.ellipse_ids[1];
        assert_eq!(scene.truth_of(&other.image_id, &other.ellipse_id), Some(sid));
        seen.insert(sid);
        let e = p_rmse(&rec.to_model(), scene.sphere(sid).unwrap());
        assert!(e.center < 0.1 && e.radius < 0.1);
        assert_eq!(rec.gate_reports.len(), 2);
    }
    assert_eq!(seen.len(), 9);
}

#[test]
fn pipeline_equals_its_composed_stages() {
    let scene = perturb_observations(&generate_scene(&SceneConfig::default(), 22).unwrap(), 0.5, 22);
    let net = scene.network();
    let opts = ReconstructOptions::default();
    let (_, file) = run_reconstruction(&net, &scene.observations, &opts).unwrap();

    let gated = gate_ellipses(&net.views, &scene.observations, &opts.gate).unwrap();
    let pair = best_pair(&net, opts.min_angle).unwrap();
    let accepted = |id: &str| -> Vec<_> {
        gated
            .iter()
            .filter(|g| g.report.accepted && g.obs.image_id == id)
            .map(|g| g.obs.clone())
            .collect()
    };
    let outcome = match_ellipses(
        net.view(&pair.i).unwrap(),
        &accepted(&pair.i),
        net.view(&pair.j).unwrap(),
        &accepted(&pair.j),
        opts.tol_px,
    )
    .unwrap();
    let mut composed: Vec<(String, SphereModel)> =
        outcome.matches.iter().map(|m| (m.ellipse_l.clone(), m.sphere.clone())).collect();
    composed.sort_by(|a, b| a.0.cmp(&b.0));

    let pr = file.pair.as_ref().unwrap();
    assert_eq!((pr.i.as_str(), pr.j.as_str()), (pair.i.as_str(), pair.j.as_str()));
    assert_eq!(file.spheres.len(), composed.len());
    for (rec, (eid, model)) in file.spheres.iter().zip(&composed) {
        assert_eq!(&rec.ellipse_ids[0].ellipse_id, eid);
        assert_eq!(rec.to_model(), *model);
    }
}

/// Straightforward enumeration of the pair score, written independently of
/// the library's single-sweep implementation.
fn exhaustive_best(net: &ImageNetwork, min_angle: f64) -> (String, String, f64) {
    let ids: Vec<&str> = {
        let mut v: Vec<&str> = net.views.iter().map(|v| v.image_id.as_str()).collect();
        v.sort();
        v
    };
    let count = |id: &str| net.tie_points.iter().filter(|t| t.visible_in.contains(id)).count() as f64;
    let max_count = ids.iter().map(|i| count(i)).fold(0.0, f64::max);
    let ov = |id: &str| count(id) / max_count;
    let mut alphas = Vec::new();
    for (a, i) in ids.iter().enumerate() {
        for j in &ids[a + 1..] {
            let (ci, cj) = (net.view(i).unwrap().center(), net.view(j).unwrap().center());
            let shared: Vec<&TiePoint> = net
                .tie_points
                .iter()
                .filter(|t| t.visible_in.contains(*i) && t.visible_in.contains(*j))
                .collect();
            if shared.is_empty() {
                continue;
            }
            let mean = shared
                .iter()
                .map(|t| {
                    let (u, v) = ((ci - t.xyz).normalize(), (cj - t.xyz).normalize());
                    u.dot(&v).clamp(-1.0, 1.0).acos()
                })
                .sum::<f64>()
                / shared.len() as f64;
            alphas.push((i.to_string(), j.to_string(), mean));
        }
    }
    let alpha_max = alphas.iter().map(|a| a.2).fold(0.0, f64::max);
    let ov_max = ids.iter().map(|i| ov(i)).fold(0.0, f64::max);
    let mut best: Option<(String, String, f64)> = None;
    for (i, j, alpha) in alphas {
        if alpha <= min_angle {
            continue;
        }
        let score = alpha / alpha_max + (ov(&i) + ov(&j)) / (2.0 * ov_max);
        if best.as_ref().is_none_or(|b| score > b.2 + 1e-12) {
            best = Some((i, j, score));
        }
    }
    best.unwrap()
}

#[test]
fn ring_pair_selection_matches_enumeration() {
    let cfg = SceneConfig {
        placement: Placement::Ring { radius: 2.5, height: 1.5 },
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 23).unwrap();
    let net = scene.network();
    let got = best_pair(&net, 20f64.to_radians()).unwrap();
    let (i, j, score) = exhaustive_best(&net, 20f64.to_radians());
    assert_eq!((got.i.as_str(), got.j.as_str()), (i.as_str(), j.as_str()));
    assert!((got.theta_ij - score).abs() < 1e-9);

    let hemi = generate_scene(&SceneConfig::default(), 24).unwrap().network();
    let got = best_pair(&hemi, 20f64.to_radians()).unwrap();
    let (i, j, _) = exhaustive_best(&hemi, 20f64.to_radians());
    assert_eq!((got.i, got.j), (i, j));
}

fn narrow_rig() -> ImageNetwork {
    let k = sphere_recon::Intrinsics::new(1000.0, 500.0, 500.0);
    let views: Vec<CameraView> = (0..3)
        .map(|i| {
            let eye = Vector3::new(0.1 * i as f64, 0.0, 3.0);
            CameraView::look_at(format!("c{i}"), k, eye, Vector3::new(0.1 * i as f64, 0.0, 0.0), Vector3::y()).unwrap()
        })
        .collect();
    let tie_points = (0..20)
        .map(|n| TiePoint {
            xyz: Vector3::new(-0.2 + 0.02 * n as f64, 0.1, 0.0),
            visible_in: views.iter().map(|v| v.image_id.clone()).collect(),
        })
        .collect();
    ImageNetwork::new(views, tie_points).unwrap()
}

#[test]
fn low_angle_rig_has_no_admissible_pair_unless_forced() {
    let net = narrow_rig();
    let err = select_pair(&net, &[], &PairChoice::Auto, 20f64.to_radians(), 3.0).unwrap_err();
    match err {
        Error::NoAdmissiblePair { max_angle_deg } => assert!(max_angle_deg > 0.0 && max_angle_deg < 20.0),
        other => panic!("{other}"),
    }
    assert_eq!(err_code(&net), 4);
    let forced = select_pair(&net, &[], &PairChoice::Fixed("c0".into(), "c2".into()), 20f64.to_radians(), 3.0).unwrap();
    assert_eq!((forced.i.as_str(), forced.j.as_str()), ("c0", "c2"));
    assert!(forced.warnings.iter().any(|w| w.contains("below")));
}

fn err_code(net: &ImageNetwork) -> i32 {
    select_pair(net, &[], &PairChoice::Auto, 20f64.to_radians(), 3.0)
        .unwrap_err()
        .exit_code()
}

#[test]
fn missing_tie_points_fall_back_with_a_warning() {
    let scene = generate_scene(&SceneConfig { n_cameras: 6, ..SceneConfig::default() }, 25).unwrap();
    let mut net = scene.network();
    net.tie_points.clear();
    let sel = select_pair(&net, &scene.observations, &PairChoice::Auto, 20f64.to_radians(), 3.0).unwrap();
    assert!(!sel.warnings.is_empty());
    assert!(sel.score.unwrap().alpha_ij > 20f64.to_radians());
    let (_, file) = run_reconstruction(&net, &scene.observations, &ReconstructOptions::default()).unwrap();
    assert_eq!(file.spheres.len(), 9);
}

#[test]
fn stage_errors_name_their_stage() {
    let scene = generate_scene(&SceneConfig { n_cameras: 4, ..SceneConfig::default() }, 26).unwrap();
    let mut obs = scene.observations.clone();
    obs[0].image_id = "nowhere".into();
    let err = run_reconstruction(&scene.network(), &obs, &ReconstructOptions::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Gate);
    assert!(err.to_string().starts_with("gate stage"));
    let err = run_reconstruction(&narrow_rig(), &[], &ReconstructOptions::default()).unwrap_err();
    assert_eq!(err.stage, Stage::SelectPair);
}

fn file_with(radii: &[(&str, f64)]) -> SphereOutputFile {
    SphereOutputFile {
        pair: None,
        spheres: radii
            .iter()
            .enumerate()
            .map(|(n, (id, r))| {
                let model = SphereModel {
                    sphere: Sphere::world(Vector3::new(n as f64, 1.0, -2.0), *r),
                    per_view_radii: vec![("a".into(), *r)],
                    radius_spread: 0.0,
                    triangulation_residual: 0.25,
                    scale_applied: None,
                };
                SphereRecord::from_model(*id, &model, vec![], vec![])
            })
            .collect(),
    }
}

#[test]
fn scaling_examples() {
    let file = file_with(&[("s0", 0.5), ("s1", 0.25)]);
    let (scale, out) = scale_sphere_file(&file, &[("s0".into(), 1.0)]).unwrap();
    assert_eq!(scale.s_r, 2.0);
    assert_eq!(out.spheres[1].center, [2.0, 2.0, -4.0]);
    assert_eq!(out.spheres[1].radius, 0.5);
    assert_eq!(out.spheres[1].scale_applied, Some(2.0));
    assert_eq!(out.spheres[1].triangulation_residual, 0.25);

    let (scale, _) = scale_sphere_file(&file, &[("s0".into(), 1.0), ("s1".into(), 0.5)]).unwrap();
    assert_eq!(scale.residual_rmse, 0.0);

    let file = file_with(&[("s0", 1.0), ("s1", 2.0)]);
    let (scale, _) = scale_sphere_file(&file, &[("s0".into(), 2.0), ("s1".into(), 2.0)]).unwrap();
    assert!((scale.s_r - 1.264911).abs() < 1e-6);

    assert!(matches!(
        scale_sphere_file(&file, &[("nope".into(), 1.0)]),
        Err(Error::UnknownAnchor(id)) if id == "nope"
    ));
}
