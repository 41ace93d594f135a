//! Synthetic camera networks observing spheres, a noise model on ellipse
//! parameters, and the Monte-Carlo view-count protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Matrix4, Vector2, Vector3};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Ellipse, EllipseObservation, Intrinsics, Sphere};
use crate::correspondence::{center_sigma, match_ellipses, reprojection_distance, verify_hypothesis};
use crate::error::{Error, Result};
use crate::network::{best_pair, ImageNetwork, TiePoint};
use crate::pipeline::{gate_ellipses, run_reconstruction, GateOptions, ReconstructOptions};
use crate::projection::{observe_sphere, project_sphere, projected_sphere_center, DEPTH_MARGIN};
use crate::reconstruction::SphereModel;

const SCENE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const SUBSET_STREAM: u64 = 1 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    /// Evenly spaced on a horizontal circle around the target.
    Ring { radius: f64, height: f64 },
    /// Evenly spaced over `span_rad` of a horizontal circle.
    Arc { radius: f64, height: f64, span_rad: f64 },
    /// Random azimuth, elevation and distance from the target.
    Hemisphere {
        min_distance: f64,
        max_distance: f64,
        min_elevation_rad: f64,
        max_elevation_rad: f64,
    },
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Hemisphere {
            min_distance: 1.2,
            max_distance: 4.0,
            min_elevation_rad: 25f64.to_radians(),
            max_elevation_rad: 75f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_cameras: usize,
    pub placement: Placement,
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub f: f64,
    pub px: f64,
    pub py: f64,
    pub width: f64,
    pub height: f64,
    pub spheres: Vec<SphereSpec>,
    pub clutter_per_image: usize,
    /// Factor applied to the major axis a sphere would have at the clutter
    /// location.
    pub clutter_inflation: f64,
    pub n_tie_points: usize,
    /// Half-width of the square board carrying the tie points.
    pub tie_extent: f64,
    /// Each tie point is detectable up to a distance drawn from this range.
    pub tie_range: [f64; 2],
    /// Per-parameter ellipse noise in pixels.
    pub sigma_px: f64,
    pub seed: u64,
}

/// Nine spheres on a 3×3 grid resting on the z = 0 plane.
pub fn laboratory_spheres() -> Vec<SphereSpec> {
    let radii = [0.05, 0.04, 0.06];
    let mut out = Vec::with_capacity(9);
    for (n, (iy, ix)) in (-1..=1).flat_map(|y| (-1..=1).map(move |x| (y, x))).enumerate() {
        let r = radii[n % 3];
        out.push(SphereSpec {
            center: [0.25 * ix as f64, 0.25 * iy as f64, r],
            radius: r,
        });
    }
    out
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_cameras: 30,
            placement: Placement::default(),
            target: [0.0, 0.0, 0.0],
            up: [0.0, 0.0, 1.0],
            f: 3000.0,
            px: 1920.0,
            py: 1080.0,
            width: 3840.0,
            height: 2160.0,
            spheres: laboratory_spheres(),
            clutter_per_image: 3,
            clutter_inflation: 1.2,
            n_tie_points: 5000,
            tie_extent: 0.6,
            tie_range: [1.5, 4.5],
            sigma_px: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub views: Vec<CameraView>,
    pub spheres: Vec<(String, Sphere)>,
    pub observations: Vec<EllipseObservation>,
    /// Ground-truth sphere id of every spherical observation, keyed by
    /// `(image_id, ellipse_id)`. Clutter is absent.
    pub truth: BTreeMap<(String, String), String>,
    pub tie_points: Vec<TiePoint>,
}

impl Scene {
    pub fn network(&self) -> ImageNetwork {
        ImageNetwork {
            views: self.views.clone(),
            tie_points: self.tie_points.clone(),
        }
    }

    pub fn sphere(&self, id: &str) -> Option<&Sphere> {
        self.spheres.iter().find(|(s, _)| s == id).map(|(_, s)| s)
    }

    pub fn truth_of(&self, image_id: &str, ellipse_id: &str) -> Option<&str> {
        self.truth
            .get(&(image_id.to_string(), ellipse_id.to_string()))
            .map(String::as_str)
    }
}

fn camera_positions(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let target = Vector3::from(cfg.target);
    let n = cfg.n_cameras;
    (0..n)
        .map(|i| match cfg.placement {
            Placement::Ring { radius, height } => {
                let az = 2.0 * PI * i as f64 / n as f64;
                target + Vector3::new(radius * az.cos(), radius * az.sin(), height)
            }
            Placement::Arc { radius, height, span_rad } => {
                let az = if n > 1 {
                    -span_rad / 2.0 + span_rad * i as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                target + Vector3::new(radius * az.cos(), radius * az.sin(), height)
            }
            Placement::Hemisphere {
                min_distance,
                max_distance,
                min_elevation_rad,
                max_elevation_rad,
            } => {
                let az = rng.random_range(0.0..2.0 * PI);
                let el = rng.random_range(min_elevation_rad..=max_elevation_rad);
                let d = rng.random_range(min_distance..=max_distance);
                target + d * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
            }
        })
        .collect()
}

fn validate_config(cfg: &SceneConfig) -> Result<()> {
    let bad = |m: &str| Err(Error::ConfigInfeasible(m.to_string()));
    if cfg.n_cameras < 2 {
        return bad("at least two cameras are required");
    }
    if !(cfg.f > 0.0 && cfg.width > 0.0 && cfg.height > 0.0) {
        return bad("focal length and image size must be positive");
    }
    if cfg.spheres.iter().any(|s| !(s.radius > 0.0) || s.center.iter().any(|c| !c.is_finite())) {
        return bad("sphere radii must be positive and centers finite");
    }
    if !(cfg.clutter_inflation > 0.0) {
        return bad("clutter inflation must be positive");
    }
    if !(cfg.sigma_px >= 0.0) {
        return bad("noise must be non-negative");
    }
    if !(cfg.tie_range[0] <= cfg.tie_range[1] && cfg.tie_extent >= 0.0) {
        return bad("tie point range is empty");
    }
    if let Placement::Hemisphere {
        min_distance,
        max_distance,
        min_elevation_rad,
        max_elevation_rad,
    } = cfg.placement
    {
        if !(0.0 < min_distance && min_distance <= max_distance && min_elevation_rad <= max_elevation_rad) {
            return bad("hemisphere ranges are empty");
        }
    }
    Ok(())
}

/// Builds a scene deterministically from `seed`. Ellipse ids are shuffled
/// within each image so that id order carries no correspondence.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    validate_config(cfg)?;
    let mut rng = rng_for(seed, SCENE_STREAM);
    let k = Intrinsics::new(cfg.f, cfg.px, cfg.py);
    let target = Vector3::from(cfg.target);
    let up = Vector3::from(cfg.up);
    let views = camera_positions(cfg, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, eye)| CameraView::look_at(format!("img{i:02}"), k, eye, target, up))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::ConfigInfeasible(e.to_string()))?;

    let spheres: Vec<(String, Sphere)> = cfg
        .spheres
        .iter()
        .enumerate()
        .map(|(n, s)| (format!("s{n}"), Sphere::world(Vector3::from(s.center), s.radius)))
        .collect();

    let mut observations = Vec::new();
    let mut truth = BTreeMap::new();
    for view in &views {
        let mut local: Vec<(Ellipse, Option<String>)> = Vec::new();
        for (sid, sphere) in &spheres {
            let depth = view.world_to_camera(&sphere.center).z;
            if depth <= sphere.radius * (1.0 + DEPTH_MARGIN) {
                return Err(Error::ConfigInfeasible(format!(
                    "sphere {sid} is behind or encloses camera {}",
                    view.image_id
                )));
            }
            let obs = observe_sphere(sphere, view, "")?;
            local.push((obs.ellipse, Some(sid.clone())));
        }
        for _ in 0..cfg.clutter_per_image {
            local.push((clutter_ellipse(cfg, &k, &mut rng), None));
        }
        local.shuffle(&mut rng);
        for (n, (ellipse, sid)) in local.into_iter().enumerate() {
            let eid = format!("e{n:02}");
            if let Some(sid) = sid {
                truth.insert((view.image_id.clone(), eid.clone()), sid);
            }
            observations.push(EllipseObservation {
                image_id: view.image_id.clone(),
                ellipse_id: eid,
                ellipse,
                cov: None,
            });
        }
    }

    let tie_points = tie_points(cfg, &views, &mut rng);
    Ok(Scene {
        views,
        spheres,
        observations,
        truth,
        tie_points,
    })
}

fn clutter_ellipse(cfg: &SceneConfig, k: &Intrinsics, rng: &mut ChaCha8Rng) -> Ellipse {
    let x = rng.random_range(0.1 * cfg.width..0.9 * cfg.width);
    let y = rng.random_range(0.1 * cfg.height..0.9 * cfg.height);
    let b: f64 = rng.random_range(30.0..90.0);
    let (dx, dy) = (x - k.px, y - k.py);
    let spherical_a = b * ((dx * dx + dy * dy) / (k.f * k.f + b * b) + 1.0).sqrt();
    let theta = rng.random_range(-PI / 2.0..PI / 2.0);
    let a = (spherical_a * cfg.clutter_inflation).max(b);
    Ellipse {
        x_ce: x,
        y_ce: y,
        a_e: a,
        b_e: b,
        theta,
    }
}

fn tie_points(cfg: &SceneConfig, views: &[CameraView], rng: &mut ChaCha8Rng) -> Vec<TiePoint> {
    let target = Vector3::from(cfg.target);
    let mut out = Vec::with_capacity(cfg.n_tie_points);
    for _ in 0..cfg.n_tie_points {
        let xyz = target
            + Vector3::new(
                rng.random_range(-cfg.tie_extent..=cfg.tie_extent),
                rng.random_range(-cfg.tie_extent..=cfg.tie_extent),
                0.0,
            );
        let range = rng.random_range(cfg.tie_range[0]..=cfg.tie_range[1]);
        let visible_in: BTreeSet<String> = views
            .iter()
            .filter(|v| (v.center() - xyz).norm() <= range)
            .filter(|v| {
                v.project(&xyz)
                    .is_some_and(|p| (0.0..cfg.width).contains(&p.x) && (0.0..cfg.height).contains(&p.y))
            })
            .map(|v| v.image_id.clone())
            .collect();
        if visible_in.len() >= 2 {
            out.push(TiePoint { xyz, visible_in });
        }
    }
    out
}

/// Adds independent `N(0, sigma²)` noise to (a_e, b_e, x_ce, y_ce) of every
/// observation and records `sigma² I` as its covariance. The axes are
/// re-sorted if noise inverts them; `theta` is left alone.
pub fn perturb_observations(scene: &Scene, sigma: f64, seed: u64) -> Scene {
    if sigma == 0.0 {
        return scene.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    let mut rng = rng_for(seed, NOISE_STREAM);
    let mut out = scene.clone();
    for obs in &mut out.observations {
        let e = &mut obs.ellipse;
        e.a_e += normal.sample(&mut rng);
        e.b_e += normal.sample(&mut rng);
        e.x_ce += normal.sample(&mut rng);
        e.y_ce += normal.sample(&mut rng);
        if e.a_e < e.b_e {
            std::mem::swap(&mut e.a_e, &mut e.b_e);
        }
        e.b_e = e.b_e.max(f64::MIN_POSITIVE);
        e.a_e = e.a_e.max(e.b_e);
        obs.cov = Some(Matrix4::identity() * (sigma * sigma));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRmse {
    pub center: f64,
    pub radius: f64,
    /// RMS over the four parameters (three center coordinates and radius).
    pub combined: f64,
}

/// Center and radius errors as percentages of the true radius.
pub fn p_rmse(estimated: &SphereModel, truth: &Sphere) -> PRmse {
    let dc = estimated.sphere.center - truth.center;
    let dr = estimated.sphere.radius - truth.radius;
    let r = truth.radius;
    PRmse {
        center: 100.0 * dc.norm() / r,
        radius: 100.0 * dr.abs() / r,
        combined: 100.0 * ((dc.norm_squared() + dr * dr) / 4.0).sqrt() / r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialStats {
    pub k: usize,
    pub p: usize,
    pub center: Summary,
    pub radius: Summary,
    pub combined: Summary,
    pub mean_ms: f64,
    /// Trials whose pipeline failed or recovered no sphere.
    pub failures: usize,
    /// Ground-truth spheres not recovered, summed over successful trials.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub per_k: Vec<TrialStats>,
    /// The best pair of the full network under the default angle floor.
    pub best_pair: TrialStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub errors: PRmse,
    pub recovered: usize,
    pub elapsed_ms: f64,
}

/// Reconstruction with every view of `network`. The best pair inside the
/// network seeds matching. Each other view is then visited in turn: an
/// accepted ellipse whose corrected center falls within tolerance of the
/// reprojected sphere center becomes a candidate, the sphere is re-estimated
/// with it, and candidates are taken one-to-one by ascending reprojection
/// distance in that view. Returns the contributing `(image_id, ellipse_id)`
/// list with each sphere.
pub fn reconstruct_multiview(
    network: &ImageNetwork,
    ellipses: &[EllipseObservation],
    opts: &ReconstructOptions,
) -> Result<Vec<(Vec<(String, String)>, SphereModel)>> {
    let gated = gate_ellipses(&network.views, ellipses, &opts.gate)?;
    let mut accepted: BTreeMap<&str, Vec<EllipseObservation>> = BTreeMap::new();
    for g in gated.into_iter().filter(|g| g.report.accepted) {
        let id = network
            .views
            .iter()
            .find(|v| v.image_id == g.obs.image_id)
            .map(|v| v.image_id.as_str())
            .expect("gated ellipses reference known views");
        accepted.entry(id).or_default().push(g.obs);
    }
    let empty = Vec::new();
    let in_view = |id: &str| accepted.get(id).unwrap_or(&empty);

    let pair = best_pair(network, opts.min_angle)?;
    let (vl, vk) = (network.view(&pair.i).unwrap(), network.view(&pair.j).unwrap());
    let outcome = match_ellipses(vl, in_view(&pair.i), vk, in_view(&pair.j), opts.tol_px)?;

    let find = |view: &str, id: &str| in_view(view).iter().find(|e| e.ellipse_id == id).unwrap();
    let mut tracks: Vec<(Vec<(&CameraView, &EllipseObservation)>, SphereModel)> = outcome
        .matches
        .iter()
        .map(|m| {
            (
                vec![(vl, find(&pair.i, &m.ellipse_l)), (vk, find(&pair.j, &m.ellipse_k))],
                m.sphere.clone(),
            )
        })
        .collect();

    for view in &network.views {
        if view.image_id == pair.i || view.image_id == pair.j {
            continue;
        }
        let candidates = in_view(&view.image_id);
        let corrected: Vec<Vector2<f64>> = candidates
            .iter()
            .map(|e| projected_sphere_center(&e.ellipse, &view.intrinsics))
            .collect();
        let mut scored = Vec::new();
        for (t, (track, model)) in tracks.iter().enumerate() {
            let Some(x) = view.project(&model.sphere.center) else { continue };
            for (c, e) in candidates.iter().enumerate() {
                if (corrected[c] - x).norm() > opts.tol_px.max(2.0 * center_sigma(e)) {
                    continue;
                }
                let mut grown = track.clone();
                grown.push((view, e));
                let Ok((refined, _)) = verify_hypothesis(&grown) else { continue };
                let local = view.world_to_camera(&refined.sphere.center);
                let Ok(predicted) = project_sphere(&local, refined.sphere.radius, &view.intrinsics) else {
                    continue;
                };
                let d = reprojection_distance(&e.ellipse, &predicted);
                if d.is_finite() {
                    scored.push((d, t, c, refined));
                }
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_t = vec![false; tracks.len()];
        let mut used_c = vec![false; candidates.len()];
        for (_, t, c, refined) in scored {
            if used_t[t] || used_c[c] {
                continue;
            }
            used_t[t] = true;
            used_c[c] = true;
            tracks[t].0.push((view, &candidates[c]));
            tracks[t].1 = refined;
        }
    }

    Ok(tracks
        .into_iter()
        .map(|(obs, model)| {
            let ids = obs
                .iter()
                .map(|(v, e)| (v.image_id.clone(), e.ellipse_id.clone()))
                .collect();
            (ids, model)
        })
        .collect())
}

/// Errors aggregated over the spheres of one reconstruction: each sphere is
/// compared with the truth of the ellipse that seeded it.
fn score_reconstruction<'a>(scene: &Scene, spheres: impl Iterator<Item = (&'a (String, String), &'a SphereModel)>) -> (PRmse, usize) {
    let (mut c2, mut r2, mut q2, mut n) = (0.0, 0.0, 0.0, 0usize);
    let mut seen = BTreeSet::new();
    for ((img, eid), model) in spheres {
        let Some(sid) = scene.truth_of(img, eid) else {
            // Seeded by clutter: charge it against the nearest true sphere.
            let nearest = scene
                .spheres
                .iter()
                .min_by(|a, b| {
                    (a.1.center - model.sphere.center)
                        .norm()
                        .total_cmp(&(b.1.center - model.sphere.center).norm())
                })
                .map(|(_, s)| s);
            if let Some(s) = nearest {
                let e = p_rmse(model, s);
                c2 += e.center * e.center;
                r2 += e.radius * e.radius;
                q2 += e.combined * e.combined;
                n += 1;
            }
            continue;
        };
        seen.insert(sid);
        let e = p_rmse(model, scene.sphere(sid).expect("truth ids resolve"));
        c2 += e.center * e.center;
        r2 += e.radius * e.radius;
        q2 += e.combined * e.combined;
        n += 1;
    }
    let nf = n.max(1) as f64;
    (
        PRmse {
            center: (c2 / nf).sqrt(),
            radius: (r2 / nf).sqrt(),
            combined: (q2 / nf).sqrt(),
        },
        seen.len(),
    )
}

fn subset_trial(scene: &Scene, ids: &BTreeSet<String>, opts: &ReconstructOptions) -> Result<TrialOutcome> {
    let network = scene.network().restricted_to(ids);
    let ellipses: Vec<EllipseObservation> = scene
        .observations
        .iter()
        .filter(|e| ids.contains(&e.image_id))
        .cloned()
        .collect();
    // An untimed run first, so caches and the allocator are warm for the
    // timed one at every k alike.
    let _ = reconstruct_multiview(&network, &ellipses, opts);
    let start = Instant::now();
    let spheres = reconstruct_multiview(&network, &ellipses, opts)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    if spheres.is_empty() {
        return Err(Error::DegenerateGeometry("no sphere recovered".into()));
    }
    let (errors, recovered) = score_reconstruction(scene, spheres.iter().map(|(ids, m)| (&ids[0], m)));
    Ok(TrialOutcome {
        errors,
        recovered,
        elapsed_ms,
    })
}

/// Runs the default pipeline on the full network and scores the spheres it
/// reconstructs from the best pair.
pub fn best_pair_trial(scene: &Scene, opts: &ReconstructOptions) -> Result<TrialOutcome> {
    let network = scene.network();
    let _ = run_reconstruction(&network, &scene.observations, opts);
    let start = Instant::now();
    let (_, file) = run_reconstruction(&network, &scene.observations, opts).map_err(|e| e.error)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    if file.spheres.is_empty() {
        return Err(Error::DegenerateGeometry("no sphere recovered".into()));
    }
    let seeds: Vec<((String, String), SphereModel)> = file
        .spheres
        .iter()
        .map(|s| {
            let r = &s.ellipse_ids[0];
            ((r.image_id.clone(), r.ellipse_id.clone()), s.to_model())
        })
        .collect();
    let (errors, recovered) = score_reconstruction(scene, seeds.iter().map(|(k, m)| (k, m)));
    Ok(TrialOutcome {
        errors,
        recovered,
        elapsed_ms,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else { break };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
    out
}

/// `p = min(max_subsets, C(n, k))` distinct k-subsets of `0..n`, drawn
/// deterministically from `seed`. All subsets are listed when there are at
/// most `max_subsets` of them.
pub fn draw_subsets(n: usize, k: usize, max_subsets: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = binomial(n, k);
    if total <= max_subsets as u128 {
        return combinations(n, k);
    }
    let mut rng = rng_for(seed, SUBSET_STREAM + k as u64);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(max_subsets);
    while out.len() < max_subsets {
        let mut s = index::sample(&mut rng, n, k).into_vec();
        s.sort_unstable();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

pub const MAX_SUBSETS: usize = 50;

fn aggregate(k: usize, p: usize, outcomes: &[Result<TrialOutcome>], n_spheres: usize) -> TrialStats {
    let ok: Vec<&TrialOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let pick = |f: fn(&PRmse) -> f64| Summary::of(&ok.iter().map(|o| f(&o.errors)).collect::<Vec<_>>());
    TrialStats {
        k,
        p,
        center: pick(|e| e.center),
        radius: pick(|e| e.radius),
        combined: pick(|e| e.combined),
        mean_ms: Summary::of(&ok.iter().map(|o| o.elapsed_ms).collect::<Vec<_>>()).mean,
        failures: outcomes.len() - ok.len(),
        missing: ok.iter().map(|o| n_spheres.saturating_sub(o.recovered)).sum(),
    }
}

/// For each k, reconstructs the scene from `min(50, C(n, k))` random
/// k-subsets of its views and summarises the errors and timings. Pair
/// selection inside a subset uses no angle floor so every subset yields a
/// seed pair; the distinguished best-pair point uses the configured floor.
pub fn monte_carlo_views(
    scene: &Scene,
    k_values: &[usize],
    seed: u64,
    opts: &ReconstructOptions,
) -> Result<MonteCarloReport> {
    let n = scene.views.len();
    if let Some(&bad) = k_values.iter().find(|&&k| k < 2 || k > n) {
        return Err(Error::ConfigInfeasible(format!("k = {bad} outside [2, {n}]")));
    }
    let subset_opts = ReconstructOptions {
        min_angle: 0.0,
        ..opts.clone()
    };
    let n_spheres = scene.spheres.len();
    let per_k = k_values
        .iter()
        .map(|&k| {
            let subsets = draw_subsets(n, k, MAX_SUBSETS, seed);
            let outcomes: Vec<Result<TrialOutcome>> = subsets
                .iter()
                .map(|s| {
                    let ids = s.iter().map(|&i| scene.views[i].image_id.clone()).collect();
                    subset_trial(scene, &ids, &subset_opts)
                })
                .collect();
            aggregate(k, subsets.len(), &outcomes, n_spheres)
        })
        .collect();
    let best = best_pair_trial(scene, opts);
    Ok(MonteCarloReport {
        per_k,
        best_pair: aggregate(2, 1, &[best], n_spheres),
    })
}

/// Scene generation, noise and the Monte-Carlo protocol from one config.
pub fn simulate(cfg: &SceneConfig, k_values: &[usize], opts: &ReconstructOptions) -> Result<MonteCarloReport> {
    let scene = generate_scene(cfg, cfg.seed)?;
    let noisy = perturb_observations(&scene, cfg.sigma_px, cfg.seed);
    monte_carlo_views(&noisy, k_values, cfg.seed, opts)
}

/// Gate options matching the scene's noise model.
pub fn gate_options_for(cfg: &SceneConfig) -> GateOptions {
    GateOptions {
        default_sigma_px: if cfg.sigma_px > 0.0 { cfg.sigma_px } else { GateOptions::default().default_sigma_px },
        ..GateOptions::default()
    }
}
