//! End-to-end stages shared by the command line tool and the synthetic
//! harness: gate, pair selection, matching, reconstruction and scaling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix4, Vector3};

use crate::camera::{CameraView, EllipseObservation};
use crate::correspondence::{epipolar_distance, fundamental_from_views, match_ellipses, MatchOutcome};
use crate::error::{Error, Result};
use crate::gate::{classify_spherical, default_ellipse_cov, GateReport, DEFAULT_K, DEFAULT_SIGMA_PX};
use crate::io::{EllipseRef, GateRecord, PairRecord, SphereOutputFile, SphereRecord};
use crate::network::{best_pair, ImageNetwork, PairScore, TiePoint};
use crate::projection::projected_sphere_center;
use crate::reconstruction::{metric_scale, triangulate_center, Scalable, ScaleResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOptions {
    pub k_sigma: f64,
    /// Per-parameter standard deviation used when an ellipse has no
    /// covariance of its own.
    pub default_sigma_px: f64,
}

impl Default for GateOptions {
    fn default() -> Self {
        Self {
            k_sigma: DEFAULT_K,
            default_sigma_px: DEFAULT_SIGMA_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedEllipse {
    pub obs: EllipseObservation,
    pub report: GateReport,
}

fn views_by_id(views: &[CameraView]) -> BTreeMap<&str, &CameraView> {
    views.iter().map(|v| (v.image_id.as_str(), v)).collect()
}

/// Gate report for every ellipse, in input order.
pub fn gate_ellipses(
    views: &[CameraView],
    ellipses: &[EllipseObservation],
    opts: &GateOptions,
) -> Result<Vec<GatedEllipse>> {
    let by_id = views_by_id(views);
    let fallback_cov = default_ellipse_cov(opts.default_sigma_px);
    ellipses
        .iter()
        .map(|obs| {
            let view = by_id
                .get(obs.image_id.as_str())
                .ok_or_else(|| Error::UnknownImage(obs.image_id.clone()))?;
            let cov: Matrix4<f64> = obs.cov.unwrap_or(fallback_cov);
            let report = classify_spherical(
                &obs.ellipse,
                &view.intrinsics,
                &cov,
                &view.iop_cov_or_zero(),
                opts.k_sigma,
            )?;
            Ok(GatedEllipse {
                obs: obs.clone(),
                report,
            })
        })
        .collect()
}

/// A single synthetic tie point, visible in every view, at the centroid of
/// all sphere-center candidates triangulated from epipolar-compatible
/// ellipse pairs. Used only when a network carries no tie points.
pub fn fallback_tie_points(views: &[CameraView], ellipses: &[EllipseObservation], tol_px: f64) -> Vec<TiePoint> {
    let mut per_view: BTreeMap<&str, Vec<&EllipseObservation>> = BTreeMap::new();
    for e in ellipses {
        per_view.entry(e.image_id.as_str()).or_default().push(e);
    }
    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for (n, vi) in views.iter().enumerate() {
        for vj in &views[n + 1..] {
            let Ok(f) = fundamental_from_views(vi, vj) else { continue };
            let (Some(ei), Some(ej)) = (per_view.get(vi.image_id.as_str()), per_view.get(vj.image_id.as_str())) else {
                continue;
            };
            for a in ei {
                let xa = projected_sphere_center(&a.ellipse, &vi.intrinsics);
                for b in ej {
                    let xb = projected_sphere_center(&b.ellipse, &vj.intrinsics);
                    if epipolar_distance(&f, &xa, &xb) > tol_px {
                        continue;
                    }
                    let Ok(x) = triangulate_center(&[(vi, xa), (vj, xb)]) else { continue };
                    if vi.world_to_camera(&x).z > 0.0 && vj.world_to_camera(&x).z > 0.0 {
                        sum += x;
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 || views.len() < 2 {
        return Vec::new();
    }
    vec![TiePoint {
        xyz: sum / count as f64,
        visible_in: views.iter().map(|v| v.image_id.clone()).collect(),
    }]
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairChoice {
    Auto,
    Fixed(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub i: String,
    pub j: String,
    pub score: Option<PairScore>,
    pub warnings: Vec<String>,
}

/// Picks the image pair: the best-scoring admissible pair, or the caller's
/// explicit pair (accepted with a warning when below the angle floor).
pub fn select_pair(
    network: &ImageNetwork,
    ellipses: &[EllipseObservation],
    choice: &PairChoice,
    min_angle: f64,
    tol_px: f64,
) -> Result<PairSelection> {
    let mut warnings = Vec::new();
    let fallback;
    let net = if network.tie_points.is_empty() {
        warnings.push(
            "network has no tie points; convergence angles are measured at the centroid of \
             triangulated sphere-center candidates instead"
                .to_string(),
        );
        fallback = ImageNetwork {
            views: network.views.clone(),
            tie_points: fallback_tie_points(&network.views, ellipses, tol_px),
        };
        &fallback
    } else {
        network
    };

    match choice {
        PairChoice::Auto => {
            let best = best_pair(net, min_angle)?;
            Ok(PairSelection {
                i: best.i.clone(),
                j: best.j.clone(),
                score: Some(best),
                warnings,
            })
        }
        PairChoice::Fixed(i, j) => {
            for id in [i, j] {
                if net.view(id).is_none() {
                    return Err(Error::UnknownImage(id.clone()));
                }
            }
            if i == j {
                return Err(Error::DegenerateGeometry(format!("pair uses image `{i}` twice")));
            }
            let score = crate::network::score_pairs(net)
                .into_iter()
                .find(|s| (&s.i == i && &s.j == j) || (&s.i == j && &s.j == i));
            match &score {
                Some(s) if s.alpha_ij <= min_angle => warnings.push(format!(
                    "explicit pair ({i}, {j}) converges at {:.2} deg, below the {:.2} deg floor; proceeding",
                    s.alpha_ij.to_degrees(),
                    min_angle.to_degrees()
                )),
                None => warnings.push(format!(
                    "explicit pair ({i}, {j}) shares no tie points; convergence unchecked"
                )),
                _ => {}
            }
            Ok(PairSelection {
                i: i.clone(),
                j: j.clone(),
                score,
                warnings,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gate,
    SelectPair,
    Match,
    Reconstruct,
    Scale,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Gate => "gate",
            Stage::SelectPair => "select-pair",
            Stage::Match => "match",
            Stage::Reconstruct => "reconstruct",
            Stage::Scale => "scale",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructOptions {
    pub gate: GateOptions,
    pub pair: PairChoice,
    pub min_angle: f64,
    pub tol_px: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            gate: GateOptions::default(),
            pair: PairChoice::Auto,
            min_angle: crate::network::DEFAULT_MIN_ANGLE_DEG.to_radians(),
            tol_px: crate::correspondence::DEFAULT_TOL_PX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairMatching {
    pub selection: PairSelection,
    pub gated: Vec<GatedEllipse>,
    pub outcome: MatchOutcome,
}

/// Gate, pair selection and matching.
pub fn run_matching(
    network: &ImageNetwork,
    ellipses: &[EllipseObservation],
    opts: &ReconstructOptions,
) -> std::result::Result<PairMatching, StageError> {
    let gated = gate_ellipses(&network.views, ellipses, &opts.gate).at(Stage::Gate)?;
    let accepted: Vec<EllipseObservation> = gated
        .iter()
        .filter(|g| g.report.accepted)
        .map(|g| g.obs.clone())
        .collect();
    let selection = select_pair(network, &accepted, &opts.pair, opts.min_angle, opts.tol_px).at(Stage::SelectPair)?;
    let view_i = network.view(&selection.i).expect("selected view exists");
    let view_j = network.view(&selection.j).expect("selected view exists");
    let in_image = |id: &str| -> Vec<EllipseObservation> {
        accepted.iter().filter(|e| e.image_id == id).cloned().collect()
    };
    let outcome = match_ellipses(view_i, &in_image(&selection.i), view_j, &in_image(&selection.j), opts.tol_px)
        .at(Stage::Match)?;
    Ok(PairMatching {
        selection,
        gated,
        outcome,
    })
}

/// Full pipeline producing the sphere output file. Spheres are numbered in
/// order of their ellipse id in the first image of the pair.
pub fn run_reconstruction(
    network: &ImageNetwork,
    ellipses: &[EllipseObservation],
    opts: &ReconstructOptions,
) -> std::result::Result<(PairMatching, SphereOutputFile), StageError> {
    let matching = run_matching(network, ellipses, opts)?;
    let sel = &matching.selection;
    let gate_of: BTreeMap<(&str, &str), &GatedEllipse> = matching
        .gated
        .iter()
        .map(|g| ((g.obs.image_id.as_str(), g.obs.ellipse_id.as_str()), g))
        .collect();

    let mut matches: Vec<_> = matching.outcome.matches.iter().collect();
    matches.sort_by(|a, b| a.ellipse_l.cmp(&b.ellipse_l));
    let mut spheres = Vec::with_capacity(matches.len());
    for (n, m) in matches.iter().enumerate() {
        let refs = [(sel.i.as_str(), m.ellipse_l.as_str()), (sel.j.as_str(), m.ellipse_k.as_str())];
        let reports = refs
            .iter()
            .filter_map(|key| gate_of.get(key).map(|g| GateRecord::new(&g.obs, &g.report)))
            .collect();
        let ids = refs
            .iter()
            .map(|(img, e)| EllipseRef {
                image_id: img.to_string(),
                ellipse_id: e.to_string(),
            })
            .collect();
        if !m.sphere.sphere.radius.is_finite() {
            return Err(StageError {
                stage: Stage::Reconstruct,
                error: Error::DegenerateGeometry(format!("non-finite radius for match {}", m.ellipse_l)),
            });
        }
        spheres.push(SphereRecord::from_model(format!("sphere-{n:03}"), &m.sphere, ids, reports));
    }
    let pair = PairRecord {
        i: sel.i.clone(),
        j: sel.j.clone(),
        alpha_deg: sel.score.as_ref().map(|s| s.alpha_ij.to_degrees()),
        theta_ij: sel.score.as_ref().map(|s| s.theta_ij),
    };
    Ok((
        matching,
        SphereOutputFile {
            pair: Some(pair),
            spheres,
        },
    ))
}

/// Metric scale from anchor spheres given as `(sphere_id, real_radius)`,
/// applied to every sphere of the file.
pub fn scale_sphere_file(file: &SphereOutputFile, anchors: &[(String, f64)]) -> Result<(ScaleResult, SphereOutputFile)> {
    let by_id: BTreeMap<&str, &SphereRecord> = file.spheres.iter().map(|s| (s.sphere_id.as_str(), s)).collect();
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(anchors.len());
    for (id, real) in anchors {
        let rec = by_id.get(id.as_str()).ok_or_else(|| Error::UnknownAnchor(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidAnchor(format!("anchor `{id}` given twice")));
        }
        pairs.push((*real, rec.radius));
    }
    let scale = metric_scale(&pairs)?;
    let spheres = file
        .spheres
        .iter()
        .map(|rec| {
            let model = rec.to_model().scaled(scale.s_r);
            SphereRecord::from_model(
                rec.sphere_id.clone(),
                &model,
                rec.ellipse_ids.clone(),
                rec.gate_reports.clone(),
            )
        })
        .collect();
    Ok((
        scale,
        SphereOutputFile {
            pair: file.pair.clone(),
            spheres,
        },
    ))
}

/// Parses `"id:radius,id:radius"`.
pub fn parse_anchors(spec: &str) -> Result<Vec<(String, f64)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (id, r) = item
                .rsplit_once(':')
                .ok_or_else(|| Error::Parse(format!("anchor `{item}` is not of the form id:radius")))?;
            let r: f64 = r
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("anchor `{item}` has a non-numeric radius")))?;
            Ok((id.trim().to_string(), r))
        })
        .collect()
}
