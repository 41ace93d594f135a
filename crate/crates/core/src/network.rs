//! Best image pair selection from convergence angle and network overlap.
//!
//! The pair score is
//! `alpha_ij / alpha_max + (ov_i + ov_j) / (2 ov_max)`,
//! maximised over pairs whose convergence angle exceeds a floor.
//!
//! Both components are interpretations isolated here: the convergence angle
//! is the mean vertex angle at shared tie points between the rays to the two
//! camera centers, and the overlap is the tie-point count of an image
//! normalised by the largest count in the network.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use crate::camera::CameraView;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_ANGLE_DEG: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TiePoint {
    pub xyz: Vector3<f64>,
    pub visible_in: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageNetwork {
    pub views: Vec<CameraView>,
    pub tie_points: Vec<TiePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub i: String,
    pub j: String,
    pub alpha_ij: f64,
    pub ov_i: f64,
    pub ov_j: f64,
    pub theta_ij: f64,
}

impl ImageNetwork {
    pub fn new(views: Vec<CameraView>, tie_points: Vec<TiePoint>) -> Result<Self> {
        let network = Self { views, tie_points };
        network.validate()?;
        Ok(network)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for v in &self.views {
            if !ids.insert(v.image_id.as_str()) {
                return Err(Error::Parse(format!("duplicate image_id `{}`", v.image_id)));
            }
        }
        for (n, tp) in self.tie_points.iter().enumerate() {
            if tp.visible_in.len() < 2 {
                return Err(Error::Parse(format!("tie point {n} is visible in fewer than two images")));
            }
            if let Some(missing) = tp.visible_in.iter().find(|id| !ids.contains(id.as_str())) {
                return Err(Error::UnknownImage(missing.clone()));
            }
        }
        Ok(())
    }

    pub fn view(&self, image_id: &str) -> Option<&CameraView> {
        self.views.iter().find(|v| v.image_id == image_id)
    }

    /// The same network restricted to a subset of images. Tie points left
    /// with fewer than two observers are dropped.
    pub fn restricted_to(&self, image_ids: &BTreeSet<String>) -> ImageNetwork {
        let views = self
            .views
            .iter()
            .filter(|v| image_ids.contains(&v.image_id))
            .cloned()
            .collect();
        let tie_points = self
            .tie_points
            .iter()
            .filter_map(|tp| {
                let visible_in: BTreeSet<String> =
                    tp.visible_in.intersection(image_ids).cloned().collect();
                (visible_in.len() >= 2).then(|| TiePoint { xyz: tp.xyz, visible_in })
            })
            .collect();
        ImageNetwork { views, tie_points }
    }
}

fn vertex_angle(point: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ra = a - point;
    let rb = b - point;
    // atan2 form stays accurate for nearly parallel rays.
    ra.cross(&rb).norm().atan2(ra.dot(&rb))
}

/// Mean angle, over tie points seen by both views, between the rays from the
/// point to the two camera centers.
pub fn convergence_angle(view_i: &CameraView, view_j: &CameraView, tie_points: &[TiePoint]) -> Result<f64> {
    let (ci, cj) = (view_i.center(), view_j.center());
    let (sum, count) = tie_points
        .iter()
        .filter(|tp| tp.visible_in.contains(&view_i.image_id) && tp.visible_in.contains(&view_j.image_id))
        .fold((0.0, 0usize), |(s, n), tp| (s + vertex_angle(&tp.xyz, &ci, &cj), n + 1));
    if count == 0 {
        return Err(Error::NoSharedPoints(view_i.image_id.clone(), view_j.image_id.clone()));
    }
    Ok(sum / count as f64)
}

pub fn network_overlap(network: &ImageNetwork) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> =
        network.views.iter().map(|v| (v.image_id.clone(), 0)).collect();
    for tp in &network.tie_points {
        for id in &tp.visible_in {
            if let Some(c) = counts.get_mut(id) {
                *c += 1;
            }
        }
    }
    let max = counts.values().copied().max().unwrap_or(0);
    counts
        .into_iter()
        .map(|(id, c)| {
            let ov = if max == 0 { 0.0 } else { c as f64 / max as f64 };
            (id, ov)
        })
        .collect()
}

/// Scores every image pair that shares at least one tie point. Pairs are
/// reported with `i < j` in image-id order, sorted by `(i, j)`.
pub fn score_pairs(network: &ImageNetwork) -> Vec<PairScore> {
    let mut views: Vec<&CameraView> = network.views.iter().collect();
    views.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.center()).collect();
    let index: BTreeMap<&str, usize> = views
        .iter()
        .enumerate()
        .map(|(n, v)| (v.image_id.as_str(), n))
        .collect();

    // Angle sums per pair and observation counts per view, in one sweep.
    let n = views.len();
    let mut sums = vec![0.0; n * n];
    let mut counts = vec![0usize; n * n];
    let mut observed = vec![0usize; n];
    let mut seen = Vec::new();
    for tp in &network.tie_points {
        seen.clear();
        seen.extend(tp.visible_in.iter().filter_map(|id| index.get(id.as_str()).copied()));
        for (a, &i) in seen.iter().enumerate() {
            observed[i] += 1;
            for &j in &seen[a + 1..] {
                let (i, j) = (i.min(j), i.max(j));
                sums[i * n + j] += vertex_angle(&tp.xyz, &centers[i], &centers[j]);
                counts[i * n + j] += 1;
            }
        }
    }
    let max_observed = observed.iter().copied().max().unwrap_or(0);
    let overlap: Vec<f64> = observed
        .iter()
        .map(|&c| if max_observed == 0 { 0.0 } else { c as f64 / max_observed as f64 })
        .collect();
    let ov_max = overlap.iter().copied().fold(0.0, f64::max);

    let mut raw = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let c = counts[i * n + j];
            if c > 0 {
                raw.push((i, j, sums[i * n + j] / c as f64));
            }
        }
    }
    let alpha_max = raw.iter().map(|r| r.2).fold(0.0, f64::max);
    raw.into_iter()
        .map(|(i, j, alpha)| {
            let (ov_i, ov_j) = (overlap[i], overlap[j]);
            let angle_term = if alpha_max > 0.0 { alpha / alpha_max } else { 0.0 };
            let overlap_term = if ov_max > 0.0 { (ov_i + ov_j) / (2.0 * ov_max) } else { 0.0 };
            PairScore {
                i: views[i].image_id.clone(),
                j: views[j].image_id.clone(),
                alpha_ij: alpha,
                ov_i,
                ov_j,
                theta_ij: angle_term + overlap_term,
            }
        })
        .collect()
}

/// Highest-scoring pair with convergence angle strictly above `min_angle`
/// (radians). Ties go to the lexicographically smallest `(i, j)`.
pub fn best_pair(network: &ImageNetwork, min_angle: f64) -> Result<PairScore> {
    if network.views.len() < 2 {
        return Err(Error::NoAdmissiblePair { max_angle_deg: 0.0 });
    }
    let scores = score_pairs(network);
    let max_alpha = scores.iter().map(|s| s.alpha_ij).fold(0.0, f64::max);
    let mut best: Option<PairScore> = None;
    // Scores arrive sorted by (i, j), so a strict comparison keeps the
    // lexicographically first of equal scores.
    for s in scores.into_iter().filter(|s| s.alpha_ij > min_angle) {
        if best.as_ref().is_none_or(|b| s.theta_ij > b.theta_ij) {
            best = Some(s);
        }
    }
    best.ok_or(Error::NoAdmissiblePair {
        max_angle_deg: max_alpha.to_degrees(),
    })
}
