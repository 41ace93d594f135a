//! File formats: camera network (JSON), ellipse detections (CSV), sphere
//! models (JSON) and ASCII PLY point clouds.
//!
//! Numbers are written in shortest round-trip form so every format parses
//! back to bit-identical values.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Ellipse, EllipseObservation, Intrinsics};
use crate::error::{Error, Result};
use crate::gate::GateReport;
use crate::network::{ImageNetwork, PairScore, TiePoint};
use crate::reconstruction::SphereModel;
use crate::synth::MonteCarloReport;

/// Mandatory value of the `convention` field of a network file.
pub const POSE_CONVENTION: &str = "x_cam = rot * x_world + t";

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Network file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub image_id: String,
    pub f: f64,
    pub px: f64,
    pub py: f64,
    /// Row-major world to camera rotation.
    pub rot: [f64; 9],
    pub t: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iop_cov: Option<[f64; 9]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiePointRecord {
    pub xyz: [f64; 3],
    pub visible_in: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub convention: String,
    pub views: Vec<ViewRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_points: Option<Vec<TiePointRecord>>,
}

impl ViewRecord {
    pub fn from_view(v: &CameraView) -> Self {
        let row_major = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[3 * r + c] = m[(r, c)];
                }
            }
            out
        };
        ViewRecord {
            image_id: v.image_id.clone(),
            f: v.intrinsics.f,
            px: v.intrinsics.px,
            py: v.intrinsics.py,
            rot: row_major(&v.rot),
            t: [v.t.x, v.t.y, v.t.z],
            iop_cov: v.iop_cov.as_ref().map(row_major),
        }
    }

    pub fn to_view(&self) -> Result<CameraView> {
        CameraView::new(
            self.image_id.clone(),
            Intrinsics::new(self.f, self.px, self.py),
            Matrix3::from_row_slice(&self.rot),
            Vector3::from(self.t),
            self.iop_cov.map(|c| Matrix3::from_row_slice(&c)),
        )
    }
}

impl NetworkFile {
    pub fn from_network(network: &ImageNetwork, with_tie_points: bool) -> Self {
        NetworkFile {
            convention: POSE_CONVENTION.to_string(),
            views: network.views.iter().map(ViewRecord::from_view).collect(),
            tie_points: with_tie_points.then(|| {
                network
                    .tie_points
                    .iter()
                    .map(|tp| TiePointRecord {
                        xyz: [tp.xyz.x, tp.xyz.y, tp.xyz.z],
                        visible_in: tp.visible_in.iter().cloned().collect(),
                    })
                    .collect()
            }),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        if file.convention.trim() != POSE_CONVENTION {
            return Err(Error::Parse(format!(
                "unsupported pose convention `{}`; expected `{POSE_CONVENTION}`",
                file.convention
            )));
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("network file serializes");
        s.push('\n');
        s
    }

    pub fn to_network(&self) -> Result<ImageNetwork> {
        let views = self.views.iter().map(ViewRecord::to_view).collect::<Result<Vec<_>>>()?;
        let tie_points = self
            .tie_points
            .iter()
            .flatten()
            .map(|tp| TiePoint {
                xyz: Vector3::from(tp.xyz),
                visible_in: tp.visible_in.iter().cloned().collect::<BTreeSet<_>>(),
            })
            .collect();
        ImageNetwork::new(views, tie_points)
    }

    pub fn has_tie_points(&self) -> bool {
        self.tie_points.as_ref().is_some_and(|t| !t.is_empty())
    }
}

pub fn read_network(path: &Path) -> Result<NetworkFile> {
    NetworkFile::parse(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Ellipse file

pub const ELLIPSE_COLUMNS: [&str; 7] = ["image_id", "ellipse_id", "x_ce", "y_ce", "a_e", "b_e", "theta_rad"];
/// Upper triangle of the (a_e, b_e, x_ce, y_ce) covariance, row by row.
pub const COV_COLUMNS: [&str; 10] = [
    "cov_aa", "cov_ab", "cov_ax", "cov_ay", "cov_bb", "cov_bx", "cov_by", "cov_xx", "cov_xy", "cov_yy",
];
const UPPER: [(usize, usize); 10] = [
    (0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3),
];

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: column `{column}`: `{field}` is not a number")))
}

/// Parses an ellipse CSV. The header is mandatory; covariance columns are
/// optional as a block, and per row either all ten are filled or all are
/// empty.
pub fn parse_ellipses(text: &str) -> Result<Vec<EllipseObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let base: Vec<usize> = ELLIPSE_COLUMNS
        .iter()
        .map(|c| find(c).ok_or_else(|| Error::Parse(format!("missing column `{c}`"))))
        .collect::<Result<_>>()?;
    let cov_cols: Vec<Option<usize>> = COV_COLUMNS.iter().map(|c| find(c)).collect();
    let has_cov = match cov_cols.iter().filter(|c| c.is_some()).count() {
        0 => false,
        10 => true,
        n => return Err(Error::Parse(format!("expected 0 or 10 covariance columns, found {n}"))),
    };

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| record.get(i).unwrap_or("");
        let num = |n: usize| parse_f64(get(base[n]), ELLIPSE_COLUMNS[n], line);
        let ellipse = Ellipse {
            x_ce: num(2)?,
            y_ce: num(3)?,
            a_e: num(4)?,
            b_e: num(5)?,
            theta: num(6)?,
        };
        let cov = if has_cov {
            let fields: Vec<&str> = cov_cols.iter().map(|c| get(c.unwrap())).collect();
            if fields.iter().all(|f| f.is_empty()) {
                None
            } else {
                let mut m = Matrix4::zeros();
                for (n, &(r, c)) in UPPER.iter().enumerate() {
                    let v = parse_f64(fields[n], COV_COLUMNS[n], line)?;
                    m[(r, c)] = v;
                    m[(c, r)] = v;
                }
                Some(m)
            }
        } else {
            None
        };
        let obs = EllipseObservation::new(get(base[0]), get(base[1]), ellipse, cov)
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        out.push(obs);
    }
    Ok(out)
}

pub fn write_ellipses(ellipses: &[EllipseObservation]) -> String {
    let mut s = String::new();
    let header: Vec<&str> = ELLIPSE_COLUMNS.iter().chain(COV_COLUMNS.iter()).copied().collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for obs in ellipses {
        let e = &obs.ellipse;
        write!(
            s,
            "{},{},{},{},{},{},{}",
            csv_field(&obs.image_id),
            csv_field(&obs.ellipse_id),
            e.x_ce,
            e.y_ce,
            e.a_e,
            e.b_e,
            e.theta
        )
        .unwrap();
        for &(r, c) in &UPPER {
            match &obs.cov {
                Some(m) => write!(s, ",{}", m[(r, c)]).unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.trim() != s {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn read_ellipses(path: &Path) -> Result<Vec<EllipseObservation>> {
    parse_ellipses(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Sphere output file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRadius {
    pub image_id: String,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseRef {
    pub image_id: String,
    pub ellipse_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub image_id: String,
    pub ellipse_id: String,
    pub tau: f64,
    pub sigma_tau: f64,
    pub k: f64,
    pub accepted: bool,
}

impl GateRecord {
    pub fn new(obs: &EllipseObservation, report: &GateReport) -> Self {
        GateRecord {
            image_id: obs.image_id.clone(),
            ellipse_id: obs.ellipse_id.clone(),
            tau: report.tau,
            sigma_tau: report.sigma_tau,
            k: report.k,
            accepted: report.accepted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereRecord {
    pub sphere_id: String,
    pub center: [f64; 3],
    pub radius: f64,
    pub per_view_radii: Vec<ViewRadius>,
    pub radius_spread: f64,
    pub triangulation_residual: f64,
    pub ellipse_ids: Vec<EllipseRef>,
    pub gate_reports: Vec<GateRecord>,
    pub scale_applied: Option<f64>,
}

impl SphereRecord {
    pub fn from_model(sphere_id: impl Into<String>, model: &SphereModel, ellipses: Vec<EllipseRef>, gate_reports: Vec<GateRecord>) -> Self {
        let c = model.sphere.center;
        SphereRecord {
            sphere_id: sphere_id.into(),
            center: [c.x, c.y, c.z],
            radius: model.sphere.radius,
            per_view_radii: model
                .per_view_radii
                .iter()
                .map(|(id, r)| ViewRadius { image_id: id.clone(), radius: *r })
                .collect(),
            radius_spread: model.radius_spread,
            triangulation_residual: model.triangulation_residual,
            ellipse_ids: ellipses,
            gate_reports,
            scale_applied: model.scale_applied,
        }
    }

    pub fn to_model(&self) -> SphereModel {
        SphereModel {
            sphere: crate::camera::Sphere::world(Vector3::from(self.center), self.radius),
            per_view_radii: self
                .per_view_radii
                .iter()
                .map(|v| (v.image_id.clone(), v.radius))
                .collect(),
            radius_spread: self.radius_spread,
            triangulation_residual: self.triangulation_residual,
            scale_applied: self.scale_applied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: String,
    pub j: String,
    pub alpha_deg: Option<f64>,
    pub theta_ij: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereOutputFile {
    pub pair: Option<PairRecord>,
    pub spheres: Vec<SphereRecord>,
}

impl SphereOutputFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sphere file serializes");
        s.push('\n');
        s
    }
}

// ---------------------------------------------------------------------------
// ASCII PLY

/// An ASCII PLY file whose vertex coordinates can be rescaled. All other
/// content (extra vertex properties, other elements, comments) is carried
/// through verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    header: Vec<String>,
    xyz_columns: [usize; 3],
    vertices: Vec<Vec<String>>,
    trailing: Vec<String>,
}

impl PlyCloud {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let err = |m: String| Error::Parse(format!("PLY: {m}"));
        if lines.next().map(str::trim) != Some("ply") {
            return Err(err("missing `ply` magic".into()));
        }
        let mut header = vec!["ply".to_string()];
        let mut vertex_count = None;
        let mut in_vertex = false;
        let mut props: Vec<String> = Vec::new();
        let mut seen_vertex = false;
        let mut ended = false;
        let mut other_rows = 0usize;
        for line in lines.by_ref() {
            header.push(line.to_string());
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["format", fmt, ..] => {
                    if *fmt != "ascii" {
                        return Err(err(format!("only ASCII PLY is supported, found `{fmt}`")));
                    }
                }
                ["element", name, count] => {
                    in_vertex = *name == "vertex";
                    if in_vertex {
                        if seen_vertex {
                            return Err(err("duplicate vertex element".into()));
                        }
                        seen_vertex = true;
                        vertex_count = Some(
                            count
                                .parse::<usize>()
                                .map_err(|_| err(format!("bad vertex count `{count}`")))?,
                        );
                    } else if !seen_vertex {
                        // Vertex rows must lead the body for the pass-through.
                        return Err(err("vertex element must be the first element".into()));
                    } else {
                        other_rows += count
                            .parse::<usize>()
                            .map_err(|_| err(format!("bad `{name}` count `{count}`")))?;
                    }
                }
                ["property", "list", ..] if in_vertex => {
                    return Err(err("list properties on vertices are not supported".into()));
                }
                ["property", _ty, name] if in_vertex => props.push(name.to_string()),
                ["end_header"] => {
                    ended = true;
                    break;
                }
                _ => {}
            }
        }
        if !ended {
            return Err(err("missing end_header".into()));
        }
        let count = vertex_count.ok_or_else(|| err("no vertex element".into()))?;
        let col = |n: &str| {
            props
                .iter()
                .position(|p| p == n)
                .ok_or_else(|| err(format!("vertex property `{n}` missing")))
        };
        let xyz_columns = [col("x")?, col("y")?, col("z")?];
        let mut vertices = Vec::with_capacity(count);
        for n in 0..count {
            let line = lines.next().ok_or_else(|| err(format!("expected {count} vertices, found {n}")))?;
            let row: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if row.len() != props.len() {
                return Err(err(format!("vertex {n} has {} values, expected {}", row.len(), props.len())));
            }
            for &c in &xyz_columns {
                row[c]
                    .parse::<f64>()
                    .map_err(|_| err(format!("vertex {n}: `{}` is not a number", row[c])))?;
            }
            vertices.push(row);
        }
        let trailing: Vec<String> = lines.map(str::to_string).collect();
        let rows = trailing.iter().filter(|l| !l.trim().is_empty()).count();
        if rows != other_rows {
            return Err(err(format!("expected {other_rows} rows after the vertices, found {rows}")));
        }
        Ok(PlyCloud {
            header,
            xyz_columns,
            vertices,
            trailing,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn point(&self, n: usize) -> Vector3<f64> {
        let row = &self.vertices[n];
        let [x, y, z] = self.xyz_columns.map(|c| row[c].parse::<f64>().expect("validated on parse"));
        Vector3::new(x, y, z)
    }

    pub fn scaled(&self, s: f64) -> PlyCloud {
        let mut out = self.clone();
        for row in &mut out.vertices {
            for &c in &self.xyz_columns {
                let v: f64 = row[c].parse().expect("validated on parse");
                row[c] = format!("{}", v * s);
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for line in &self.header {
            s.push_str(line);
            s.push('\n');
        }
        for row in &self.vertices {
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        for line in &self.trailing {
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}


// ---------------------------------------------------------------------------
// Command reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub k_sigma: f64,
    pub default_sigma_px: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub ellipses: Vec<GateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScoreRecord {
    pub i: String,
    pub j: String,
    pub alpha_deg: f64,
    pub ov_i: f64,
    pub ov_j: f64,
    pub theta_ij: f64,
}

impl PairScoreRecord {
    pub fn new(s: &PairScore) -> Self {
        PairScoreRecord {
            i: s.i.clone(),
            j: s.j.clone(),
            alpha_deg: s.alpha_ij.to_degrees(),
            ov_i: s.ov_i,
            ov_j: s.ov_j,
            theta_ij: s.theta_ij,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub min_angle_deg: f64,
    pub best: PairScoreRecord,
    pub warnings: Vec<String>,
    /// Every pair sharing tie points, sorted by `(i, j)`.
    pub pairs: Vec<PairScoreRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub ellipse_l: String,
    pub ellipse_k: String,
    pub epipolar_distance: f64,
    pub reprojection_distance: f64,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pair: PairRecord,
    pub warnings: Vec<String>,
    pub matches: Vec<MatchRecord>,
    pub unmatched_l: Vec<String>,
    pub unmatched_k: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub sphere_id: String,
    pub real_radius: f64,
    pub estimated_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub s_r: f64,
    pub residual_rmse: f64,
    pub anchors: Vec<AnchorRecord>,
}

/// Pretty JSON with a trailing newline.
pub fn to_json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub const STATS_COLUMNS: [&str; 15] = [
    "series",
    "k",
    "p",
    "center_mean",
    "center_min",
    "center_max",
    "radius_mean",
    "radius_min",
    "radius_max",
    "combined_mean",
    "combined_min",
    "combined_max",
    "mean_ms",
    "failures",
    "missing",
];

/// Monte-Carlo statistics as CSV. `mean_ms` is left empty unless
/// `with_timing` is set, keeping the file reproducible byte for byte.
pub fn write_stats(report: &MonteCarloReport, with_timing: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATS_COLUMNS).expect("in-memory write");
    let rows = report
        .per_k
        .iter()
        .map(|s| ("random", s))
        .chain(std::iter::once(("best_pair", &report.best_pair)));
    for (series, s) in rows {
        let ms = if with_timing { s.mean_ms.to_string() } else { String::new() };
        w.write_record([
            series.to_string(),
            s.k.to_string(),
            s.p.to_string(),
            s.center.mean.to_string(),
            s.center.min.to_string(),
            s.center.max.to_string(),
            s.radius.mean.to_string(),
            s.radius.min.to_string(),
            s.radius.max.to_string(),
            s.combined.mean.to_string(),
            s.combined.min.to_string(),
            s.combined.max.to_string(),
            ms,
            s.failures.to_string(),
            s.missing.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
