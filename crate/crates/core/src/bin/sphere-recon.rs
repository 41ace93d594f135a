use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sphere_recon::error::{Error, Result};
use sphere_recon::io::{
    read_ellipses, read_network, to_json_text, write_atomic, write_ellipses, write_stats, AnchorRecord, FilterReport,
    GateRecord, MatchRecord, MatchReport, PairRecord, PairScoreRecord, PairReport, PlyCloud, ScaleReport,
    SphereOutputFile,
};
use sphere_recon::network::{score_pairs, ImageNetwork};
use sphere_recon::pipeline::{
    gate_ellipses, parse_anchors, run_matching, run_reconstruction, scale_sphere_file, select_pair, GateOptions,
    PairChoice, ReconstructOptions, StageError,
};
use sphere_recon::synth::{gate_options_for, simulate, SceneConfig};
use sphere_recon::EllipseObservation;

#[derive(Parser)]
#[command(name = "sphere-recon", version, about = "Reconstruct spheres from calibrated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep only ellipses consistent with the image of a sphere.
    Filter(FilterArgs),
    /// Report the best-conditioned image pair.
    SelectPair(SelectPairArgs),
    /// Match spherical ellipses between the two images of a pair.
    Match(PipelineArgs),
    /// Gate, select a pair, match and reconstruct every sphere.
    Reconstruct(PipelineArgs),
    /// Fix the metric scale from spheres of known radius.
    Scale(ScaleArgs),
    /// Monte-Carlo view-count study on a synthetic scene.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct GateFlags {
    #[arg(long, default_value_t = 2.0)]
    k_sigma: f64,
    /// Per-parameter standard deviation for ellipses without covariance.
    #[arg(long, default_value_t = 0.5)]
    default_sigma_px: f64,
}

impl GateFlags {
    fn options(&self) -> GateOptions {
        GateOptions {
            k_sigma: self.k_sigma,
            default_sigma_px: self.default_sigma_px,
        }
    }
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    ellipses: PathBuf,
    #[command(flatten)]
    gate: GateFlags,
    /// Accepted ellipses as CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-ellipse gate report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SelectPairArgs {
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    min_angle_deg: f64,
    /// Ellipses used to place a substitute tie point when the network has
    /// none.
    #[arg(long)]
    ellipses: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    tol_px: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    ellipses: PathBuf,
    /// `auto` or two image ids separated by a comma.
    #[arg(long, default_value = "auto")]
    pair: String,
    #[arg(long, default_value_t = 20.0)]
    min_angle_deg: f64,
    #[arg(long, default_value_t = 3.0)]
    tol_px: f64,
    #[command(flatten)]
    gate: GateFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    spheres: PathBuf,
    /// Known radii as `sphere_id:radius,...`.
    #[arg(long)]
    anchors: String,
    /// ASCII PLY point cloud to rescale.
    #[arg(long, requires = "out")]
    points: Option<PathBuf>,
    /// Destination of the rescaled point cloud.
    #[arg(long, requires = "points")]
    out: Option<PathBuf>,
    /// Destination of the rescaled sphere file.
    #[arg(long)]
    spheres_out: Option<PathBuf>,
    /// Destination of the scale report; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene configuration as JSON; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,30")]
    k: Vec<usize>,
    /// Ellipse noise in pixels, overriding the configuration.
    #[arg(long)]
    sigma: Option<f64>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock times in `mean_ms`. Timings vary between runs.
    #[arg(long)]
    timing: bool,
}

enum Failure {
    Plain(Error),
    Stage(StageError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Plain(Error::Io(e))
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load_network(path: &Path) -> Result<ImageNetwork> {
    read_network(path)?.to_network()
}

fn parse_pair(spec: &str) -> Result<PairChoice> {
    if spec.trim() == "auto" {
        return Ok(PairChoice::Auto);
    }
    match spec.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [i, j] if !i.is_empty() && !j.is_empty() => Ok(PairChoice::Fixed(i.to_string(), j.to_string())),
        _ => Err(Error::Parse(format!("--pair expects `auto` or `i,j`, got `{spec}`"))),
    }
}

fn check_ellipse_images(network: &ImageNetwork, ellipses: &[EllipseObservation]) -> Result<()> {
    match ellipses.iter().find(|e| network.view(&e.image_id).is_none()) {
        Some(e) => Err(Error::UnknownImage(e.image_id.clone())),
        None => Ok(()),
    }
}

fn pipeline_options(args: &PipelineArgs) -> Result<ReconstructOptions> {
    Ok(ReconstructOptions {
        gate: args.gate.options(),
        pair: parse_pair(&args.pair)?,
        min_angle: args.min_angle_deg.to_radians(),
        tol_px: args.tol_px,
    })
}

fn cmd_filter(args: &FilterArgs) -> std::result::Result<(), Failure> {
    let network = load_network(&args.cameras)?;
    let ellipses = read_ellipses(&args.ellipses)?;
    let gated = gate_ellipses(&network.views, &ellipses, &args.gate.options())?;
    let accepted: Vec<EllipseObservation> = gated
        .iter()
        .filter(|g| g.report.accepted)
        .map(|g| g.obs.clone())
        .collect();
    let report = FilterReport {
        k_sigma: args.gate.k_sigma,
        default_sigma_px: args.gate.default_sigma_px,
        accepted: accepted.len(),
        rejected: gated.len() - accepted.len(),
        ellipses: gated.iter().map(|g| GateRecord::new(&g.obs, &g.report)).collect(),
    };
    eprintln!("{} of {} ellipses accepted", report.accepted, gated.len());
    emit(args.out.as_deref(), &write_ellipses(&accepted))?;
    if let Some(path) = &args.report {
        write_atomic(path, to_json_text(&report).as_bytes())?;
    }
    Ok(())
}

fn cmd_select_pair(args: &SelectPairArgs) -> std::result::Result<(), Failure> {
    let network = load_network(&args.cameras)?;
    let ellipses = match &args.ellipses {
        Some(path) => read_ellipses(path)?,
        None => Vec::new(),
    };
    check_ellipse_images(&network, &ellipses)?;
    let min_angle = args.min_angle_deg.to_radians();
    let selection = select_pair(&network, &ellipses, &PairChoice::Auto, min_angle, args.tol_px)?;
    warn_all(&selection.warnings);
    let best = selection.score.as_ref().expect("automatic selection carries a score");
    let pairs = if network.tie_points.is_empty() {
        Vec::new()
    } else {
        score_pairs(&network).iter().map(PairScoreRecord::new).collect()
    };
    let report = PairReport {
        min_angle_deg: args.min_angle_deg,
        best: PairScoreRecord::new(best),
        warnings: selection.warnings.clone(),
        pairs,
    };
    emit(args.out.as_deref(), &to_json_text(&report))?;
    Ok(())
}

fn cmd_match(args: &PipelineArgs) -> std::result::Result<(), Failure> {
    let network = load_network(&args.cameras)?;
    let ellipses = read_ellipses(&args.ellipses)?;
    check_ellipse_images(&network, &ellipses)?;
    let m = run_matching(&network, &ellipses, &pipeline_options(args)?)?;
    warn_all(&m.selection.warnings);
    let sel = &m.selection;
    let report = MatchReport {
        pair: PairRecord {
            i: sel.i.clone(),
            j: sel.j.clone(),
            alpha_deg: sel.score.as_ref().map(|s| s.alpha_ij.to_degrees()),
            theta_ij: sel.score.as_ref().map(|s| s.theta_ij),
        },
        warnings: sel.warnings.clone(),
        matches: m
            .outcome
            .matches
            .iter()
            .map(|c| {
                let s = &c.sphere.sphere;
                MatchRecord {
                    ellipse_l: c.ellipse_l.clone(),
                    ellipse_k: c.ellipse_k.clone(),
                    epipolar_distance: c.epipolar_distance,
                    reprojection_distance: c.reprojection_distance,
                    center: [s.center.x, s.center.y, s.center.z],
                    radius: s.radius,
                }
            })
            .collect(),
        unmatched_l: m.outcome.unmatched_l.clone(),
        unmatched_k: m.outcome.unmatched_k.clone(),
    };
    emit(args.out.as_deref(), &to_json_text(&report))?;
    Ok(())
}

fn cmd_reconstruct(args: &PipelineArgs) -> std::result::Result<(), Failure> {
    let network = load_network(&args.cameras)?;
    let ellipses = read_ellipses(&args.ellipses)?;
    check_ellipse_images(&network, &ellipses)?;
    let (m, file) = run_reconstruction(&network, &ellipses, &pipeline_options(args)?)?;
    warn_all(&m.selection.warnings);
    eprintln!(
        "{} spheres from pair ({}, {})",
        file.spheres.len(),
        m.selection.i,
        m.selection.j
    );
    emit(args.out.as_deref(), &file.to_json())?;
    Ok(())
}

fn cmd_scale(args: &ScaleArgs) -> std::result::Result<(), Failure> {
    let file = SphereOutputFile::parse(&std::fs::read_to_string(&args.spheres)?)?;
    let anchors = parse_anchors(&args.anchors)?;
    let cloud = match &args.points {
        Some(path) => Some(PlyCloud::parse(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    let (scale, scaled) = scale_sphere_file(&file, &anchors)?;
    let report = ScaleReport {
        s_r: scale.s_r,
        residual_rmse: scale.residual_rmse,
        anchors: anchors
            .iter()
            .map(|(id, real)| AnchorRecord {
                sphere_id: id.clone(),
                real_radius: *real,
                estimated_radius: file
                    .spheres
                    .iter()
                    .find(|s| &s.sphere_id == id)
                    .map(|s| s.radius)
                    .expect("anchors resolved by scaling"),
            })
            .collect(),
    };
    if let (Some(cloud), Some(out)) = (&cloud, &args.out) {
        write_atomic(out, cloud.scaled(scale.s_r).to_text().as_bytes())?;
    }
    if let Some(path) = &args.spheres_out {
        write_atomic(path, scaled.to_json().as_bytes())?;
    }
    emit(args.report.as_deref(), &to_json_text(&report))?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> std::result::Result<(), Failure> {
    let mut cfg: SceneConfig = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?).map_err(Error::from)?,
        None => SceneConfig::default(),
    };
    if let Some(sigma) = args.sigma {
        if !(sigma >= 0.0) {
            return Err(Error::Parse(format!("--sigma must be non-negative, got {sigma}")).into());
        }
        cfg.sigma_px = sigma;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let opts = ReconstructOptions {
        gate: gate_options_for(&cfg),
        ..ReconstructOptions::default()
    };
    let report = simulate(&cfg, &args.k, &opts)?;
    for s in report.per_k.iter().filter(|s| s.failures > 0) {
        eprintln!("warning: k = {}: {} of {} trials failed", s.k, s.failures, s.p);
    }
    emit(args.out.as_deref(), &write_stats(&report, args.timing))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Filter(a) => cmd_filter(a),
        Command::SelectPair(a) => cmd_select_pair(a),
        Command::Match(a) => cmd_match(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Scale(a) => cmd_scale(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Plain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.error.exit_code() as u8)
        }
    }
}
