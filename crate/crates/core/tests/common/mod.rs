#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sphere_recon::io::{write_ellipses, NetworkFile};
use sphere_recon::synth::Scene;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sphere-recon")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes `cameras.json` and `ellipses.csv` for a scene into `dir`.
pub fn export_scene(scene: &Scene, dir: &Path, with_tie_points: bool) -> (PathBuf, PathBuf) {
    let cameras = dir.join("cameras.json");
    let ellipses = dir.join("ellipses.csv");
    let net = NetworkFile::from_network(&scene.network(), with_tie_points);
    std::fs::write(&cameras, net.to_json()).unwrap();
    std::fs::write(&ellipses, write_ellipses(&scene.observations)).unwrap();
    (cameras, ellipses)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
