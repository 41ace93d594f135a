//! Closed-form reconstruction of spheres from calibrated images.
//!
//! A sphere seen by a pinhole camera projects to an ellipse whose shape is
//! fixed by the sphere's depth and radius. This crate projects spheres,
//! recovers them from two or more views, tests whether an ellipse can be the
//! image of a sphere at all, picks a well-conditioned image pair, matches
//! ellipses across images and fixes the metric scale of a network from
//! spheres of known size.

pub mod camera;
pub mod correspondence;
pub mod error;
pub mod gate;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod projection;
pub mod reconstruction;
pub mod synth;

pub use camera::{CameraView, Ellipse, EllipseObservation, Frame, Intrinsics, Sphere};
pub use error::{Error, Result};
pub use gate::{classify_spherical, tau, tau_jacobian, tau_variance, GateReport};
pub use network::{best_pair, ImageNetwork, PairScore, TiePoint};
pub use projection::project_sphere;
pub use reconstruction::{metric_scale, reconstruct_sphere, ScaleResult, SphereModel};
