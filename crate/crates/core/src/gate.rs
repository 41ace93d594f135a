//! Statistical test for whether an ellipse is the image of a sphere.
//!
//! For a spherical ellipse the axis ratio is fixed by the center offset
//! from the principal point:
//!
//! ```text
//! a_e / b_e = sqrt(((x_ce - p_x)^2 + (y_ce - p_y)^2) / (f^2 + b_e^2) + 1)
//! ```
//!
//! `tau` measures the departure from that identity. Its variance follows by
//! first-order propagation through the analytic Jacobian, with ellipse
//! parameters and IOPs treated as uncorrelated blocks.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector};

use crate::camera::{check_psd, Ellipse, Intrinsics};
use crate::error::Result;

pub type TauJacobian = SVector<f64, 7>;

pub const DEFAULT_K: f64 = 2.0;
/// Standard deviation assumed for every ellipse parameter when the detector
/// supplies no covariance.
pub const DEFAULT_SIGMA_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateReport {
    pub tau: f64,
    pub sigma_tau: f64,
    pub k: f64,
    pub accepted: bool,
}

fn radical(e: &Ellipse, k: &Intrinsics) -> (f64, f64, f64, f64) {
    let dx = e.x_ce - k.px;
    let dy = e.y_ce - k.py;
    let q = k.f * k.f + e.b_e * e.b_e;
    let s = ((dx * dx + dy * dy) / q + 1.0).sqrt();
    (dx, dy, q, s)
}

pub fn tau(e: &Ellipse, k: &Intrinsics) -> f64 {
    let (_, _, _, s) = radical(e, k);
    1.0 - e.b_e / e.a_e * s
}

/// Partial derivatives of `tau` in the order
/// (a_e, b_e, x_ce, y_ce, p_x, p_y, f).
pub fn tau_jacobian(e: &Ellipse, k: &Intrinsics) -> TauJacobian {
    let (dx, dy, q, s) = radical(e, k);
    let (a, b, f) = (e.a_e, e.b_e, k.f);
    let d2 = dx * dx + dy * dy;
    let d_a = b * s / (a * a);
    let d_b = -(f * f * d2 + q * q) / (a * s * q * q);
    let d_x = -b * dx / (a * s * q);
    let d_y = -b * dy / (a * s * q);
    let d_f = b * f * d2 / (a * s * q * q);
    TauJacobian::from([d_a, d_b, d_x, d_y, -d_x, -d_y, d_f])
}

/// `J Σ Jᵀ` with `Σ = diag(ellipse_cov, iop_cov)`.
pub fn tau_variance(j: &TauJacobian, ellipse_cov: &Matrix4<f64>, iop_cov: &Matrix3<f64>) -> Result<f64> {
    check_psd(ellipse_cov, "ellipse covariance")?;
    check_psd(iop_cov, "IOP covariance")?;
    let mut sigma = SMatrix::<f64, 7, 7>::zeros();
    sigma.fixed_view_mut::<4, 4>(0, 0).copy_from(ellipse_cov);
    sigma.fixed_view_mut::<3, 3>(4, 4).copy_from(iop_cov);
    let var = (j.transpose() * sigma * j)[(0, 0)];
    Ok(var.max(0.0))
}

pub fn default_ellipse_cov(sigma_px: f64) -> Matrix4<f64> {
    Matrix4::identity() * (sigma_px * sigma_px)
}

pub fn classify_spherical(
    e: &Ellipse,
    k: &Intrinsics,
    ellipse_cov: &Matrix4<f64>,
    iop_cov: &Matrix3<f64>,
    k_sigma: f64,
) -> Result<GateReport> {
    let t = tau(e, k);
    let var = tau_variance(&tau_jacobian(e, k), ellipse_cov, iop_cov)?;
    let sigma_tau = var.sqrt();
    Ok(GateReport {
        tau: t,
        sigma_tau,
        k: k_sigma,
        accepted: t.abs() <= k_sigma * sigma_tau,
    })
}
