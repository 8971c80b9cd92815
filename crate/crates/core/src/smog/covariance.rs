//! 2×2 covariances in (azimuth, elevation) coordinates with guaranteed PSD.

use crate::autodiff::graph::softplus;
use crate::error::{Error, Result};

/// Lower bound added to every variance after the softplus.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Diagonal jitter used for Cholesky factors and singular densities.
pub const JITTER: f64 = 1e-9;

/// Symmetric 2×2 covariance `[[var_theta, cov], [cov, var_phi]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub var_theta: f64,
    pub var_phi: f64,
    pub cov: f64,
}

impl Cov2 {
    pub fn diagonal(var_theta: f64, var_phi: f64) -> Self {
        Self {
            var_theta,
            var_phi,
            cov: 0.0,
        }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.var_theta, self.cov], [self.cov, self.var_phi]]
    }

    pub fn determinant(&self) -> f64 {
        self.var_theta * self.var_phi - self.cov * self.cov
    }

    /// `(λ₁, λ₂)` with `λ₁ ≥ λ₂`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        eigen_closed_form(self.var_theta, self.cov, self.var_phi)
    }

    /// Correlation coefficient `cov / (σ_θ σ_ϕ)`.
    pub fn correlation(&self) -> f64 {
        self.cov / (self.var_theta * self.var_phi).sqrt()
    }

    /// Lower Cholesky factor `[l11, l21, l22]` of `Σ + jitter·I`.
    pub fn cholesky(&self) -> [f64; 3] {
        let l11 = (self.var_theta + JITTER).max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.cov / l11 } else { 0.0 };
        let l22 = (self.var_phi + JITTER - l21 * l21).max(0.0).sqrt();
        [l11, l21, l22]
    }
}

fn eigen_closed_form(a: f64, b: f64, c: f64) -> (f64, f64) {
    let tr = a + c;
    // (a+c)² − 4(ac − b²) = (a−c)² + 4b²
    let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    ((tr + disc) / 2.0, (tr - disc) / 2.0)
}

/// Closed-form eigenvalues of a symmetric 2×2 matrix, larger first.
pub fn eigenvalues_2x2(m: [[f64; 2]; 2]) -> Result<(f64, f64)> {
    if (m[0][1] - m[1][0]).abs() >= 1e-9 {
        return Err(Error::Asymmetric(m[0][1], m[1][0]));
    }
    Ok(eigen_closed_form(
        m[0][0],
        0.5 * (m[0][1] + m[1][0]),
        m[1][1],
    ))
}

/// Variances through softplus plus a floor; the covariance is clamped to
/// `[−σ_θ σ_ϕ, σ_θ σ_ϕ]`, the exact PSD region for a symmetric 2×2 matrix.
pub fn build_covariance_clamped(raw_var_theta: f64, raw_var_phi: f64, raw_cov: f64) -> Cov2 {
    let var_theta = softplus(raw_var_theta) + VARIANCE_FLOOR;
    let var_phi = softplus(raw_var_phi) + VARIANCE_FLOOR;
    let bound = var_theta.sqrt() * var_phi.sqrt();
    Cov2 {
        var_theta,
        var_phi,
        cov: raw_cov.clamp(-bound, bound),
    }
}

/// `R(angle) · diag(d1, d2) · R(angle)ᵀ` with `dᵢ = softplus(rawᵢ) + floor`.
pub fn build_covariance_rotdiag(angle: f64, raw_d1: f64, raw_d2: f64) -> Cov2 {
    let d1 = softplus(raw_d1) + VARIANCE_FLOOR;
    let d2 = softplus(raw_d2) + VARIANCE_FLOOR;
    rotdiag(angle, d1, d2)
}

/// `R(angle) · diag(d1, d2) · R(angle)ᵀ` for already positive `d1`, `d2`.
pub fn rotdiag(angle: f64, d1: f64, d2: f64) -> Cov2 {
    let (s, c) = angle.sin_cos();
    Cov2 {
        var_theta: c * c * d1 + s * s * d2,
        var_phi: s * s * d1 + c * c * d2,
        cov: c * s * (d1 - d2),
    }
}

/// Inverse of softplus, for choosing raw inputs that hit a target variance.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(eʸ − 1), written stably for large y
    y + (-(-y).exp_m1()).ln()
}
