//! 2×2 matrices in SL(2,ℝ), the rotation/dilation generators and the
//! canonical `R(ψ−χ)·Z(μ)·R(χ)` form of `Z(λ₂)·R(φ)·Z(λ₁)`.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use serde::Serialize;
use thiserror::Error;

/// Below this distance from 1 a norm is treated as the rotation case.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("determinant {det} is not 1 (tolerance {tol})")]
    NotUnimodular { det: f64, tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mat2 {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 { m11: 1.0, m12: 0.0, m21: 0.0, m22: 1.0 };

    pub const fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Mat2 { m11, m12, m21, m22 }
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m11, self.m21, self.m12, self.m22)
    }

    /// Inverse of a determinant-one matrix (the adjugate).
    pub fn inverse_unimodular(&self) -> Mat2 {
        Mat2::new(self.m22, -self.m12, -self.m21, self.m11)
    }

    pub fn inverse(&self) -> Mat2 {
        let d = self.det();
        Mat2::new(self.m22 / d, -self.m12 / d, -self.m21 / d, self.m11 / d)
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.m11 * s, self.m12 * s, self.m21 * s, self.m22 * s)
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.m11 - o.m11, self.m12 - o.m12, self.m21 - o.m21, self.m22 - o.m22)
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.m11 + o.m11, self.m12 + o.m12, self.m21 + o.m21, self.m22 + o.m22)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.m11 * v[0] + self.m12 * v[1], self.m21 * v[0] + self.m22 * v[1]]
    }

    pub fn frobenius(&self) -> f64 {
        (self.m11 * self.m11 + self.m12 * self.m12 + self.m21 * self.m21 + self.m22 * self.m22)
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.m11.abs().max(self.m12.abs()).max(self.m21.abs()).max(self.m22.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.m11.is_finite() && self.m12.is_finite() && self.m21.is_finite() && self.m22.is_finite()
    }

    /// Frobenius distance to `o` relative to the Frobenius norm of `self`.
    pub fn rel_diff(&self, o: &Mat2) -> f64 {
        self.sub(o).frobenius() / self.frobenius()
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m11 * o.m11 + self.m12 * o.m21,
            self.m11 * o.m12 + self.m12 * o.m22,
            self.m21 * o.m11 + self.m22 * o.m21,
            self.m21 * o.m12 + self.m22 * o.m22,
        )
    }
}

/// `R(φ) = [[cos φ, sin φ], [−sin φ, cos φ]]`.
pub fn rot(phi: f64) -> Mat2 {
    let (s, c) = phi.sin_cos();
    Mat2::new(c, s, -s, c)
}

/// `Z(λ) = diag{λ, λ⁻¹}`.
pub fn diag(lambda: f64) -> Result<Mat2, LinalgError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(LinalgError::Domain(format!("diag needs a positive finite lambda, got {lambda}")));
    }
    Ok(diag_unchecked(lambda))
}

#[inline]
pub(crate) fn diag_unchecked(lambda: f64) -> Mat2 {
    Mat2::new(lambda, 0.0, 0.0, 1.0 / lambda)
}

/// Both singular values, largest first.
pub fn singular_values(m: &Mat2) -> (f64, f64) {
    let p = (m.m11 + m.m22).hypot(m.m12 - m.m21);
    let q = (m.m11 - m.m22).hypot(m.m12 + m.m21);
    (0.5 * (p + q), 0.5 * (p - q).abs())
}

/// Largest singular value.
pub fn operator_norm(m: &Mat2) -> f64 {
    singular_values(m).0
}

/// Top singular triple `(σ₁, u₁, v₁)` with `m·v₁ = σ₁·u₁`; any scale.
pub fn top_singular(m: &Mat2) -> (f64, [f64; 2], [f64; 2]) {
    let sigma = operator_norm(m);
    let p = m.m11 * m.m11 + m.m21 * m.m21;
    let q = m.m11 * m.m12 + m.m21 * m.m22;
    let r = m.m12 * m.m12 + m.m22 * m.m22;
    let chi = 0.5 * (2.0 * q).atan2(p - r);
    let v = [chi.cos(), chi.sin()];
    let w = m.apply(v);
    let u = if sigma > 0.0 { [w[0] / sigma, w[1] / sigma] } else { [1.0, 0.0] };
    (sigma, u, v)
}

/// Wrap into `(−π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Wrap into `(−π/2, π/2]`, i.e. reduce a line direction.
pub fn wrap_half_pi(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r > PI / 2.0 {
        r - PI
    } else {
        r
    }
}

/// Canonical form of `Z(λ₂)·R(φ)·Z(λ₁)` with all intermediates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RzrDecomposition {
    pub psi: f64,
    pub chi: f64,
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta: f64,
}

impl RzrDecomposition {
    /// Angle of the outer rotation, `ψ − χ`.
    pub fn outer(&self) -> f64 {
        self.psi - self.chi
    }

    pub fn reconstruct(&self) -> Mat2 {
        rot(self.psi - self.chi) * diag_unchecked(self.mu) * rot(self.chi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.mu - 1.0 <= DEGENERATE_TOL
    }
}

/// Closed-form canonical decomposition of `Z(λ₂)·R(φ)·Z(λ₁)`.
///
/// `ψ` solves `tan ψ = β tan φ` on the branch that tracks `φ`, so it lies in
/// `[0, π)` whenever `φ` does. `χ = ½·atan2(2b, 1 − c)`; it stays inside
/// `[−π/4, π/4]` exactly when `c ≤ 1`.
pub fn rzr_decompose(lambda2: f64, phi: f64, lambda1: f64) -> Result<RzrDecomposition, LinalgError> {
    if !(lambda1 > 1.0 && lambda2 > 1.0) || !lambda1.is_finite() || !lambda2.is_finite() {
        return Err(LinalgError::Domain(format!(
            "rzr_decompose needs lambda1, lambda2 > 1, got {lambda1}, {lambda2}"
        )));
    }
    if !phi.is_finite() {
        return Err(LinalgError::Domain(format!("phi must be finite, got {phi}")));
    }
    let (s, c) = phi.sin_cos();
    let i1 = 1.0 / (lambda1 * lambda1);
    let i2 = 1.0 / (lambda2 * lambda2);
    let beta = (i1 + i2) / (1.0 + i1 * i2);
    let den = lambda2 * lambda2 * c * c + beta * s * s;
    let a = (lambda1 / lambda2) * den / (c * c + beta * beta * s * s).sqrt();
    let ratio = lambda2 / lambda1;
    let b = ratio * ratio * (1.0 - i2 * i2) / (1.0 + i1 * i2) * s * c / den;
    let cc = b * b + 1.0 / (a * a);
    let disc = ((1.0 + cc) * (1.0 + cc) - 4.0 / (a * a)).max(0.0);
    let mu = 0.5 * a * (1.0 + cc + disc.sqrt());

    if mu - 1.0 <= DEGENERATE_TOL {
        // Rotation case: χ = 0, ψ the polar angle lifted next to φ.
        let m = diag_unchecked(lambda2) * rot(phi) * diag_unchecked(lambda1);
        let theta = m.m12.atan2(m.m11);
        let psi = theta + TAU * ((phi - theta) / TAU).round();
        return Ok(RzrDecomposition { psi, chi: 0.0, mu: 1.0, a, b, c: cc, beta });
    }

    let psi0 = (beta * s).atan2(c);
    let psi = phi + wrap_pi(psi0 - phi);
    let chi = 0.5 * (2.0 * b).atan2(1.0 - cc);
    Ok(RzrDecomposition { psi, chi, mu, a, b, c: cc, beta })
}

/// `R(Φ)·Z(μ)·R(χ)` form of an arbitrary unimodular matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Canonical {
    pub phi: f64,
    pub mu: f64,
    pub chi: f64,
}

impl Canonical {
    pub fn reconstruct(&self) -> Mat2 {
        rot(self.phi) * diag_unchecked(self.mu) * rot(self.chi)
    }
}

/// Canonical form via the singular decomposition. `χ ∈ (−π/2, π/2]`,
/// `Φ ∈ (−π, π]`; the rotation case returns the polar angle and `χ = 0`.
pub fn rzr_of_matrix(m: &Mat2) -> Result<Canonical, LinalgError> {
    let det = m.det();
    // Rounding in the determinant of a product grows like its squared norm.
    let tol = (1e-12 * m.frobenius().powi(2)).max(1e-6);
    if !m.is_finite() || (det - 1.0).abs() > tol {
        return Err(LinalgError::NotUnimodular { det, tol });
    }
    let mu = operator_norm(m);
    if mu - 1.0 <= DEGENERATE_TOL {
        return Ok(Canonical { phi: m.m12.atan2(m.m11), mu: 1.0, chi: 0.0 });
    }
    let (_, u, v) = top_singular(m);
    let chi = v[1].atan2(v[0]);
    let phi = (-u[1]).atan2(u[0]);
    // v was chosen with χ = ½ atan2(.), so χ is already in (−π/2, π/2].
    Ok(Canonical { phi, mu, chi })
}
