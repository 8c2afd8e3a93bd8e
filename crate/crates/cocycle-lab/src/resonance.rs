//! Secondary-collision machinery: asymptotic validators for the two- and
//! three-factor products, block decompositions around a collision, and
//! resonance detection in `t` with window measurement.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use serde::Serialize;
use thiserror::Error;

use crate::collisions::{dominance, CollisionError, Verdict};
use crate::dynamics::{certify_uh, cocycle, measured_c3, CertStatus, CertifyConfig, DynamicsError, HyperbolicityCertificate};
use crate::linalg::{diag, rzr_decompose, rzr_of_matrix, wrap_half_pi, Canonical, LinalgError, Mat2};
use crate::model::{build_two_bump_model, theta_eval, CocycleModel, ModelError, StepProfile, TwoBumpSpec};
use crate::rotation::{circle_diff, circle_dist, orbit_point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error("refused: {0}")]
    Refused(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("orbit enters U_delta(C0) at step {step} of the middle block")]
    Avoidance { step: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
}

/// `μ` with `μ + 1/μ = F`.
pub fn mu_of_f(f: f64) -> Result<f64, ResonanceError> {
    if f.is_nan() || f < 2.0 {
        return Err(ResonanceError::Refused(format!("mu_of_F needs F >= 2, got {f}")));
    }
    let h = 0.5 * f;
    Ok(h + ((h - 1.0) * (h + 1.0)).sqrt())
}

type Poly = [f64; 4];

fn pmul(a: &Poly, b: &Poly) -> Poly {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

fn padd(a: &Poly, b: &Poly, s: f64) -> Poly {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]]
}

fn pder(a: &Poly) -> Poly {
    [a[1], 2.0 * a[2], 3.0 * a[3], 0.0]
}

fn peval(a: &Poly, x: f64) -> f64 {
    ((a[3] * x + a[2]) * x + a[1]) * x + a[0]
}

/// Scalar parameters shared by the polynomial representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolyParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub varkappa: f64,
}

impl PolyParams {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        let i1 = lambda1.powi(-2);
        let i2 = lambda2.powi(-2);
        PolyParams {
            lambda1,
            lambda2,
            beta: (i1 + i2) / (1.0 + i1 * i2),
            gamma: (1.0 - i2 * i2) / (1.0 + i1 * i2),
            varkappa: (lambda2 / lambda1).powi(2),
        }
    }

    pub fn p(&self) -> Poly {
        [2.0 * self.beta, self.lambda2 * self.lambda2 - self.beta, 0.0, 0.0]
    }

    pub fn s(&self) -> Poly {
        [2.0 * self.beta * self.beta, 1.0 - self.beta * self.beta, 0.0, 0.0]
    }

    /// `Q` with the last term `−ϰ²γ²ξ²`; this is the form for which
    /// `F = λ₁/(√2 λ₂)·R/(P√S)` holds identically.
    pub fn q(&self) -> Poly {
        let (k, g, b) = (self.varkappa, self.gamma, self.beta);
        [4.0 * k * b * b, 2.0 * (k * k * g * g + k * (1.0 - b * b)), -k * k * g * g, 0.0]
    }

    /// `Q` with a constant last term `−ϰ²γ²`, as printed.
    pub fn q_printed(&self) -> Poly {
        let (k, g, b) = (self.varkappa, self.gamma, self.beta);
        [4.0 * k * b * b - k * k * g * g, 2.0 * (k * k * g * g + k * (1.0 - b * b)), 0.0, 0.0]
    }

    pub fn r(&self) -> Poly {
        let p = self.p();
        padd(&pmul(&p, &p), &self.q(), 1.0)
    }

    fn f_with(&self, q: &Poly, xi: f64) -> f64 {
        let p = peval(&self.p(), xi);
        let r = p * p + peval(q, xi);
        self.lambda1 / (SQRT_2 * self.lambda2) * r / (p * peval(&self.s(), xi).sqrt())
    }

    pub fn f_poly(&self, xi: f64) -> f64 {
        self.f_with(&self.q(), xi)
    }

    pub fn f_poly_printed(&self, xi: f64) -> f64 {
        self.f_with(&self.q_printed(), xi)
    }

    /// `ϰγ√(ξ(2−ξ))·P/(P² − Q)`.
    pub fn eta_poly(&self, xi: f64) -> f64 {
        let p = peval(&self.p(), xi);
        let q = peval(&self.q(), xi);
        self.varkappa * self.gamma * (xi * (2.0 - xi)).max(0.0).sqrt() * p / (p * p - q)
    }

    /// Coefficients of `PSR' − RSP' − ½PRS'`.
    pub fn a_coeffs(&self) -> Poly {
        let (p, s, r) = (self.p(), self.s(), self.r());
        let t1 = pmul(&pmul(&p, &s), &pder(&r));
        let t2 = pmul(&pmul(&r, &s), &pder(&p));
        let t3 = pmul(&pmul(&p, &r), &pder(&s));
        padd(&padd(&t1, &t2, -1.0), &t3, -0.5)
    }

    /// Coefficients of `ξ(2−ξ)(PQ' − (P² + Q)P') + (1−ξ)P(P² − Q)`, the
    /// numerator of `d log η / dξ` cleared of denominators.
    pub fn b_coeffs(&self) -> Poly {
        let (p, q) = (self.p(), self.q());
        let pp = pmul(&p, &p);
        let inner = padd(&pmul(&p, &pder(&q)), &pmul(&padd(&pp, &q, 1.0), &pder(&p)), -1.0);
        let w = [0.0, 2.0, -1.0, 0.0];
        let second = pmul(&pmul(&[1.0, -1.0, 0.0, 0.0], &p), &padd(&pp, &q, -1.0));
        padd(&pmul(&w, &inner), &second, 1.0)
    }

    /// `α₁` at angle `φ`.
    pub fn alpha1(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let den = self.lambda2 * self.lambda2 * c * c + self.beta * s * s;
        let kg = self.varkappa * self.gamma;
        (self.beta + kg * c * c / den) / (1.0 - self.beta * kg * s * s / den)
    }

    /// Upper end of the `α₁` bracket, `(β + ϰγλ₂⁻²)/(1 − ϰγ)`.
    pub fn alpha1_upper(&self) -> f64 {
        (self.beta + self.varkappa * self.gamma * self.lambda2.powi(-2)) / (1.0 - self.varkappa * self.gamma)
    }
}

/// Smallest positive root of a cubic on `(0, hi]`, by sign scan and bisection.
fn positive_root(c: &Poly, hi: f64) -> Option<f64> {
    let n = 2000;
    let (lo_exp, hi_exp) = (-30.0f64, hi.log10());
    let mut prev = (0.0, peval(c, 0.0));
    for i in 0..=n {
        let x = 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / n as f64);
        let v = peval(c, x);
        if v == 0.0 {
            return Some(x);
        }
        if v.signum() != prev.1.signum() {
            let (mut a, mut b) = (prev.0, x);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if peval(c, m).signum() == peval(c, a).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = (x, v);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticDiagnostics {
    pub lambda1: f64,
    pub lambda2: f64,
    pub xi: f64,
    pub phi: f64,
    /// `F = a(1+c)` from the exact decomposition.
    pub f_of_xi: f64,
    pub f_poly: f64,
    pub f_poly_printed: f64,
    pub p: f64,
    pub q: f64,
    pub q_printed: f64,
    pub r: f64,
    pub s: f64,
    pub beta: f64,
    pub gamma: f64,
    pub varkappa: f64,
    /// `√2·b/(1−c)` from the exact decomposition.
    pub eta: f64,
    /// `ϰγ√(ξ(2−ξ))P/(P² − Q)`.
    pub eta_poly: f64,
    pub alpha1: f64,
    pub a_coeffs: [f64; 4],
    pub b_coeffs: [f64; 4],
    /// `−A₀/A₁`.
    pub xi0: f64,
    /// Positive root of the `B` cubic.
    pub xi_star: f64,
    /// `2βλ₂⁻²`.
    pub xi_star_asymptotic: f64,
    /// `ϰγ/(2λ₂√β)`.
    pub eta_max_asymptotic: f64,
    /// `μ` via `mu_of_f(F)` and via the closed form.
    pub mu_from_f: f64,
    pub mu: f64,
}

pub fn asymptotic_diagnostics(lambda1: f64, lambda2: f64, xi: f64) -> Result<AsymptoticDiagnostics, ResonanceError> {
    if !(0.0..=2.0).contains(&xi) {
        return Err(ResonanceError::Refused(format!("xi must lie in [0, 2], got {xi}")));
    }
    let pp = PolyParams::new(lambda1, lambda2);
    // ξ = cos 2φ + 1 = 2cos²φ.
    let phi = (0.5 * xi).sqrt().clamp(0.0, 1.0).acos();
    let d = rzr_decompose(lambda2, phi, lambda1)?;
    let f = d.a * (1.0 + d.c);
    let a = pp.a_coeffs();
    let b = pp.b_coeffs();
    Ok(AsymptoticDiagnostics {
        lambda1,
        lambda2,
        xi,
        phi,
        f_of_xi: f,
        f_poly: pp.f_poly(xi),
        f_poly_printed: pp.f_poly_printed(xi),
        p: peval(&pp.p(), xi),
        q: peval(&pp.q(), xi),
        q_printed: peval(&pp.q_printed(), xi),
        r: peval(&pp.r(), xi),
        s: peval(&pp.s(), xi),
        beta: pp.beta,
        gamma: pp.gamma,
        varkappa: pp.varkappa,
        eta: SQRT_2 * d.b / (1.0 - d.c),
        eta_poly: pp.eta_poly(xi),
        alpha1: pp.alpha1(phi),
        a_coeffs: a,
        b_coeffs: b,
        xi0: -a[0] / a[1],
        xi_star: positive_root(&b, 2.0).unwrap_or(f64::NAN),
        xi_star_asymptotic: 2.0 * pp.beta / (lambda2 * lambda2),
        eta_max_asymptotic: pp.varkappa * pp.gamma / (2.0 * lambda2 * pp.beta.sqrt()),
        mu_from_f: mu_of_f(f).unwrap_or(f64::NAN),
        mu: d.mu,
    })
}

/// Golden-section minimum of `f` on `[a, b]`.
fn golden_min(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma3Report {
    pub lambda1: f64,
    pub lambda2: f64,
    /// 1 when `λ₁ ≫ λ₂`, 2 when `λ₂ ≫ λ₁`.
    pub case: u8,
    pub min_mu: f64,
    pub min_f: f64,
    pub xi_min: f64,
    pub phi_min: f64,
    pub bound: f64,
    pub ratio: f64,
    /// Asymptotic location of the minimum for this case.
    pub xi0_asymptotic: f64,
    /// `−A₀/A₁` from the exact cubic coefficients.
    pub xi0_cubic: f64,
    /// Whether the golden bracket around the asymptotic location holds the
    /// global minimum of a log scan.
    pub bracket_contains_global: bool,
    /// Largest `|mu_of_f(F) − μ|/μ` seen during the search.
    pub max_mu_identity_error: f64,
    pub tol: f64,
    pub holds: bool,
}

/// `F(ξ)` from the exact decomposition at `cos²φ = ξ/2`.
fn f_exact(lambda1: f64, lambda2: f64, xi: f64) -> Result<(f64, f64), ResonanceError> {
    let phi = (0.5 * xi).sqrt().clamp(0.0, 1.0).acos();
    let d = rzr_decompose(lambda2, phi, lambda1)?;
    Ok((d.a * (1.0 + d.c), d.mu))
}

pub fn lemma3_validate(lambda1: f64, lambda2: f64, tol: f64) -> Result<Lemma3Report, ResonanceError> {
    if lambda1 < 1e2 || lambda2 < 1e2 {
        return Err(ResonanceError::Refused(format!("both scales must be >= 1e2, got {lambda1}, {lambda2}")));
    }
    let case = if lambda1 / lambda2 >= 1e2 {
        1
    } else if lambda2 / lambda1 >= 1e2 {
        2
    } else {
        return Err(ResonanceError::Refused(format!(
            "scales must differ by a factor >= 1e2, got ratio {}",
            lambda1 / lambda2
        )));
    };
    let (bound, xi0_asym) = if case == 1 {
        (3.0 / (2.0 * SQRT_2) * lambda1 / lambda2, 2.0 * lambda2.powi(-4))
    } else {
        (lambda2 / lambda1, (lambda1 * lambda2).powi(-2))
    };
    let mut max_err = 0.0f64;
    let mut track = |xi: f64| -> f64 {
        match f_exact(lambda1, lambda2, xi) {
            Ok((f, mu)) => {
                if let Ok(m) = mu_of_f(f) {
                    max_err = max_err.max((m - mu).abs() / mu);
                }
                f
            }
            Err(_) => f64::INFINITY,
        }
    };
    // Global log scan over ξ ∈ [1e-30, 2] plus the endpoint ξ = 0.
    let n = 600;
    let mut scan_best = (0.0, track(0.0));
    for i in 0..=n {
        let xi = 10f64.powf(-30.0 + (2f64.log10() + 30.0) * i as f64 / n as f64);
        let f = track(xi);
        if f < scan_best.1 {
            scan_best = (xi, f);
        }
    }
    let (la, lb) = ((xi0_asym / 4.0).ln(), (xi0_asym * 4.0).min(2.0).ln());
    let (lx, fmin) = golden_min(|l| track(l.exp()), la, lb, 200);
    let xi_min = lx.exp();
    let bracket_contains_global = fmin <= scan_best.1 * (1.0 + 1e-12);
    let (fmin, xi_min) = if bracket_contains_global { (fmin, xi_min) } else { (scan_best.1, scan_best.0) };
    let min_mu = mu_of_f(fmin)?;
    let ratio = min_mu / bound;
    let a = PolyParams::new(lambda1, lambda2).a_coeffs();
    Ok(Lemma3Report {
        lambda1,
        lambda2,
        case,
        min_mu,
        min_f: fmin,
        xi_min,
        phi_min: (0.5 * xi_min).sqrt().acos(),
        bound,
        ratio,
        xi0_asymptotic: xi0_asym,
        xi0_cubic: -a[0] / a[1],
        bracket_contains_global,
        max_mu_identity_error: max_err,
        tol,
        holds: (ratio - 1.0).abs() <= tol,
    })
}

/// Step profiles of the two interacting factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionProfiles {
    pub l1: (f64, f64),
    pub r1: f64,
    pub l2: (f64, f64),
    pub r2: f64,
    pub eps: f64,
}

impl Default for InteractionProfiles {
    /// Levels and slopes of the reference two-bump model.
    fn default() -> Self {
        InteractionProfiles { l1: (-2.0 / 3.0, 0.75), r1: 1.0, l2: (2.0 / 3.0, -0.5), r2: -1.0, eps: 1.0 }
    }
}

impl InteractionProfiles {
    pub fn steps(&self) -> Result<(StepProfile, StepProfile), ResonanceError> {
        Ok((
            StepProfile::new(self.l1.0, self.l1.1, self.r1 / self.eps)?,
            StepProfile::new(self.l2.0, self.l2.1, self.r2 / self.eps)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma4Point {
    pub x: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `Φ₂` reduced to `(−π/2, π/2]`.
    pub big_phi2: f64,
    pub chi2: f64,
    pub mu2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma4Report {
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub max_abs_big_phi2: f64,
    /// `π/2 − max|Φ₂|`.
    pub phi2_gap: f64,
    /// `2√β|k⁽²⁾/k⁽¹⁾|^{1/2}`, the `Δ = 0` value from the proof.
    pub gap_proof: f64,
    /// `√β|r⁽²⁾/r⁽¹⁾|^{1/2}`, the statement bound.
    pub gap_statement: f64,
    pub max_abs_chi2: f64,
    /// `(γ/2)(λ₂/λ₁)²`.
    pub chi2_predicted: f64,
    pub min_mu2: f64,
    pub mu2_bound: f64,
    pub alpha1_min: f64,
    pub alpha1_max: f64,
    pub alpha1_upper: f64,
    pub alpha1_bracket_holds: bool,
    /// Location of `max|Φ₂|`.
    pub x_star: f64,
    /// `Δ − sign(Δ)·(1/k⁽¹⁾)|k⁽¹⁾/k⁽²⁾|^{1/2}` (the `Δ = 0` case takes the
    /// positive branch).
    pub x_star_printed: f64,
    /// Same with the extra `√β` factor that the sweep follows.
    pub x_star_scaled: f64,
    /// `tan Φ₂` at `x_star`.
    pub tan_phi2_extremum: f64,
    pub tol: f64,
    pub statement_holds: bool,
    pub chi_holds: bool,
    pub mu_holds: bool,
    pub points: Vec<Lemma4Point>,
}

fn lemma4_sweep(
    lambda1: f64,
    lambda2: f64,
    prof: &InteractionProfiles,
    delta: f64,
    n: usize,
) -> Result<Vec<(Lemma4Point, f64)>, ResonanceError> {
    let (s1, s2) = prof.steps()?;
    let half = 3.0 * prof.eps;
    (0..n)
        .map(|i| {
            let x = -half + 2.0 * half * i as f64 / (n - 1) as f64;
            let phi1 = FRAC_PI_2 + theta_eval(&s1, x - delta);
            let phi2 = FRAC_PI_2 + theta_eval(&s2, x);
            let d = rzr_decompose(lambda2, phi1, lambda1)?;
            let big1 = d.outer();
            // α₁ = tan Φ₁ / tan φ₁.
            let alpha = big1.tan() / phi1.tan();
            let p = Lemma4Point { x, phi1, phi2, big_phi2: wrap_half_pi(phi2 + big1), chi2: d.chi, mu2: d.mu };
            Ok((p, alpha))
        })
        .collect()
}

pub fn lemma4_validate(
    lambda1: f64,
    lambda2: f64,
    prof: &InteractionProfiles,
    delta: f64,
    n_points: usize,
    tol: f64,
) -> Result<Lemma4Report, ResonanceError> {
    if lambda1 <= lambda2 || lambda2 <= 1.0 {
        return Err(ResonanceError::Refused(format!("needs lambda1 > lambda2 > 1, got {lambda1}, {lambda2}")));
    }
    let pp = PolyParams::new(lambda1, lambda2);
    let dmax = prof.eps * pp.beta.sqrt() / (prof.r1 * prof.r2).abs().sqrt();
    if delta.abs() >= dmax {
        return Err(ResonanceError::Refused(format!(
            "|Delta| = {} must stay below eps*sqrt(beta)/|r1 r2|^(1/2) = {dmax}",
            delta.abs()
        )));
    }
    let sweep = lemma4_sweep(lambda1, lambda2, prof, delta, n_points.max(3))?;
    let (imax, _) = sweep
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.big_phi2.abs().total_cmp(&b.1 .0.big_phi2.abs()))
        .unwrap();
    let max_phi = sweep[imax].0.big_phi2.abs();
    let max_chi = sweep.iter().map(|p| p.0.chi2.abs()).fold(0.0, f64::max);
    let min_mu = sweep.iter().map(|p| p.0.mu2).fold(f64::INFINITY, f64::min);
    // α₁ is ill-conditioned where tan φ₁ is near 0 or ∞.
    let alphas: Vec<f64> = sweep
        .iter()
        .filter(|p| {
            let t = p.0.phi1.tan().abs();
            t.is_finite() && t > 1e-3 && t < 1e3
        })
        .map(|p| p.1)
        .collect();
    let a_min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let a_max = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k1 = prof.r1 / prof.eps;
    let k2 = prof.r2 / prof.eps;
    let shift = (k1 / k2).abs().sqrt() / k1;
    let sgn = if delta < 0.0 { -1.0 } else { 1.0 };
    let chi_pred = 0.5 * pp.gamma * (lambda2 / lambda1).powi(2);
    let gap = FRAC_PI_2 - max_phi;
    let gap_statement = pp.beta.sqrt() * (prof.r2 / prof.r1).abs().sqrt();
    let mu_bound = lambda1 / lambda2;
    Ok(Lemma4Report {
        lambda1,
        lambda2,
        delta,
        beta: pp.beta,
        gamma: pp.gamma,
        max_abs_big_phi2: max_phi,
        phi2_gap: gap,
        gap_proof: 2.0 * pp.beta.sqrt() * (k2 / k1).abs().sqrt(),
        gap_statement,
        max_abs_chi2: max_chi,
        chi2_predicted: chi_pred,
        min_mu2: min_mu,
        mu2_bound: mu_bound,
        alpha1_min: a_min,
        alpha1_max: a_max,
        alpha1_upper: pp.alpha1_upper(),
        alpha1_bracket_holds: a_min > pp.beta * (1.0 - tol) && a_max < pp.alpha1_upper() * (1.0 + tol),
        x_star: sweep[imax].0.x,
        x_star_printed: delta - sgn * shift,
        x_star_scaled: delta - sgn * shift * pp.beta.sqrt(),
        tan_phi2_extremum: sweep[imax].0.big_phi2.tan(),
        tol,
        statement_holds: gap >= gap_statement * (1.0 - tol),
        chi_holds: ((max_chi - chi_pred) / chi_pred).abs() <= tol,
        mu_holds: min_mu >= mu_bound * (1.0 - tol),
        points: sweep.into_iter().map(|p| p.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma5Row {
    pub lambda3: f64,
    pub max_abs_tan_phi3: f64,
    pub min_mu3: f64,
    pub tan_ok: bool,
    pub mu_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma5Report {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tan_bound: f64,
    pub mu3_bound: f64,
    /// `min_x μ₂`, playing the role of `μ₁`.
    pub mu1: f64,
    pub lambda3_worst: f64,
    /// `|r⁽¹⁾/r⁽²⁾|·μ₁²/λ₂`.
    pub lambda3_star: f64,
    pub worst_ratio: f64,
    pub tol: f64,
    pub bounds_hold: bool,
    pub worst_within_factor2: bool,
    pub rows: Vec<Lemma5Row>,
}

fn lemma5_row(
    lambda3: f64,
    base: &[Lemma4Point],
    tan_bound: f64,
    mu_bound: f64,
) -> Result<Lemma5Row, ResonanceError> {
    let mut max_tan = 0.0f64;
    let mut min_mu = f64::INFINITY;
    for p in base {
        // Z(λ₃)·R(Φ₂)Z(μ₂)R(χ₂): the trailing R(χ₂) does not change Φ₃ or μ₃.
        let d = rzr_decompose(lambda3, p.big_phi2, p.mu2)?;
        max_tan = max_tan.max(d.outer().tan().abs());
        min_mu = min_mu.min(d.mu);
    }
    Ok(Lemma5Row { lambda3, max_abs_tan_phi3: max_tan, min_mu3: min_mu, tan_ok: max_tan < tan_bound, mu_ok: min_mu >= mu_bound })
}

pub fn lemma5_validate(
    lambda1: f64,
    lambda2: f64,
    lambda3_range: (f64, f64),
    n_lambda3: usize,
    prof: &InteractionProfiles,
    tol: f64,
) -> Result<Lemma5Report, ResonanceError> {
    if lambda1 <= lambda2.powf(1.5) {
        return Err(ResonanceError::Refused(format!("needs lambda1 > lambda2^(3/2), got {lambda1}, {lambda2}")));
    }
    let (lo, hi) = lambda3_range;
    if lo < lambda2.sqrt() * (1.0 - 1e-12) || hi < lo {
        return Err(ResonanceError::Refused(format!("lambda3 range must start at or above sqrt(lambda2) = {}", lambda2.sqrt())));
    }
    let base: Vec<Lemma4Point> = lemma4_sweep(lambda1, lambda2, prof, 0.0, 20_001)?.into_iter().map(|p| p.0).collect();
    let ratio = (prof.r2 / prof.r1).abs();
    let tan_bound = (1.0 / ratio).sqrt() * (1.0 + tol);
    let mu_bound = (1.0 - tol) * 0.5 * (1.0 + ratio) * lambda1 * lambda2.powf(-1.5);
    let n = n_lambda3.max(2);
    let rows = (0..n)
        .map(|i| {
            let l3 = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
            lemma5_row(l3, &base, tan_bound, mu_bound)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ibest = (0..n).min_by(|&a, &b| rows[a].min_mu3.total_cmp(&rows[b].min_mu3)).unwrap();
    let (la, lb) = (rows[ibest.saturating_sub(1)].lambda3.ln(), rows[(ibest + 1).min(n - 1)].lambda3.ln());
    let (lw, _) = golden_min(
        |l| lemma5_row(l.exp(), &base, tan_bound, mu_bound).map(|r| r.min_mu3).unwrap_or(f64::INFINITY),
        la,
        lb,
        80,
    );
    let worst = lw.exp();
    let mu1 = base.iter().map(|p| p.mu2).fold(f64::INFINITY, f64::min);
    let star = mu1 * mu1 / (ratio * lambda2);
    let wr = worst / star;
    Ok(Lemma5Report {
        lambda1,
        lambda2,
        tan_bound,
        mu3_bound: mu_bound,
        mu1,
        lambda3_worst: worst,
        lambda3_star: star,
        worst_ratio: wr,
        tol,
        bounds_hold: rows.iter().all(|r| r.tan_ok && r.mu_ok),
        worst_within_factor2: (0.5..=2.0).contains(&wr),
        rows,
    })
}

/// Smallest `n₋, n₊ ≥ 1` with `(C_M λ_min)^{n₋} > λ_max^{3n/2}`,
/// `(C_M λ_min)^{n₊} > λ_max^{n/2}` and `n + n₋ + n₊ ≤ τ₀`.
pub fn n_pm_from_rates(n: usize, lambda_min: f64, lambda_max: f64, c_m: f64, tau0: u64) -> Option<(usize, usize)> {
    let base = (c_m * lambda_min).ln();
    if !(base > 0.0) || n == 0 {
        return None;
    }
    let smallest = |e: f64| -> usize {
        let target = e * lambda_max.ln();
        let mut k = ((target / base).floor() as usize).max(1);
        while (k as f64) * base <= target {
            k += 1;
        }
        k
    };
    let nm = smallest(1.5 * n as f64);
    let np = smallest(0.5 * n as f64);
    ((n + nm + np) as u64 <= tau0).then_some((nm, np))
}

/// `C_M = C₃/2` with `C₃` measured on the model.
pub fn measured_c_m(model: &CocycleModel) -> f64 {
    0.5 * measured_c3(model, 1 << 14)
}

pub fn select_n_pm(model: &CocycleModel, n: usize, delta: f64, c_m: f64) -> Result<Option<(usize, usize)>, ResonanceError> {
    let dom = dominance(model, delta, 1_000_000)?;
    let t01 = dom.table.tau.first().and_then(|r| r.get(1)).copied().flatten();
    let tau0 = dom.table.tau0.unwrap_or(u64::MAX);
    if dom.verdict != Verdict::Secondary || t01 != Some(n as u64) || tau0 <= n as u64 {
        return Err(ResonanceError::Refused(format!(
            "needs a SECONDARY verdict with tau_01 = {n} < tau_0; got {:?}, tau_01 = {t01:?}, tau_0 = {tau0}",
            dom.verdict
        )));
    }
    Ok(n_pm_from_rates(n, model.lambda.min(), model.lambda.max(), c_m, tau0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDecomposition {
    pub x: f64,
    pub n: usize,
    pub n_minus: usize,
    pub n_plus: usize,
    pub mu_n: f64,
    pub phi_n: f64,
    pub chi_n: f64,
    pub mu_n_minus: f64,
    pub phi_n_minus: f64,
    pub chi_n_minus: f64,
    pub mu_n_plus: f64,
    pub phi_n_plus: f64,
    pub chi_n_plus: f64,
    /// `χ_n + φ(x) + Φ_{n,−}`.
    pub inner1: f64,
    /// `χ_{n,+} + φ(σⁿx) + Φ_n`.
    pub inner2: f64,
    /// Relative error of the seven-factor product against
    /// `Z(λ(σ^{n+n₊}x))·M(σ^{−n₋}x, n₋+n+n₊)`.
    pub reconstruction_error: f64,
    pub c_m: f64,
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub mu_in_bracket: bool,
    /// `|Φ_n|` and `|χ_n|` taken mod π.
    pub max_middle_angle: f64,
    pub max_side_angle: f64,
}

impl BlockDecomposition {
    pub fn angles_within(&self, k: f64, lambda0: f64) -> bool {
        self.max_middle_angle <= k * lambda0.powi(-2)
    }
}

struct Blocks {
    minus: Canonical,
    middle: Canonical,
    plus: Canonical,
}

fn blocks(model: &CocycleModel, x: f64, n: usize, n_minus: usize, n_plus: usize) -> Result<Blocks, ResonanceError> {
    let w = model.omega_value();
    let at = |k: i64| orbit_point(x, k, w);
    let z = |k: i64| diag(model.lambda_at(at(k)));
    let (n, nm, np) = (n as i64, n_minus as i64, n_plus as i64);
    let middle = z(n)? * cocycle(model, at(1), n - 1)?;
    let minus = z(0)? * cocycle(model, at(-nm), nm)?;
    let plus = z(n + np)? * cocycle(model, at(n + 1), np - 1)?;
    Ok(Blocks { minus: rzr_of_matrix(&minus)?, middle: rzr_of_matrix(&middle)?, plus: rzr_of_matrix(&plus)? })
}

fn small(a: f64) -> f64 {
    wrap_half_pi(a).abs()
}

pub fn block_decompose(
    model: &CocycleModel,
    x: f64,
    n: usize,
    n_minus: usize,
    n_plus: usize,
    delta: f64,
    c_m: f64,
) -> Result<BlockDecomposition, ResonanceError> {
    if n == 0 || n_minus == 0 || n_plus == 0 {
        return Err(ResonanceError::Refused("n, n_minus, n_plus must be >= 1".into()));
    }
    let centers = model.bump_centers();
    let c0 = *centers.first().ok_or(CollisionError::NoCriticalPoints)?;
    if circle_dist(x, c0) >= delta {
        return Err(ResonanceError::Refused(format!("x = {x} is not in U_delta(c0), c0 = {c0}, delta = {delta}")));
    }
    let w = model.omega_value();
    for step in 1..n {
        let p = orbit_point(x, step as i64, w);
        if centers.iter().any(|&c| circle_dist(p, c) < delta) {
            return Err(ResonanceError::Avoidance { step });
        }
    }
    let b = blocks(model, x, n, n_minus, n_plus)?;
    let phi_x = model.phi(x);
    let phi_nx = model.phi(orbit_point(x, n as i64, w));
    let inner1 = b.middle.chi + phi_x + b.minus.phi;
    let inner2 = b.plus.chi + phi_nx + b.middle.phi;
    let seven = crate::linalg::rot(b.plus.phi)
        * diag(b.plus.mu)?
        * crate::linalg::rot(inner2)
        * diag(b.middle.mu)?
        * crate::linalg::rot(inner1)
        * diag(b.minus.mu)?
        * crate::linalg::rot(b.minus.chi);
    let total = n_minus + n + n_plus;
    let direct: Mat2 = diag(model.lambda_at(orbit_point(x, (n + n_plus) as i64, w)))?
        * cocycle(model, orbit_point(x, -(n_minus as i64), w), total as i64)?;
    let (lmin, lmax) = (model.lambda.min(), model.lambda.max());
    let mu_lower = (c_m * lmin).powi(n as i32);
    let mu_upper = lmax.powi(n as i32);
    let rel = 1e-12;
    Ok(BlockDecomposition {
        x,
        n,
        n_minus,
        n_plus,
        mu_n: b.middle.mu,
        phi_n: b.middle.phi,
        chi_n: b.middle.chi,
        mu_n_minus: b.minus.mu,
        phi_n_minus: b.minus.phi,
        chi_n_minus: b.minus.chi,
        mu_n_plus: b.plus.mu,
        phi_n_plus: b.plus.phi,
        chi_n_plus: b.plus.chi,
        inner1,
        inner2,
        reconstruction_error: seven.rel_diff(&direct),
        c_m,
        mu_lower,
        mu_upper,
        mu_in_bracket: b.middle.mu >= mu_lower * (1.0 - rel) && b.middle.mu <= mu_upper * (1.0 + rel),
        max_middle_angle: small(b.middle.phi).max(small(b.middle.chi)),
        max_side_angle: [b.minus.phi, b.minus.chi, b.plus.phi, b.plus.chi].iter().map(|&a| small(a)).fold(0.0, f64::max),
    })
}

/// Knobs for resonance location and window measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceConfig {
    /// `None` selects by the integer rule.
    pub n_minus: Option<usize>,
    pub n_plus: Option<usize>,
    /// `None` uses `C₃/2` measured on the model.
    pub c_m: Option<f64>,
    /// Certificate block length; `None` uses `4·τ₀`.
    pub block_length: Option<usize>,
    pub grid_size: usize,
    /// Certificate target as a fraction of `log λ_min`.
    pub target_fraction: f64,
    pub refine_radius: f64,
    pub h_initial: f64,
    pub h_max: f64,
    pub bisect_iters: usize,
    /// Bisection stops early once the bracket is this small relative to its
    /// upper end.
    pub bisect_rel_tol: f64,
    pub measure_window: bool,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        ResonanceConfig {
            n_minus: None,
            n_plus: None,
            c_m: None,
            block_length: None,
            grid_size: 1 << 14,
            target_fraction: 0.25,
            refine_radius: 0.02,
            h_initial: 1e-5,
            h_max: 0.05,
            bisect_iters: 40,
            bisect_rel_tol: 1e-3,
            measure_window: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceWindow {
    pub n: usize,
    pub t0: f64,
    pub t_res: f64,
    /// `σⁿ(c₀) − c₁(t_res)`.
    pub delta_n_res: f64,
    /// `−Φ_n(c₀)/φ'(c₁)`.
    pub delta_lemma6: f64,
    /// `ε[r₀⁻¹(χ_n + Φ_{n,−})(c₀) − r₁⁻¹(χ_{n,+} + Φ_n)(σ^{−n}c₁)]`.
    pub delta_printed: f64,
    pub x1: f64,
    pub x2: f64,
    pub x1_estimate: f64,
    pub x2_estimate: f64,
    pub n_minus: usize,
    pub n_plus: usize,
    pub c_m: f64,
    pub tau0: u64,
    /// `(1 + 2 log λ_max / log(C_M λ_min))·n`.
    pub tau0_required: f64,
    pub block_length: usize,
    pub target_rate: f64,
    pub certified_at_t_res: bool,
    pub h: f64,
    pub h_left: f64,
    pub h_right: f64,
    pub certify_calls: usize,
    pub diagnostics: Vec<String>,
}

/// Signed `t`-representative of `target` closest to `center`.
fn near(target: f64, center: f64) -> f64 {
    center + circle_diff(target, center)
}

/// Root of `g` on `[a, b]` by bisection on its sign.
fn bisect_root(g: impl Fn(f64) -> Result<f64, ResonanceError>, mut a: f64, mut b: f64) -> Result<Option<f64>, ResonanceError> {
    let (mut ga, gb) = (g(a)?, g(b)?);
    if ga == 0.0 {
        return Ok(Some(a));
    }
    if gb == 0.0 {
        return Ok(Some(b));
    }
    if ga.signum() == gb.signum() {
        return Ok(None);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let gm = g(m)?;
        if gm == 0.0 {
            return Ok(Some(m));
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

/// `(φ₁(x), φ₂(x))` inner angles of the seven-factor form.
fn inner_angles(model: &CocycleModel, x: f64, n: usize, nm: usize, np: usize) -> Result<(f64, f64), ResonanceError> {
    let b = blocks(model, x, n, nm, np)?;
    let w = model.omega_value();
    Ok((
        b.middle.chi + model.phi(x) + b.minus.phi,
        b.plus.chi + model.phi(orbit_point(x, n as i64, w)) + b.middle.phi,
    ))
}

fn core_bracket(center: f64, lm: f64, lp: f64, k: f64) -> (f64, f64) {
    let (a, b) = (lm / k, lp / k);
    (center + 0.9 * a.min(b), center + 0.9 * a.max(b))
}

struct Solved {
    x1: f64,
    x2: f64,
}

fn solve_x1_x2(model: &CocycleModel, spec: &TwoBumpSpec, n: usize, nm: usize, np: usize) -> Result<Solved, ResonanceError> {
    let w = model.omega_value();
    let [c0, c1] = model.two_bump().map(|tb| tb.centers()).ok_or(CollisionError::NoCriticalPoints)?;
    let k0 = spec.r0 / spec.eps;
    let k1 = spec.r1 / spec.eps;
    let (a, b) = core_bracket(c0, spec.lm0, spec.lp0, k0);
    let x1 = bisect_root(|x| Ok(inner_angles(model, x, n, nm, np)?.0.cos()), a, b)?
        .ok_or_else(|| ResonanceError::NotFound("cos(phi_1) has no sign change near c0".into()))?;
    let (a, b) = core_bracket(c1, spec.lm1, spec.lp1, k1);
    let back = |y: f64| orbit_point(y, -(n as i64), w);
    let base = back(c1);
    let x2 = bisect_root(
        |y| Ok(inner_angles(model, near(back(y), base), n, nm, np)?.1.cos()),
        a,
        b,
    )?
    .ok_or_else(|| ResonanceError::NotFound("cos(phi_2) has no sign change near sigma^-n c1".into()))?;
    // Report x₂ on the same lift as x₁.
    let x2 = near(back(x2), x1);
    Ok(Solved { x1, x2 })
}

fn certify_at(spec: &TwoBumpSpec, t: f64, block: usize, cfg: &ResonanceConfig) -> Result<HyperbolicityCertificate, ResonanceError> {
    let m = build_two_bump_model(&TwoBumpSpec { t, ..spec.clone() })?;
    let c = CertifyConfig::new(block, cfg.grid_size, cfg.target_fraction * m.lambda.min().ln())
        .refine_near(&m.bump_centers(), cfg.refine_radius);
    Ok(certify_uh(&m, &c)?)
}

/// Distance from `t_res` to the edge of the certified window on one side.
fn window_side(
    spec: &TwoBumpSpec,
    t_res: f64,
    dir: f64,
    block: usize,
    cfg: &ResonanceConfig,
    calls: &mut usize,
) -> Result<f64, ResonanceError> {
    let mut ok = |h: f64| -> Result<bool, ResonanceError> {
        *calls += 1;
        Ok(certify_at(spec, t_res + dir * h, block, cfg)?.status == CertStatus::Certified)
    };
    let (mut lo, mut hi) = (0.0, cfg.h_initial);
    if ok(hi)? {
        lo = hi;
        hi *= 2.0;
        while ok(hi)? {
            lo = hi;
            if hi >= cfg.h_max {
                return Ok(hi);
            }
            hi *= 2.0;
        }
    } else {
        while hi > cfg.h_initial * 1e-6 {
            hi *= 0.5;
            if ok(hi)? {
                lo = hi;
                hi *= 2.0;
                break;
            }
        }
        if lo == 0.0 {
            return Ok(0.0);
        }
    }
    for _ in 0..cfg.bisect_iters {
        if hi - lo <= cfg.bisect_rel_tol * hi {
            break;
        }
        let m = 0.5 * (lo + hi);
        if ok(m)? {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(lo)
}

/// Locate the order-`n` resonance of the two-bump family in `t_range` and
/// measure the certified window around it.
pub fn find_resonance(
    spec: &TwoBumpSpec,
    n: usize,
    t_range: (f64, f64),
    delta: f64,
    cfg: &ResonanceConfig,
) -> Result<ResonanceWindow, ResonanceError> {
    let base = build_two_bump_model(spec)?;
    let w = base.omega_value();
    let target = orbit_point(spec.c0, n as i64, w);
    let mid = 0.5 * (t_range.0 + t_range.1);
    let t0 = near(target - spec.c1_0, mid);
    if t0 < t_range.0 || t0 > t_range.1 {
        return Err(ResonanceError::NotFound(format!("no t0 with sigma^n c0 = c1(t0) in [{}, {}]", t_range.0, t_range.1)));
    }
    let m0 = base.at_t(t0)?;
    let dom = dominance(&m0, delta, 1_000_000)?;
    let tau0 = dom.table.tau0.unwrap_or(u64::MAX);
    let c_m = cfg.c_m.unwrap_or_else(|| measured_c_m(&m0));
    let (nm, np) = match (cfg.n_minus, cfg.n_plus) {
        (Some(a), Some(b)) => (a, b),
        _ => select_n_pm(&m0, n, delta, c_m)?
            .ok_or_else(|| ResonanceError::Refused(format!("no n_minus, n_plus fit under tau_0 = {tau0}")))?,
    };
    let mut diagnostics = Vec::new();

    // g(t) = x₂(t) − x₁(t) on the lift next to c₀.
    let gap = |t: f64| -> Result<f64, ResonanceError> {
        let m = base.at_t(t)?;
        let s = solve_x1_x2(&m, &TwoBumpSpec { t, ..spec.clone() }, n, nm, np)?;
        Ok(s.x2 - s.x1)
    };
    let span = 0.5 * spec.eps;
    let t_res = bisect_root(gap, t0 - span, t0 + span)?
        .ok_or_else(|| ResonanceError::NotFound(format!("x2(t) - x1 keeps its sign on t0 +- {span}")))?;
    let m = base.at_t(t_res)?;
    let s_res = TwoBumpSpec { t: t_res, ..spec.clone() };
    let sol = solve_x1_x2(&m, &s_res, n, nm, np)?;
    let [c0, c1] = m.two_bump().map(|tb| tb.centers()).ok_or(CollisionError::NoCriticalPoints)?;
    let delta_n_res = circle_diff(orbit_point(c0, n as i64, w), c1);
    let b0 = blocks(&m, c0, n, nm, np)?;
    let pre_c1 = orbit_point(c1, -(n as i64), w);
    let b1 = blocks(&m, pre_c1, n, nm, np)?;
    let slope1 = m.phi_and_slope(c1).1;
    let delta_lemma6 = -wrap_half_pi(b0.middle.phi) / slope1;
    let (r0, r1, eps) = (spec.r0, spec.r1, spec.eps);
    let a0 = wrap_half_pi(b0.middle.chi) + wrap_half_pi(b0.minus.phi);
    let a1 = wrap_half_pi(b1.plus.chi) + wrap_half_pi(b1.middle.phi);
    let delta_printed = eps * (a0 / r0 - a1 / r1);
    let x1_estimate = c0 - eps / r0 * a0;
    let x2_estimate = near(pre_c1 - eps / r1 * a1, sol.x1);
    let (lmin, lmax) = (m.lambda.min(), m.lambda.max());
    let tau0_required = (1.0 + 2.0 * lmax.ln() / (c_m * lmin).ln()) * n as f64;
    if (tau0 as f64) <= tau0_required {
        diagnostics.push(format!("tau_0 = {tau0} does not exceed (1 + 2 log lmax / log(C_M lmin)) n = {tau0_required:.3}"));
    }
    let block = cfg.block_length.unwrap_or(4 * tau0.min(1 << 20) as usize);
    let target_rate = cfg.target_fraction * lmin.ln();

    let mut calls = 0;
    let (certified_at_t_res, h_left, h_right) = if cfg.measure_window {
        calls += 1;
        let c = certify_at(spec, t_res, block, cfg)?;
        if c.status == CertStatus::Certified {
            let l = window_side(spec, t_res, -1.0, block, cfg, &mut calls)?;
            let r = window_side(spec, t_res, 1.0, block, cfg, &mut calls)?;
            (true, l, r)
        } else {
            diagnostics.push(format!(
                "certificate at t_res is {:?}: crossings {}, min separation {:.3e}, min cell bound {:.3e}",
                c.status, c.crossings, c.min_separation, c.min_cell_bound
            ));
            (false, 0.0, 0.0)
        }
    } else {
        (false, 0.0, 0.0)
    };
    Ok(ResonanceWindow {
        n,
        t0,
        t_res,
        delta_n_res,
        delta_lemma6,
        delta_printed,
        x1: sol.x1,
        x2: sol.x2,
        x1_estimate,
        x2_estimate,
        n_minus: nm,
        n_plus: np,
        c_m,
        tau0,
        tau0_required,
        block_length: block,
        target_rate,
        certified_at_t_res,
        h: h_left.min(h_right),
        h_left,
        h_right,
        certify_calls: calls,
        diagnostics,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
