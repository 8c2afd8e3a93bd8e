//! Cocycle products, Lyapunov exponents, projective directions and a
//! finite uniform-hyperbolicity certificate.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{operator_norm, top_singular, wrap_half_pi, Mat2};
use crate::model::{a_and_derivative, a_of_x, CocycleModel};
use crate::rotation::{circle_dist, orbit_point};

/// Default bound on `|n|` in [`cocycle`].
pub const MAX_STEPS: u64 = 10_000_000;
/// Steps between renormalizations of running products.
pub const RENORM_EVERY: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("|n| = {n} exceeds the step limit {max}")]
    TooLong { n: u64, max: u64 },
    #[error("overflow at step {step}")]
    Overflow { step: u64 },
    #[error("domain error: {0}")]
    Domain(String),
}

/// A matrix `e^{log_scale}·m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledMat {
    pub m: Mat2,
    pub log_scale: f64,
}

impl ScaledMat {
    pub fn log_norm(&self) -> f64 {
        operator_norm(&self.m).ln() + self.log_scale
    }

    fn renormalize(&mut self) {
        let s = self.m.max_abs();
        if s > 0.0 && s.is_finite() {
            self.m = self.m.scale(1.0 / s);
            self.log_scale += s.ln();
        }
    }
}

/// `M(x, n)` with the magnitude factored out.
pub fn cocycle_scaled(model: &CocycleModel, x: f64, n: i64) -> Result<ScaledMat, DynamicsError> {
    if n.unsigned_abs() > MAX_STEPS {
        return Err(DynamicsError::TooLong { n: n.unsigned_abs(), max: MAX_STEPS });
    }
    let w = model.omega_value();
    let mut p = ScaledMat { m: Mat2::IDENTITY, log_scale: 0.0 };
    if n >= 0 {
        for k in 0..n {
            p.m = a_of_x(model, orbit_point(x, k, w)) * p.m;
            if (k as usize + 1) % RENORM_EVERY == 0 {
                p.renormalize();
            }
            if !p.m.is_finite() {
                return Err(DynamicsError::Overflow { step: k as u64 + 1 });
            }
        }
    } else {
        // M(x, −n) = M(σ^{−n}x, n)^{−1} = A(σ^{−n}x)^{−1}·…·A(σ^{−1}x)^{−1}.
        for k in 1..=(-n) {
            p.m = a_of_x(model, orbit_point(x, -k, w)).inverse_unimodular() * p.m;
            if k as usize % RENORM_EVERY == 0 {
                p.renormalize();
            }
            if !p.m.is_finite() {
                return Err(DynamicsError::Overflow { step: k as u64 });
            }
        }
    }
    p.renormalize();
    Ok(p)
}

/// `M(x, n) = A(σ^{n−1}x)⋯A(x)`, and `M(σ^{n}x, −n)⁻¹` for `n < 0`.
pub fn cocycle(model: &CocycleModel, x: f64, n: i64) -> Result<Mat2, DynamicsError> {
    let p = cocycle_scaled(model, x, n)?;
    let s = p.log_scale.exp();
    let m = p.m.scale(s);
    if !m.is_finite() {
        return Err(DynamicsError::Overflow { step: n.unsigned_abs() });
    }
    Ok(m)
}

pub fn log_norm(model: &CocycleModel, x: f64, n: i64) -> Result<f64, DynamicsError> {
    Ok(cocycle_scaled(model, x, n)?.log_norm())
}

/// Forward product of `n` steps from `x` returning `log∥M∥`, its
/// `x`-derivative, and `min_k (log∥M(x,k)∥ − rate·k)` over `1 ≤ k ≤ n`.
fn log_norm_with_derivative(model: &CocycleModel, x: f64, n: usize, rate: f64) -> (f64, f64, f64) {
    let w = model.omega_value();
    let mut p = Mat2::IDENTITY;
    let mut dp = Mat2::new(0.0, 0.0, 0.0, 0.0);
    let mut log_scale = 0.0;
    let mut min_excess = f64::INFINITY;
    for k in 0..n {
        let (a, da) = a_and_derivative(model, orbit_point(x, k as i64, w));
        dp = (da * p).add(&(a * dp));
        p = a * p;
        let s = p.max_abs();
        p = p.scale(1.0 / s);
        dp = dp.scale(1.0 / s);
        log_scale += s.ln();
        let ln = operator_norm(&p).ln() + log_scale;
        min_excess = min_excess.min(ln - rate * (k + 1) as f64);
    }
    let (sigma, u, v) = top_singular(&p);
    let dv = dp.apply(v);
    let d = (u[0] * dv[0] + u[1] * dv[1]) / sigma;
    (sigma.ln() + log_scale, d, min_excess)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub x: f64,
    /// Growth rate of a tracked unit vector.
    pub vector_rate: f64,
    /// `log∥M(x', N)∥ / N` with `x'` the point after burn-in.
    pub norm_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub points: Vec<LyapunovPoint>,
    /// Average of `vector_rate` over the sample points.
    pub integrated: f64,
    pub n: usize,
    pub burn_in: usize,
    pub renormalizations: usize,
}

fn lyapunov_point(model: &CocycleModel, x0: f64, n: usize, burn_in: usize) -> LyapunovPoint {
    let w = model.omega_value();
    let mut v = [0.6, 0.8];
    for k in 0..burn_in {
        v = a_of_x(model, orbit_point(x0, k as i64, w)).apply(v);
        let s = v[0].hypot(v[1]);
        v = [v[0] / s, v[1] / s];
    }
    let start = orbit_point(x0, burn_in as i64, w);
    let mut acc = 0.0;
    let mut p = Mat2::IDENTITY;
    let mut log_scale = 0.0;
    for k in 0..n {
        let a = a_of_x(model, orbit_point(start, k as i64, w));
        v = a.apply(v);
        let s = v[0].hypot(v[1]);
        acc += s.ln();
        v = [v[0] / s, v[1] / s];
        p = a * p;
        if (k + 1) % RENORM_EVERY == 0 {
            let m = p.max_abs();
            p = p.scale(1.0 / m);
            log_scale += m.ln();
        }
    }
    LyapunovPoint {
        x: x0,
        vector_rate: acc / n as f64,
        norm_rate: (operator_norm(&p).ln() + log_scale) / n as f64,
    }
}

/// Per-point estimates at each `x₀` plus their average.
pub fn lyapunov(model: &CocycleModel, x0: &[f64], n: usize, burn_in: usize) -> Result<LyapunovEstimate, DynamicsError> {
    if n < 1000 {
        return Err(DynamicsError::Domain(format!("lyapunov needs N >= 1000, got {n}")));
    }
    if x0.is_empty() {
        return Err(DynamicsError::Domain("no sample points".into()));
    }
    let points: Vec<LyapunovPoint> = x0.par_iter().map(|&x| lyapunov_point(model, x, n, burn_in)).collect();
    let integrated = points.iter().map(|p| p.vector_rate).sum::<f64>() / points.len() as f64;
    Ok(LyapunovEstimate {
        points,
        integrated,
        n,
        burn_in,
        renormalizations: x0.len() * (n / RENORM_EVERY),
    })
}

/// Uniform grid `i/g`, `i = 0..g`.
pub fn uniform_grid(g: usize) -> Vec<f64> {
    (0..g).map(|i| i as f64 / g as f64).collect()
}

/// Angles in `[0, π)` of the unstable and stable directions at `x` from
/// `n`-step pushes: top left singular vector of `M(σ^{−n}x, n)` and bottom
/// right singular vector of `M(x, n)`.
pub fn directions_at(model: &CocycleModel, x: f64, n: usize) -> (f64, f64) {
    let w = model.omega_value();
    let back = scaled_forward(model, orbit_point(x, -(n as i64), w), n);
    let (_, u, _) = top_singular(&back);
    let fwd = scaled_forward(model, x, n);
    let (_, _, v) = top_singular(&fwd);
    let tu = u[1].atan2(u[0]).rem_euclid(PI);
    let ts = (v[1].atan2(v[0]) + FRAC_PI_2).rem_euclid(PI);
    (tu, ts)
}

fn scaled_forward(model: &CocycleModel, x: f64, n: usize) -> Mat2 {
    let w = model.omega_value();
    let mut p = Mat2::IDENTITY;
    for k in 0..n {
        p = a_of_x(model, orbit_point(x, k as i64, w)) * p;
        if (k + 1) % 8 == 0 {
            p = p.scale(1.0 / p.max_abs());
        }
    }
    p.scale(1.0 / p.max_abs())
}

/// Angle between two lines given by angles, in `[0, π/2]`.
pub fn line_angle(a: f64, b: f64) -> f64 {
    wrap_half_pi(a - b).abs()
}

fn push_angle(m: &Mat2, theta: f64) -> f64 {
    let v = m.apply([theta.cos(), theta.sin()]);
    v[1].atan2(v[0]).rem_euclid(PI)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OseledetsReport {
    pub x: Vec<f64>,
    pub eu: Vec<f64>,
    pub es: Vec<f64>,
    /// Line angle between `A(x)E(x)` and `E(σx)`, per grid point.
    pub residual_u: Vec<f64>,
    pub residual_s: Vec<f64>,
    pub max_residual: f64,
    pub converged: bool,
}

pub const RESIDUAL_TOL: f64 = 1e-6;

pub fn oseledets_directions(model: &CocycleModel, grid_size: usize, n_iter: usize) -> Result<OseledetsReport, DynamicsError> {
    if n_iter < 100 {
        return Err(DynamicsError::Domain(format!("n_iter must be >= 100, got {n_iter}")));
    }
    let xs = uniform_grid(grid_size);
    Ok(oseledets_on(model, &xs, n_iter))
}

fn oseledets_on(model: &CocycleModel, xs: &[f64], n: usize) -> OseledetsReport {
    let w = model.omega_value();
    let rows: Vec<(f64, f64, f64, f64)> = xs
        .par_iter()
        .map(|&x| {
            let (tu, ts) = directions_at(model, x, n);
            let (tu1, ts1) = directions_at(model, orbit_point(x, 1, w), n);
            let a = a_of_x(model, x);
            (tu, ts, line_angle(push_angle(&a, tu), tu1), line_angle(push_angle(&a, ts), ts1))
        })
        .collect();
    let max_residual = rows.iter().map(|r| r.2.max(r.3)).fold(0.0, f64::max);
    OseledetsReport {
        x: xs.to_vec(),
        eu: rows.iter().map(|r| r.0).collect(),
        es: rows.iter().map(|r| r.1).collect(),
        residual_u: rows.iter().map(|r| r.2).collect(),
        residual_s: rows.iter().map(|r| r.3).collect(),
        max_residual,
        converged: max_residual <= RESIDUAL_TOL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertStatus {
    Certified,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyConfig {
    /// Block length `N`.
    pub n: usize,
    pub grid_size: usize,
    /// Growth target `Λ₀`: the certificate asks for `∥M(x,N)∥ ≥ e^{Λ₀ N}`.
    pub target_rate: f64,
    /// Steps used for each projective push.
    pub n_dir: usize,
    /// Largest allowed change of `Eu − Es` across one cell before it is split.
    pub max_step: f64,
    pub max_depth: u32,
    /// Evaluation budget per grid cell; cells exceeding it count as
    /// unresolved.
    pub max_cell_evals: usize,
    /// Factor applied to the measured derivative bound inside a cell.
    pub lipschitz_safety: f64,
    pub refute_tol: f64,
    pub separation_tol: f64,
    pub residual_tol: f64,
    /// Extra dense sampling: `(center, radius)` windows.
    pub refine: Vec<(f64, f64)>,
    pub refine_points: usize,
}

impl CertifyConfig {
    pub fn new(n: usize, grid_size: usize, target_rate: f64) -> Self {
        CertifyConfig {
            n,
            grid_size,
            target_rate,
            n_dir: 40,
            max_step: 0.1,
            max_depth: 30,
            max_cell_evals: 256,
            lipschitz_safety: 2.0,
            refute_tol: 1e-6,
            separation_tol: 1e-9,
            residual_tol: RESIDUAL_TOL,
            refine: Vec::new(),
            refine_points: 2048,
        }
    }

    /// Dense windows of radius `radius` around each critical point.
    pub fn refine_near(mut self, centers: &[f64], radius: f64) -> Self {
        self.refine = centers.iter().map(|&c| (c, radius)).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityCertificate {
    pub status: CertStatus,
    pub block_length: usize,
    pub grid_size: usize,
    pub target_rate: f64,
    /// `min_x log∥M(x,N)∥ − Λ₀N` over sample points.
    pub min_norm_margin: f64,
    /// Largest derivative slack subtracted from a cell's endpoint values.
    pub lipschitz_slack: f64,
    /// Smallest certified lower bound of `log∥M(x,N)∥ − Λ₀N` over cells.
    pub min_cell_bound: f64,
    pub norm_ok: bool,
    /// `min_x log∥M(x,N)∥ / N`.
    pub lambda0_estimate: f64,
    /// `min_{x,k≤N} ∥M(x,k)∥ e^{−Λ₀k}`.
    pub c_estimate: f64,
    /// Smallest `∥M(x,N)∥` over sample points.
    pub min_norm: f64,
    pub crossings: usize,
    pub min_separation: f64,
    pub unresolved_cells: usize,
    pub max_residual: f64,
    pub evaluations: usize,
    pub x: Vec<f64>,
    pub eu_angles: Vec<f64>,
    pub es_angles: Vec<f64>,
}

impl HyperbolicityCertificate {
    pub fn certified(&self) -> bool {
        self.status == CertStatus::Certified
    }

    /// Lower bound `log∥M(x,N)∥ ≥ Λ₀N + margin` claimed by a certified run.
    pub fn certified_log_bound(&self) -> f64 {
        self.target_rate * self.block_length as f64
    }
}

fn sample_points(cfg: &CertifyConfig) -> Vec<f64> {
    let mut xs = uniform_grid(cfg.grid_size);
    for &(c, r) in &cfg.refine {
        let m = cfg.refine_points.max(2);
        for i in 0..m {
            xs.push((c - r + 2.0 * r * i as f64 / (m - 1) as f64).rem_euclid(1.0));
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    xs
}

struct NormSample {
    log_norm: f64,
    dlog: f64,
    min_excess: f64,
}

fn norm_sample(model: &CocycleModel, x: f64, cfg: &CertifyConfig) -> NormSample {
    let (log_norm, dlog, min_excess) = log_norm_with_derivative(model, x, cfg.n, cfg.target_rate);
    NormSample { log_norm, dlog, min_excess }
}

/// Cell `[a, b]` lower bound on `log∥M∥ − Λ₀N`, refining until the bound
/// clears zero or the depth limit is hit. Returns `(bound, slack, evals)`.
fn norm_cell(model: &CocycleModel, cfg: &CertifyConfig, a: f64, sa: &NormSample, b: f64, sb: &NormSample) -> (f64, f64, usize) {
    let target = cfg.target_rate * cfg.n as f64;
    let mut stack = vec![(a, sa.log_norm, sa.dlog, b, sb.log_norm, sb.dlog, 0u32)];
    let mut bound = f64::INFINITY;
    let mut slack: f64 = 0.0;
    let mut evals = 0;
    while let Some((a, la, da, b, lb, db, depth)) = stack.pop() {
        let s = cfg.lipschitz_safety * da.abs().max(db.abs()) * (b - a) / 2.0;
        let lo = la.min(lb) - s - target;
        if lo >= 0.0 || depth >= cfg.max_depth || evals >= cfg.max_cell_evals || !lo.is_finite() {
            bound = bound.min(lo);
            slack = slack.max(s);
            continue;
        }
        let m = 0.5 * (a + b);
        let sm = norm_sample(model, m, cfg);
        evals += 1;
        stack.push((a, la, da, m, sm.log_norm, sm.dlog, depth + 1));
        stack.push((m, sm.log_norm, sm.dlog, b, lb, db, depth + 1));
    }
    (bound, slack, evals)
}

struct DirCell {
    crossings: usize,
    min_sep: f64,
    unresolved: usize,
    evals: usize,
}

/// Follow `d = Eu − Es (mod π)` across `[a, b]` along shortest steps,
/// splitting wherever one step exceeds `max_step`.
fn direction_cell(model: &CocycleModel, cfg: &CertifyConfig, a: f64, da: f64, b: f64, db: f64) -> DirCell {
    let mut out = DirCell { crossings: 0, min_sep: f64::INFINITY, unresolved: 0, evals: 0 };
    let mut stack = vec![(a, da, b, db, 0u32)];
    while let Some((a, da, b, db, depth)) = stack.pop() {
        let step = wrap_half_pi(db - da);
        if step.abs() > cfg.max_step {
            if depth >= cfg.max_depth || out.evals >= cfg.max_cell_evals {
                out.unresolved += 1;
                continue;
            }
            let m = 0.5 * (a + b);
            let (tu, ts) = directions_at(model, m, cfg.n_dir);
            let dm = (tu - ts).rem_euclid(PI);
            out.evals += 1;
            out.min_sep = out.min_sep.min(dm.min(PI - dm));
            stack.push((a, da, m, dm, depth + 1));
            stack.push((m, dm, b, db, depth + 1));
            continue;
        }
        let e = da + step;
        if !(0.0..PI).contains(&e) {
            out.crossings += 1;
        }
    }
    out
}

/// Finite-`N` uniform-hyperbolicity test. Norm growth is checked cell by
/// cell with an adaptive derivative slack; the unstable and stable line
/// fields are tracked across every cell and must never meet.
pub fn certify_uh(model: &CocycleModel, cfg: &CertifyConfig) -> Result<HyperbolicityCertificate, DynamicsError> {
    if cfg.n == 0 || cfg.grid_size < 2 {
        return Err(DynamicsError::Domain("certify needs N >= 1 and grid_size >= 2".into()));
    }
    let xs = sample_points(cfg);
    let w = model.omega_value();
    let samples: Vec<(NormSample, f64, f64, f64)> = xs
        .par_iter()
        .map(|&x| {
            let ns = norm_sample(model, x, cfg);
            let (tu, ts) = directions_at(model, x, cfg.n_dir);
            let (tu1, ts1) = directions_at(model, orbit_point(x, 1, w), cfg.n_dir);
            let a = a_of_x(model, x);
            let res = line_angle(push_angle(&a, tu), tu1).max(line_angle(push_angle(&a, ts), ts1));
            (ns, tu, ts, res)
        })
        .collect();
    let g = xs.len();
    let cells: Vec<(f64, f64, usize, DirCell)> = (0..g)
        .into_par_iter()
        .map(|i| {
            let j = (i + 1) % g;
            let (a, b) = (xs[i], if j == 0 { xs[0] + 1.0 } else { xs[j] });
            let (sa, sb) = (&samples[i].0, &samples[j].0);
            let (bound, slack, ne) = norm_cell(model, cfg, a, sa, b, sb);
            let da = (samples[i].1 - samples[i].2).rem_euclid(PI);
            let db = (samples[j].1 - samples[j].2).rem_euclid(PI);
            let dc = direction_cell(model, cfg, a, da, b, db);
            (bound, slack, ne, dc)
        })
        .collect();

    let target = cfg.target_rate * cfg.n as f64;
    let min_log = samples.iter().map(|s| s.0.log_norm).fold(f64::INFINITY, f64::min);
    let min_excess = samples.iter().map(|s| s.0.min_excess).fold(f64::INFINITY, f64::min);
    let min_cell_bound = cells.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let lipschitz_slack = cells.iter().map(|c| c.1).fold(0.0, f64::max);
    let crossings: usize = cells.iter().map(|c| c.3.crossings).sum();
    let unresolved: usize = cells.iter().map(|c| c.3.unresolved).sum();
    let evaluations = g + cells.iter().map(|c| c.2 + c.3.evals).sum::<usize>();
    let min_sep = samples
        .iter()
        .map(|s| {
            let d = (s.1 - s.2).rem_euclid(PI);
            d.min(PI - d)
        })
        .chain(cells.iter().map(|c| c.3.min_sep))
        .fold(f64::INFINITY, f64::min);
    let max_residual = samples.iter().map(|s| s.3).fold(0.0, f64::max);
    let norm_ok = min_cell_bound >= 0.0;
    let directions_ok =
        crossings == 0 && unresolved == 0 && min_sep > cfg.separation_tol && max_residual <= cfg.residual_tol;
    let min_norm = min_log.exp();
    let status = if norm_ok && directions_ok {
        CertStatus::Certified
    } else if min_norm <= 1.0 + cfg.refute_tol && (crossings > 0 || min_sep <= cfg.separation_tol) {
        CertStatus::Refuted
    } else {
        CertStatus::Inconclusive
    };
    Ok(HyperbolicityCertificate {
        status,
        block_length: cfg.n,
        grid_size: g,
        target_rate: cfg.target_rate,
        min_norm_margin: min_log - target,
        lipschitz_slack,
        min_cell_bound,
        norm_ok,
        lambda0_estimate: min_log / cfg.n as f64,
        c_estimate: min_excess.exp(),
        min_norm,
        crossings,
        min_separation: min_sep,
        unresolved_cells: unresolved,
        max_residual,
        evaluations,
        x: xs,
        eu_angles: samples.iter().map(|s| s.1).collect(),
        es_angles: samples.iter().map(|s| s.2).collect(),
    })
}

/// `min |cos φ|` outside the `ε`-neighborhoods of the critical points, on a
/// grid of `g` points.
pub fn measured_c3(model: &CocycleModel, g: usize) -> f64 {
    let centers = model.bump_centers();
    uniform_grid(g)
        .into_iter()
        .filter(|&x| centers.iter().all(|&c| circle_dist(x, c) >= model.epsilon))
        .map(|x| model.phi(x).cos().abs())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Report {
    pub x: f64,
    pub n: usize,
    pub c3: f64,
    pub c_m: f64,
    /// Smallest `|cos φ|` along the segment.
    pub min_cos: f64,
    pub avoids: bool,
    pub log_norm: f64,
    pub log_bound: f64,
    pub holds: bool,
}

/// Checks `∥M(x,n)∥ ≥ (C_M λ_min)ⁿ` on a segment where every step has
/// `|cos φ| ≥ C₃`.
pub fn lemma2_check(model: &CocycleModel, x: f64, n: usize, c3: f64, c_m: f64) -> Result<Lemma2Report, DynamicsError> {
    let w = model.omega_value();
    let min_cos = (0..n)
        .map(|k| model.phi(orbit_point(x, k as i64, w)).cos().abs())
        .fold(f64::INFINITY, f64::min);
    let avoids = min_cos >= c3;
    let log_norm = log_norm(model, x, n as i64)?;
    let log_bound = n as f64 * (c_m * model.lambda.min()).ln();
    Ok(Lemma2Report { x, n, c3, c_m, min_cos, avoids, log_norm, log_bound, holds: !avoids || log_norm >= log_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag_unchecked, rot};
    use crate::model::{build_two_bump_model, LambdaFn, TwoBumpSpec};
    use crate::rotation::RotationNumber;
    use proptest::prelude::*;

    fn diag_model(l: f64) -> CocycleModel {
        CocycleModel::constant(0.0, l, RotationNumber::golden(40)).unwrap()
    }

    fn quarter_model(l: f64) -> CocycleModel {
        CocycleModel::constant(FRAC_PI_2, l, RotationNumber::golden(40)).unwrap()
    }

    #[test]
    fn cocycle_small_n() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        assert_eq!(cocycle(&m, 0.3, 0).unwrap(), Mat2::IDENTITY);
        assert!(cocycle(&m, 0.3, 1).unwrap().rel_diff(&a_of_x(&m, 0.3)) < 1e-15);
        let w = m.omega_value();
        let two = a_of_x(&m, orbit_point(0.3, 1, w)) * a_of_x(&m, 0.3);
        assert!(cocycle(&m, 0.3, 2).unwrap().rel_diff(&two) < 1e-14);
        assert!(matches!(cocycle(&m, 0.3, 20_000_000), Err(DynamicsError::TooLong { .. })));
    }

    #[test]
    fn inverse_cocycle_identity() {
        // The check is only meaningful where ∥M∥² stays far below 1/ulp.
        let bounded = quarter_model(10.0);
        let mild = build_two_bump_model(&TwoBumpSpec { lambda0: 1.5, ..TwoBumpSpec::default() }).unwrap();
        for (m, nmax) in [(&bounded, 50i64), (&mild, 20)] {
            let w = m.omega_value();
            for n in 1..=nmax {
                for &x in &[0.0, 0.11, 0.37, 0.8] {
                    let inv = cocycle(m, x, -n).unwrap();
                    let fwd = cocycle(m, orbit_point(x, -n, w), n).unwrap();
                    assert!((inv * fwd).sub(&Mat2::IDENTITY).max_abs() < 1e-8, "n = {n}, x = {x}");
                }
            }
        }
    }

    #[test]
    fn scaled_large_products() {
        let m = diag_model(30.0);
        let p = cocycle_scaled(&m, 0.2, 5000).unwrap();
        assert!((p.log_norm() - 5000.0 * 30f64.ln()).abs() < 1e-8);
        assert!(matches!(cocycle(&m, 0.2, 5000), Err(DynamicsError::Overflow { .. })));
    }

    #[test]
    fn lyapunov_diagonal_and_quarter() {
        let est = lyapunov(&diag_model(7.0), &[0.1, 0.5], 2000, 10).unwrap();
        assert!((est.integrated - 7f64.ln()).abs() < 1e-3);
        for p in &est.points {
            assert!((p.norm_rate - 7f64.ln()).abs() < 1e-12);
        }
        // R(π/2)Z(λ) squares to −I, so the orbit stays bounded.
        let sq = rot(FRAC_PI_2) * diag_unchecked(5.0);
        assert!((sq * sq).sub(&Mat2::IDENTITY.scale(-1.0)).max_abs() < 1e-14);
        let est = lyapunov(&quarter_model(5.0), &[0.1, 0.5], 10_000, 0).unwrap();
        assert!(est.integrated.abs() < 1e-3);
        assert!(est.points.iter().all(|p| p.norm_rate.abs() < 1e-3));
        assert!(lyapunov(&quarter_model(5.0), &[0.1], 10, 0).is_err());
    }

    #[test]
    fn lyapunov_nonnegative_two_bump() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let est = lyapunov(&m, &uniform_grid(8), 2000, 100).unwrap();
        assert!(est.integrated >= -1e-6);
        assert!(est.integrated > 0.5 * 30f64.ln());
    }

    #[test]
    fn oseledets_diagonal() {
        let r = oseledets_directions(&diag_model(3.0), 64, 100).unwrap();
        for (&u, &s) in r.eu.iter().zip(&r.es) {
            assert!(line_angle(u, 0.0) < 1e-12);
            assert!(line_angle(s, FRAC_PI_2) < 1e-12);
        }
        assert!(r.converged);
        assert!(oseledets_directions(&diag_model(3.0), 64, 10).is_err());
    }

    #[test]
    fn certify_diagonal() {
        let m = diag_model(2.0);
        let cfg = CertifyConfig::new(20, 256, 0.25 * 2f64.ln());
        let c = certify_uh(&m, &cfg).unwrap();
        assert_eq!(c.status, CertStatus::Certified);
        assert!((c.lambda0_estimate - 2f64.ln()).abs() < 1e-12);
        assert_eq!(c.crossings, 0);
    }

    #[test]
    fn certify_quarter_turn_fails() {
        let m = quarter_model(2.0);
        let cfg = CertifyConfig::new(20, 256, 0.25 * 2f64.ln());
        let c = certify_uh(&m, &cfg).unwrap();
        assert_ne!(c.status, CertStatus::Certified);
        assert!(c.min_norm < 2.5);
    }

    #[test]
    fn derivative_of_log_norm() {
        let m = build_two_bump_model(&TwoBumpSpec::default())
            .unwrap()
            .with_lambda(LambdaFn::Tabulated(vec![30.0, 32.0, 29.0, 35.0]))
            .unwrap();
        for &x in &[0.05, 0.3, 0.47, 0.9] {
            let (_, d, _) = log_norm_with_derivative(&m, x, 20, 0.0);
            let h = 1e-8;
            let fd = (log_norm(&m, x + h, 20).unwrap() - log_norm(&m, x - h, 20).unwrap()) / (2.0 * h);
            assert!((d - fd).abs() < 1e-4 * (1.0 + d.abs()), "x = {x}: {d} vs {fd}");
        }
    }

    #[test]
    fn lemma2_on_avoiding_segment() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let c3 = measured_c3(&m, 1 << 14);
        assert!((c3 - 0.5f64.sin()).abs() < 1e-9);
        // Orbit segments starting on a plateau far from both bumps.
        let w = m.omega_value();
        let centers = m.bump_centers();
        let mut checked = 0;
        for i in 0..200 {
            let x = i as f64 / 200.0;
            let mut n = 0;
            while n < 40 && centers.iter().all(|&c| circle_dist(orbit_point(x, n as i64, w), c) >= m.epsilon) {
                n += 1;
            }
            if n >= 2 {
                let r = lemma2_check(&m, x, n, c3, c3 / 2.0).unwrap();
                assert!(r.avoids && r.holds, "{r:?}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn submultiplicative(x in 0.0..1.0f64, a in 1i64..60, b in 1i64..60) {
            let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
            let w = m.omega_value();
            let whole = log_norm(&m, x, a + b).unwrap();
            let parts = log_norm(&m, orbit_point(x, a, w), b).unwrap() + log_norm(&m, x, a).unwrap();
            prop_assert!(whole <= parts + 1e-9 * parts.abs().max(1.0));
        }
    }

    #[test]
    fn certificate_holds_off_grid() {
        use rand::{Rng, SeedableRng};
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let target = 0.25 * m.lambda.min().ln();
        let cfg = CertifyConfig::new(136, 4096, target).refine_near(&m.bump_centers(), 0.02);
        let cert = certify_uh(&m, &cfg).unwrap();
        assert!(cert.certified(), "{:?}", cert.status);
        let bound = cert.certified_log_bound();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(0.0..1.0);
            let l = log_norm(&m, x, 136).unwrap();
            assert!(l >= bound, "x = {x}: log norm {l} below {bound}");
        }
    }
}
