//! Cocycle families `A(x) = R(φ(x))·Z(λ(x))` assembled from step-angle bumps.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{diag_unchecked, rot, wrap_pi, Mat2};
use crate::rotation::{circle_diff, circle_dist, RotationError, RotationNumber};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("bump supports overlap: {0}")]
    Overlap(String),
    #[error("H3 violation: {0}")]
    H3Violation(String),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// Clamped-linear profile `ϑ(y) = clamp(k·y)` between the left level `L₋`
/// and the right level `L₊`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepProfile {
    pub l_minus: f64,
    pub l_plus: f64,
    pub k: f64,
}

impl StepProfile {
    pub fn new(l_minus: f64, l_plus: f64, k: f64) -> Result<Self, ModelError> {
        if !(l_minus * l_plus < 0.0) {
            return Err(ModelError::Invalid(format!("levels must have opposite signs, got {l_minus}, {l_plus}")));
        }
        if !(k != 0.0 && k.is_finite()) || k.signum() != (l_plus - l_minus).signum() {
            return Err(ModelError::Invalid(format!(
                "slope {k} must be finite and point from L- = {l_minus} to L+ = {l_plus}"
            )));
        }
        Ok(StepProfile { l_minus, l_plus, k })
    }

    pub fn theta(&self, y: f64) -> f64 {
        theta_eval(self, y)
    }

    /// Offset of the left knee from the center (negative).
    pub fn left_knee(&self) -> f64 {
        self.l_minus / self.k
    }

    /// Offset of the right knee from the center (positive).
    pub fn right_knee(&self) -> f64 {
        self.l_plus / self.k
    }
}

pub fn theta_eval(p: &StepProfile, y: f64) -> f64 {
    let lo = p.l_minus.min(p.l_plus);
    let hi = p.l_minus.max(p.l_plus);
    (p.k * y).clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpSpec {
    pub center: f64,
    /// `+1` or `−1`: the offset `±π/2`.
    pub sign: f64,
    pub profile: StepProfile,
}

/// `±π/2 + ϑ(y)` with `y` the circle-lifted offset nearest zero.
pub fn phi_hat_eval(bump: &BumpSpec, x: f64) -> f64 {
    bump.sign * FRAC_PI_2 + bump.profile.theta(circle_diff(x, bump.center))
}

/// Flat parameter set of the two-bump family; mirrors the model file keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoBumpSpec {
    pub c0: f64,
    pub c1_0: f64,
    pub sign: f64,
    pub r0: f64,
    pub r1: f64,
    pub lm0: f64,
    pub lp0: f64,
    pub lm1: f64,
    pub lp1: f64,
    pub eps: f64,
    pub lambda0: f64,
    pub t: f64,
    pub omega: Vec<u64>,
    /// Fraction of each gap between bumps used by the joining ramp.
    pub ramp_fraction: f64,
    /// Width of the quadratic knee rounding; 0 keeps the exact corners.
    pub knee_width: f64,
}

impl Default for TwoBumpSpec {
    fn default() -> Self {
        TwoBumpSpec {
            c0: 0.1,
            c1_0: 0.1 + (5f64.sqrt() - 1.0) / 2.0,
            sign: 1.0,
            r0: 1.0,
            r1: -1.0,
            lm0: -2.0 / 3.0,
            lp0: 0.75,
            lm1: 2.0 / 3.0,
            lp1: -0.5,
            eps: 0.01,
            lambda0: 30.0,
            t: 0.0,
            omega: vec![1; 60],
            ramp_fraction: 0.5,
            knee_width: 0.0,
        }
    }
}

fn parse_omega(v: &str) -> Result<Vec<u64>, ModelError> {
    let v = v.trim().trim_start_matches('[').trim_end_matches(']');
    if v == "golden" {
        return Ok(vec![1; 60]);
    }
    v.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| ModelError::Invalid(format!("omega quotient {s:?}: {e}"))))
        .collect()
}

impl TwoBumpSpec {
    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected.
    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut spec = TwoBumpSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Invalid(format!("line {}: expected key = value", lineno + 1)))?;
            spec.set(k.trim(), v.trim())?;
        }
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let num = || -> Result<f64, ModelError> {
            let v = value.trim();
            let parsed = match v {
                "golden" => Ok((5f64.sqrt() - 1.0) / 2.0),
                _ => v.parse::<f64>(),
            };
            parsed.map_err(|_| ModelError::Invalid(format!("{key}: not a number: {value:?}")))
        };
        match key {
            "c0" => self.c0 = num()?,
            "c1_0" => self.c1_0 = num()?,
            "sign" => self.sign = num()?,
            "r0" => self.r0 = num()?,
            "r1" => self.r1 = num()?,
            "Lm0" => self.lm0 = num()?,
            "Lp0" => self.lp0 = num()?,
            "Lm1" => self.lm1 = num()?,
            "Lp1" => self.lp1 = num()?,
            "eps" => self.eps = num()?,
            "lambda0" => self.lambda0 = num()?,
            "t" => self.t = num()?,
            "omega" => self.omega = parse_omega(value)?,
            "ramp_fraction" => self.ramp_fraction = num()?,
            "knee_width" => self.knee_width = num()?,
            _ => return Err(ModelError::Invalid(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let om: Vec<String> = self.omega.iter().map(|a| a.to_string()).collect();
        format!(
            "c0 = {:?}\nc1_0 = {:?}\nsign = {:?}\nr0 = {:?}\nr1 = {:?}\nLm0 = {:?}\nLp0 = {:?}\nLm1 = {:?}\nLp1 = {:?}\neps = {:?}\nlambda0 = {:?}\nt = {:?}\nomega = {}\nramp_fraction = {:?}\nknee_width = {:?}\n",
            self.c0, self.c1_0, self.sign, self.r0, self.r1, self.lm0, self.lp0, self.lm1, self.lp1,
            self.eps, self.lambda0, self.t, om.join(","), self.ramp_fraction, self.knee_width
        )
    }
}

/// Continuous periodic `ϑ` built from two bumps joined by ramps, stored as
/// nodes of a piecewise-linear function of `s = x − start ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoBump {
    pub bumps: [BumpSpec; 2],
    start: f64,
    nodes: Vec<(f64, f64)>,
    knee_width: f64,
}

impl TwoBump {
    fn segment(&self, s: f64) -> usize {
        let i = self.nodes.partition_point(|&(x, _)| x <= s);
        i.clamp(1, self.nodes.len() - 1) - 1
    }

    fn slope(&self, i: usize) -> f64 {
        let (x0, y0) = self.nodes[i];
        let (x1, y1) = self.nodes[i + 1];
        (y1 - y0) / (x1 - x0)
    }

    /// `(ϑ, ϑ')` at circle point `x`.
    pub fn theta_and_slope(&self, x: f64) -> (f64, f64) {
        let s = (x - self.start).rem_euclid(1.0);
        let i = self.segment(s);
        let (x0, y0) = self.nodes[i];
        let sl = self.slope(i);
        let mut v = y0 + sl * (s - x0);
        let mut d = sl;
        let w = self.knee_width;
        if w > 0.0 {
            let last = self.nodes.len() - 1;
            // Nearest corner: node i or node i+1, node 0 ≡ node last.
            let (node, off) = if s - x0 < w / 2.0 {
                (i, s - x0)
            } else if self.nodes[i + 1].0 - s < w / 2.0 {
                (i + 1, s - self.nodes[i + 1].0)
            } else {
                (usize::MAX, 0.0)
            };
            if node != usize::MAX {
                let left = if node == 0 || node == last { self.slope(last - 1) } else { self.slope(node - 1) };
                let right = if node == 0 || node == last { self.slope(0) } else { self.slope(node) };
                let base = self.nodes[node].1;
                let u = off + w / 2.0;
                v = base + left * off + (right - left) * u * u / (2.0 * w);
                d = left + (right - left) * u / w;
            }
        }
        (v, d)
    }

    pub fn centers(&self) -> [f64; 2] {
        [self.bumps[0].center, self.bumps[1].center]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PhiProfile {
    Constant(f64),
    TwoBump(TwoBump),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LambdaFn {
    Constant(f64),
    /// Samples on the uniform grid `i/len`, linearly interpolated.
    Tabulated(Vec<f64>),
}

impl LambdaFn {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            LambdaFn::Constant(l) => (*l, 0.0),
            LambdaFn::Tabulated(v) => {
                let n = v.len();
                let s = x.rem_euclid(1.0) * n as f64;
                let i = (s.floor() as usize).min(n - 1);
                let f = s - i as f64;
                let (a, b) = (v[i], v[(i + 1) % n]);
                (a + f * (b - a), (b - a) * n as f64)
            }
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            LambdaFn::Constant(l) => *l,
            LambdaFn::Tabulated(v) => v.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            LambdaFn::Constant(l) => *l,
            LambdaFn::Tabulated(v) => v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CocycleModel {
    pub phi: PhiProfile,
    pub lambda: LambdaFn,
    pub omega: RotationNumber,
    pub epsilon: f64,
    pub t: f64,
    /// Parameters the model was built from, when it is a two-bump model.
    pub spec: Option<TwoBumpSpec>,
}

impl CocycleModel {
    /// `φ ≡ phi`, `λ ≡ lambda0`.
    pub fn constant(phi: f64, lambda0: f64, omega: RotationNumber) -> Result<Self, ModelError> {
        if !(lambda0 > 1.0) {
            return Err(ModelError::Invalid(format!("lambda0 must exceed 1, got {lambda0}")));
        }
        Ok(CocycleModel {
            phi: PhiProfile::Constant(phi),
            lambda: LambdaFn::Constant(lambda0),
            omega,
            epsilon: 0.0,
            t: 0.0,
            spec: None,
        })
    }

    pub fn with_lambda(mut self, lambda: LambdaFn) -> Result<Self, ModelError> {
        if let LambdaFn::Tabulated(v) = &lambda {
            if v.len() < 2 || v.iter().any(|&l| !(l > 1.0) || !l.is_finite()) {
                return Err(ModelError::Invalid("tabulated lambda needs at least 2 samples, all > 1".into()));
            }
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn omega_value(&self) -> f64 {
        self.omega.value
    }

    #[inline]
    pub fn phi_and_slope(&self, x: f64) -> (f64, f64) {
        match &self.phi {
            PhiProfile::Constant(p) => (*p, 0.0),
            PhiProfile::TwoBump(tb) => {
                let (th, d) = tb.theta_and_slope(x);
                (tb.bumps[0].sign * FRAC_PI_2 + th, d)
            }
        }
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        self.phi_and_slope(x).0
    }

    #[inline]
    pub fn lambda_at(&self, x: f64) -> f64 {
        self.lambda.eval(x).0
    }

    /// Critical points the model was built around (empty for constant φ).
    pub fn bump_centers(&self) -> Vec<f64> {
        match &self.phi {
            PhiProfile::Constant(_) => vec![],
            PhiProfile::TwoBump(tb) => tb.centers().to_vec(),
        }
    }

    pub fn two_bump(&self) -> Option<&TwoBump> {
        match &self.phi {
            PhiProfile::TwoBump(tb) => Some(tb),
            _ => None,
        }
    }

    /// Largest `|φ'|` over the circle.
    pub fn max_phi_slope(&self) -> f64 {
        match &self.phi {
            PhiProfile::Constant(_) => 0.0,
            PhiProfile::TwoBump(tb) => (0..tb.nodes.len() - 1).map(|i| tb.slope(i).abs()).fold(0.0, f64::max),
        }
    }

    /// Same model with the parameter `t` replaced.
    pub fn at_t(&self, t: f64) -> Result<Self, ModelError> {
        match &self.spec {
            Some(s) => {
                let mut s = s.clone();
                s.t = t;
                let mut m = build_two_bump_model(&s)?;
                m.lambda = self.lambda.clone();
                Ok(m)
            }
            None => {
                let mut m = self.clone();
                m.t = t;
                Ok(m)
            }
        }
    }
}

/// `A(x) = R(φ(x))·Z(λ(x))`.
#[inline]
pub fn a_of_x(model: &CocycleModel, x: f64) -> Mat2 {
    rot(model.phi(x)) * diag_unchecked(model.lambda_at(x))
}

/// `A(x)` and `dA/dx`.
#[inline]
pub fn a_and_derivative(model: &CocycleModel, x: f64) -> (Mat2, Mat2) {
    let (p, dp) = model.phi_and_slope(x);
    let (l, dl) = model.lambda.eval(x);
    let (s, c) = p.sin_cos();
    let a = Mat2::new(c * l, s / l, -s * l, c / l);
    // d/dx of [[c l, s/l], [−s l, c/l]].
    let da = Mat2::new(
        -s * dp * l + c * dl,
        c * dp / l - s * dl / (l * l),
        -c * dp * l - s * dl,
        -s * dp / l - c * dl / (l * l),
    );
    (a, da)
}

pub fn build_two_bump_model(spec: &TwoBumpSpec) -> Result<CocycleModel, ModelError> {
    if !(spec.eps > 0.0) {
        return Err(ModelError::Invalid("eps must be positive".into()));
    }
    if !(spec.lambda0 > 1.0) {
        return Err(ModelError::Invalid("lambda0 must exceed 1".into()));
    }
    if spec.sign != 1.0 && spec.sign != -1.0 {
        return Err(ModelError::Invalid("sign must be +1 or -1".into()));
    }
    if !(spec.r0 * spec.r1 < 0.0) {
        return Err(ModelError::Invalid("slopes at the two bumps must have opposite signs".into()));
    }
    if !(spec.ramp_fraction > 0.0 && spec.ramp_fraction < 1.0) {
        return Err(ModelError::Invalid("ramp_fraction must lie in (0, 1)".into()));
    }
    let omega = RotationNumber::from_quotients(spec.omega.clone())?;
    let p0 = StepProfile::new(spec.lm0, spec.lp0, spec.r0 / spec.eps)?;
    let p1 = StepProfile::new(spec.lm1, spec.lp1, spec.r1 / spec.eps)?;
    for &l in &[spec.lm0, spec.lp0, spec.lm1, spec.lp1] {
        if l.sin().abs() < 1e-12 || l.abs() >= PI {
            return Err(ModelError::H3Violation(format!("plateau level {l} is 0 mod pi")));
        }
    }
    for (a, b) in [(spec.lp0, spec.lm1), (spec.lp1, spec.lm0)] {
        if a * b <= 0.0 {
            return Err(ModelError::H3Violation(format!(
                "adjacent plateau levels {a} and {b} differ in sign; joining them adds a critical point"
            )));
        }
    }
    let c0 = spec.c0.rem_euclid(1.0);
    let c1 = (spec.c1_0 + spec.t).rem_euclid(1.0);
    let g01 = (c1 - c0).rem_euclid(1.0);
    let (l0, r0) = (p0.left_knee(), p0.right_knee());
    let (l1, r1) = (p1.left_knee(), p1.right_knee());
    let gap_a = g01 + l1 - r0;
    let gap_b = 1.0 - g01 + l0 - r1;
    if !(gap_a > 0.0 && gap_b > 0.0) {
        return Err(ModelError::Overlap(format!("c0 = {c0}, c1 = {c1}, gaps {gap_a}, {gap_b}")));
    }
    let pad_a = 0.5 * gap_a * (1.0 - spec.ramp_fraction);
    let pad_b = 0.5 * gap_b * (1.0 - spec.ramp_fraction);
    let s1 = r0 - l0;
    let s2 = g01 + l1 - l0;
    let s3 = g01 + r1 - l0;
    let nodes = vec![
        (0.0, spec.lm0),
        (s1, spec.lp0),
        (s1 + pad_a, spec.lp0),
        (s2 - pad_a, spec.lm1),
        (s2, spec.lm1),
        (s3, spec.lp1),
        (s3 + pad_b, spec.lp1),
        (1.0 - pad_b, spec.lm0),
        (1.0, spec.lm0),
    ];
    let min_seg = nodes.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    if !(spec.knee_width >= 0.0) || spec.knee_width > 0.5 * min_seg {
        return Err(ModelError::Invalid(format!(
            "knee_width {} must lie in [0, {}]",
            spec.knee_width,
            0.5 * min_seg
        )));
    }
    let tb = TwoBump {
        bumps: [
            BumpSpec { center: c0, sign: spec.sign, profile: p0 },
            BumpSpec { center: c1, sign: spec.sign, profile: p1 },
        ],
        start: c0 + l0,
        nodes,
        knee_width: spec.knee_width,
    };
    Ok(CocycleModel {
        phi: PhiProfile::TwoBump(tb),
        lambda: LambdaFn::Constant(spec.lambda0),
        omega,
        epsilon: spec.eps,
        t: spec.t,
        spec: Some(spec.clone()),
    })
}

/// Zeros of `cos φ` by a grid scan and bisection to `tol`.
pub fn zeros_of_cos(model: &CocycleModel, grid: usize, tol: f64) -> Vec<f64> {
    let f = |x: f64| model.phi(x).cos();
    let mut out = Vec::new();
    let h = 1.0 / grid as f64;
    let mut prev = f(0.0);
    for i in 0..grid {
        let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
        let fb = f(b);
        if prev == 0.0 {
            out.push(a);
        } else if prev * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, prev);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = fb;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroInfo {
    pub x: f64,
    pub dphi: f64,
    pub simple: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpSlope {
    pub center: f64,
    pub min_slope_times_eps: f64,
    pub max_slope_times_eps: f64,
    pub variation: f64,
    pub level_jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub zeros: Vec<ZeroInfo>,
    pub h1_pass: bool,
    pub h2: Vec<BumpSlope>,
    pub h2_pass: bool,
    pub c3_witness: f64,
    pub h3_pass: bool,
    pub winding: i64,
    pub h4_pass: bool,
    pub lambda_min: f64,
    pub h5_pass: bool,
    pub h6_drho_dt: f64,
    pub h6_pass: bool,
    pub envelope_pass: bool,
    pub all_pass: bool,
}

/// Constants used when judging the hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisConstants {
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
    /// Relative widening of the plateau levels for the envelope check.
    pub envelope_margin: f64,
    /// Radius of the envelope neighbourhood in units of ε.
    pub envelope_radius: f64,
}

impl Default for HypothesisConstants {
    fn default() -> Self {
        HypothesisConstants { c1: 0.1, c2: 10.0, c4: 0.5, envelope_margin: 0.15, envelope_radius: 2.0 }
    }
}

pub fn verify_hypotheses(model: &CocycleModel, grid_size: usize) -> HypothesisReport {
    verify_hypotheses_with(model, grid_size, &HypothesisConstants::default())
}

pub fn verify_hypotheses_with(model: &CocycleModel, grid_size: usize, k: &HypothesisConstants) -> HypothesisReport {
    let grid = grid_size.max(1000);
    let eps = model.epsilon;
    let centers = model.bump_centers();

    let zeros: Vec<ZeroInfo> = zeros_of_cos(model, grid, 1e-12)
        .into_iter()
        .map(|x| {
            let (p, dp) = model.phi_and_slope(x);
            // (cos φ)' = −sin φ · φ'
            let simple = (p.sin() * dp).abs() > 1e-9;
            ZeroInfo { x, dphi: dp, simple }
        })
        .collect();
    let h1_pass = !centers.is_empty() && zeros.len() == centers.len() && zeros.iter().all(|z| z.simple);

    let mut h2 = Vec::new();
    if let Some(tb) = model.two_bump() {
        for b in &tb.bumps {
            let core = b.profile.left_knee().abs().min(b.profile.right_knee()) * 0.999;
            let n = 1000;
            let mut mn = f64::INFINITY;
            let mut mx: f64 = 0.0;
            for i in 0..=n {
                let y = -core + 2.0 * core * i as f64 / n as f64;
                let d = model.phi_and_slope(b.center + y).1.abs() * eps;
                mn = mn.min(d);
                mx = mx.max(d);
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..=n {
                let y = -eps + 2.0 * eps * i as f64 / n as f64;
                let p = model.phi(b.center + y);
                lo = lo.min(p);
                hi = hi.max(p);
            }
            h2.push(BumpSlope {
                center: b.center,
                min_slope_times_eps: mn,
                max_slope_times_eps: mx,
                variation: hi - lo,
                level_jump: (b.profile.l_plus - b.profile.l_minus).abs(),
            });
        }
    }
    let h2_pass = !h2.is_empty()
        && h2.iter().all(|b| b.min_slope_times_eps >= k.c1 && b.max_slope_times_eps <= k.c2);

    let h = 1.0 / grid as f64;
    let mut c3 = f64::INFINITY;
    let mut winding = 0.0;
    let mut lam_min = f64::INFINITY;
    let mut prev = model.phi(0.0);
    for i in 0..grid {
        let x = i as f64 * h;
        let p = model.phi(x);
        if centers.iter().all(|&c| circle_dist(x, c) >= eps) {
            c3 = c3.min(p.cos().abs());
        }
        let next = model.phi(x + h);
        winding += wrap_pi(next - prev);
        prev = next;
        lam_min = lam_min.min(model.lambda_at(x));
    }
    let winding = (winding / TAU).round() as i64;

    let (drho, h6_pass) = if centers.len() == 2 {
        let dt = 1e-7;
        let (a, b) = (model.at_t(model.t - dt), model.at_t(model.t + dt));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let ca = a.bump_centers();
                let cb = b.bump_centers();
                let d = (circle_dist(cb[0], cb[1]) - circle_dist(ca[0], ca[1])) / (2.0 * dt);
                (d, d.abs() > k.c4)
            }
            _ => (f64::NAN, false),
        }
    } else {
        (f64::NAN, false)
    };

    let envelope_pass = match model.two_bump() {
        Some(tb) => tb.bumps.iter().all(|b| {
            let m = k.envelope_margin;
            let widen = |l: f64, up: bool| if up { l + m * l.abs() } else { l - m * l.abs() };
            let lo_p = StepProfile { l_minus: widen(b.profile.l_minus, false), l_plus: widen(b.profile.l_plus, false), k: b.profile.k };
            let hi_p = StepProfile { l_minus: widen(b.profile.l_minus, true), l_plus: widen(b.profile.l_plus, true), k: b.profile.k };
            let (lo_p, hi_p) = if b.profile.k > 0.0 { (lo_p, hi_p) } else {
                // For a falling profile the left level is the upper one.
                (StepProfile { l_minus: hi_p.l_minus, l_plus: lo_p.l_plus, k: b.profile.k },
                 StepProfile { l_minus: lo_p.l_minus, l_plus: hi_p.l_plus, k: b.profile.k })
            };
            let r = k.envelope_radius * eps;
            (0..=2000).all(|i| {
                let y = -r + 2.0 * r * i as f64 / 2000.0;
                let x = b.center + y;
                let e1 = phi_hat_eval(&BumpSpec { profile: lo_p, ..*b }, x).abs();
                let e2 = phi_hat_eval(&BumpSpec { profile: hi_p, ..*b }, x).abs();
                let v = model.phi(x).abs();
                e1.min(e2) <= v + 1e-12 && v <= e1.max(e2) + 1e-12
            })
        }),
        None => false,
    };

    let h3_pass = c3 > 0.0;
    let h4_pass = winding == 0;
    let h5_pass = lam_min > 1.0;
    HypothesisReport {
        all_pass: h1_pass && h2_pass && h3_pass && h4_pass && h5_pass && h6_pass && envelope_pass,
        zeros,
        h1_pass,
        h2,
        h2_pass,
        c3_witness: c3,
        h3_pass,
        winding,
        h4_pass,
        lambda_min: lam_min,
        h5_pass,
        h6_drho_dt: drho,
        h6_pass,
        envelope_pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_model() -> CocycleModel {
        build_two_bump_model(&TwoBumpSpec::default()).unwrap()
    }

    #[test]
    fn theta_examples() {
        let p = StepProfile::new(-2.0 / 3.0, 0.75, 1.0).unwrap();
        assert_eq!(theta_eval(&p, 0.0), 0.0);
        assert_eq!(theta_eval(&p, -5.0), -2.0 / 3.0);
        assert_eq!(theta_eval(&p, 0.5), 0.5);
        // Falling profile: left level above, right level below.
        let q = StepProfile::new(2.0 / 3.0, -0.5, -1.0).unwrap();
        assert_eq!(q.theta(-5.0), 2.0 / 3.0);
        assert_eq!(q.theta(5.0), -0.5);
        assert_eq!(q.theta(0.25), -0.25);
        assert!(StepProfile::new(0.3, 0.5, 1.0).is_err());
        assert!(StepProfile::new(-0.3, 0.5, -1.0).is_err());
    }

    #[test]
    fn phi_hat_examples() {
        let p = StepProfile::new(-2.0 / 3.0, 0.75, 1.0).unwrap();
        let b = BumpSpec { center: 0.3, sign: 1.0, profile: p };
        assert_eq!(phi_hat_eval(&b, 0.3), FRAC_PI_2);
        assert!((phi_hat_eval(&b, 0.3 + 0.45) - (FRAC_PI_2 + 0.45)).abs() < 1e-15);
        let b = BumpSpec { center: 0.3, sign: 1.0, profile: StepProfile::new(-2.0 / 3.0, 0.75, 10.0).unwrap() };
        assert_eq!(phi_hat_eval(&b, 0.3 + 0.2), FRAC_PI_2 + 0.75);
        let b = BumpSpec { sign: -1.0, ..b };
        assert_eq!(phi_hat_eval(&b, 0.3), -FRAC_PI_2);
    }

    #[test]
    fn two_bump_shape() {
        let m = reference_model();
        let [c0, c1] = [m.bump_centers()[0], m.bump_centers()[1]];
        assert!((m.phi(c0) - FRAC_PI_2).abs() < 1e-14);
        assert!((m.phi(c1) - FRAC_PI_2).abs() < 1e-12);
        assert!((m.phi_and_slope(c0).1 - 100.0).abs() < 1e-9);
        assert!((m.phi_and_slope(c1).1 + 100.0).abs() < 1e-9);
        assert!((m.phi(c0 + 0.0095) - (FRAC_PI_2 + 0.75)).abs() < 1e-14);
        assert!((m.phi(c1 + 0.0095) - (FRAC_PI_2 - 0.5)).abs() < 1e-12);
        assert!((m.phi(c1 - 0.0095) - (FRAC_PI_2 + 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_models() {
        let m = CocycleModel::constant(0.0, 30.0, RotationNumber::golden(30)).unwrap();
        let a = a_of_x(&m, 0.4);
        assert!((crate::linalg::operator_norm(&a) - 30.0).abs() < 1e-12);
        assert!(zeros_of_cos(&m, 1000, 1e-12).is_empty());
        assert!(CocycleModel::constant(0.0, 1.0, RotationNumber::golden(3)).is_err());
    }

    #[test]
    fn a_at_critical_point() {
        let m = reference_model();
        let c0 = m.bump_centers()[0];
        let a = a_of_x(&m, c0);
        let want = rot(FRAC_PI_2) * diag_unchecked(30.0);
        assert!(a.sub(&want).max_abs() < 1e-13);
        assert!((crate::linalg::operator_norm(&a) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_norm_matches_svd_oracle() {
        // On the right plateau of the first bump φ = π/2 + 3/4 and
        // A = R(φ)Z(30) is a rotation times a diagonal, so ∥A∥ = 30.
        let m = reference_model();
        let x = m.bump_centers()[0] + 0.02;
        let a = a_of_x(&m, x);
        let (s1, s2) = crate::linalg::singular_values(&a);
        assert!((s1 - 30.0).abs() < 1e-12 && (s2 - 1.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn hypotheses_on_reference_model() {
        let m = reference_model();
        let r = verify_hypotheses(&m, 1 << 16);
        assert!(r.h1_pass, "{r:?}");
        assert_eq!(r.zeros.len(), 2);
        assert!(r.h2_pass);
        for b in &r.h2 {
            assert!((b.min_slope_times_eps - 1.0).abs() < 1e-9);
            // Knees sit inside U_ε, so the variation is the full level jump.
            assert!((b.variation - b.level_jump).abs() < 1e-9);
        }
        // min |sin L| over the levels 3/4, 2/3, −1/2, −2/3.
        assert!((r.c3_witness - 0.5f64.sin()).abs() < 1e-9);
        assert_eq!(r.winding, 0);
        assert!(r.h5_pass && r.lambda_min == 30.0);
        assert!((r.h6_drho_dt.abs() - 1.0).abs() < 1e-6);
        assert!(r.envelope_pass);
        assert!(r.all_pass);
    }

    #[test]
    fn overlap_and_level_errors() {
        let mut s = TwoBumpSpec::default();
        s.c1_0 = s.c0 + 0.005;
        assert!(matches!(build_two_bump_model(&s), Err(ModelError::Overlap(_))));
        let mut s = TwoBumpSpec::default();
        s.lm1 = -0.4;
        s.lp1 = 0.5;
        s.r1 = 1.0;
        assert!(build_two_bump_model(&s).is_err());
        let mut s = TwoBumpSpec::default();
        s.lm1 = -0.6;
        s.lp1 = 0.5;
        s.r1 = -1.0;
        assert!(build_two_bump_model(&s).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let s = TwoBumpSpec { t: 3e-4, lambda0: 12.5, omega: vec![2, 3, 1, 50, 1], ..TwoBumpSpec::default() };
        let back = TwoBumpSpec::from_kv(&s.to_kv()).unwrap();
        assert_eq!(s, back);
        let g = TwoBumpSpec::from_kv("omega = golden\nc0 = 0.2 # comment\n").unwrap();
        assert_eq!(g.omega.len(), 60);
        assert_eq!(g.c0, 0.2);
        assert!(TwoBumpSpec::from_kv("bogus = 1").is_err());
    }

    #[test]
    fn knee_rounding_is_c1() {
        let s = TwoBumpSpec { knee_width: 0.002, ..TwoBumpSpec::default() };
        let m = build_two_bump_model(&s).unwrap();
        let tb = m.two_bump().unwrap();
        for &(x, _) in &tb.nodes {
            let xs = x + tb.start;
            let l = m.phi_and_slope(xs - 1e-9);
            let r = m.phi_and_slope(xs + 1e-9);
            assert!((l.0 - r.0).abs() < 1e-6);
            assert!((l.1 - r.1).abs() < 1e-3 * (1.0 + l.1.abs()));
        }
        let r = verify_hypotheses(&m, 1 << 14);
        assert_eq!(r.zeros.len(), 2);
        assert_eq!(r.winding, 0);
    }

    #[test]
    fn derivative_matches_difference() {
        let m = reference_model().with_lambda(LambdaFn::Tabulated(vec![30.0, 35.0, 31.0, 40.0])).unwrap();
        for &x in &[0.05, 0.103, 0.4, 0.713, 0.9] {
            let h = 1e-7;
            let (_, da) = a_and_derivative(&m, x);
            let fd = a_of_x(&m, x + h).sub(&a_of_x(&m, x - h)).scale(0.5 / h);
            assert!(da.sub(&fd).max_abs() < 1e-4 * (1.0 + da.max_abs()), "x = {x}");
        }
    }

    proptest! {
        #[test]
        fn periodic_and_unimodular(x in -3.0..3.0f64) {
            let m = reference_model();
            prop_assert!((m.phi(x + 1.0) - m.phi(x)).abs() <= 1e-12);
            prop_assert!((a_of_x(&m, x).det() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn zeros_are_simple(t in -0.2..0.2f64) {
            let s = TwoBumpSpec { t, ..TwoBumpSpec::default() };
            let m = build_two_bump_model(&s).unwrap();
            let z = zeros_of_cos(&m, 4096, 1e-13);
            prop_assert_eq!(z.len(), 2);
            for x in z {
                let (p, dp) = m.phi_and_slope(x);
                let d = -p.sin() * dp;
                prop_assert!(d != 0.0);
                prop_assert_eq!(d.signum(), -(p.sin() * dp).signum());
            }
        }
    }
}
