//! Rotation numbers: continued fractions, circle distance, the Brjuno sum and
//! condition (A) point checks.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("continued fraction truncated: requested depth {requested}, safe depth {safe_depth}")]
    Truncated { requested: usize, safe_depth: usize },
    #[error("integer overflow computing convergent {0}")]
    Overflow(usize),
}

/// A rotation number given by its partial quotients `[a₁, a₂, …]` of
/// `ω = [0; a₁, a₂, …]`, together with its floating value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationNumber {
    pub quotients: Vec<u64>,
    pub value: f64,
}

/// Largest denominator trusted when expanding a float; `q²` stays well below
/// the reciprocal of the double precision unit roundoff.
const FLOAT_Q_LIMIT: u128 = 60_000_000;

impl RotationNumber {
    /// The golden mean `(√5 − 1)/2`, all quotients 1.
    pub fn golden(depth: usize) -> Self {
        RotationNumber { quotients: vec![1; depth.max(1)], value: (5f64.sqrt() - 1.0) / 2.0 }
    }

    pub fn from_quotients(quotients: Vec<u64>) -> Result<Self, RotationError> {
        if quotients.is_empty() || quotients.contains(&0) {
            return Err(RotationError::Domain("partial quotients must be positive and nonempty".into()));
        }
        let mut x = 0.0f64;
        for &a in quotients.iter().rev() {
            x = 1.0 / (a as f64 + x);
        }
        Ok(RotationNumber { quotients, value: x })
    }

    /// Expand a float in `(0, 1)` to at most `depth` quotients. Fails when
    /// the denominators would outgrow double precision before `depth`.
    pub fn from_float(value: f64, depth: usize) -> Result<Self, RotationError> {
        if !(value > 0.0 && value < 1.0) {
            return Err(RotationError::Domain(format!("rotation number must lie in (0,1), got {value}")));
        }
        let mut quotients = Vec::new();
        let mut x = value;
        let (mut q_prev, mut q) = (0u128, 1u128);
        while quotients.len() < depth {
            let inv = 1.0 / x;
            let a = inv.floor();
            let frac = inv - a;
            let q_next = (a as u128) * q + q_prev;
            if q_next > FLOAT_Q_LIMIT || a < 1.0 {
                return Err(RotationError::Truncated { requested: depth, safe_depth: quotients.len() });
            }
            quotients.push(a as u64);
            q_prev = q;
            q = q_next;
            if frac <= 0.0 {
                break;
            }
            x = frac;
        }
        Ok(RotationNumber { quotients, value })
    }

    pub fn depth(&self) -> usize {
        self.quotients.len()
    }
}

/// Convergent `p_n/q_n`, `n ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Convergent {
    pub n: usize,
    pub p: u128,
    pub q: u128,
}

/// Exact convergents `n = 1..=depth`.
pub fn convergents(omega: &RotationNumber, depth: usize) -> Result<Vec<Convergent>, RotationError> {
    if depth == 0 {
        return Err(RotationError::Domain("depth must be at least 1".into()));
    }
    if depth > omega.depth() {
        return Err(RotationError::Truncated { requested: depth, safe_depth: omega.depth() });
    }
    // p₋₁ = 1, q₋₁ = 0, p₀ = 0, q₀ = 1.
    let (mut p2, mut q2, mut p1, mut q1) = (1u128, 0u128, 0u128, 1u128);
    let mut out = Vec::with_capacity(depth);
    for (i, &a) in omega.quotients[..depth].iter().enumerate() {
        let a = a as u128;
        let p = a.checked_mul(p1).and_then(|v| v.checked_add(p2)).ok_or(RotationError::Overflow(i + 1))?;
        let q = a.checked_mul(q1).and_then(|v| v.checked_add(q2)).ok_or(RotationError::Overflow(i + 1))?;
        out.push(Convergent { n: i + 1, p, q });
        p2 = p1;
        q2 = q1;
        p1 = p;
        q1 = q;
    }
    Ok(out)
}

/// `ρ(x, y)`: distance on 𝕋¹ = ℝ/ℤ, in `[0, 1/2]`.
pub fn circle_dist(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Signed representative of `x − y` in `[−1/2, 1/2)`.
pub fn circle_diff(x: f64, y: f64) -> f64 {
    (x - y + 0.5).rem_euclid(1.0) - 0.5
}

/// `frac(c + k·ω)` with the product `k·ω` carried in two doubles.
pub fn orbit_point(c: f64, k: i64, omega: f64) -> f64 {
    let kf = k as f64;
    let hi = kf * omega;
    let lo = kf.mul_add(omega, -hi);
    let f = hi - hi.floor();
    (f + lo + c).rem_euclid(1.0)
}

/// `∥q ω∥ = ρ(qω, 0)` for an integer `q`.
pub fn dist_to_integer(q: i64, omega: f64) -> f64 {
    circle_dist(orbit_point(0.0, q, omega), 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrjunoReport {
    pub depth: usize,
    /// `Σ_{n ≤ N} log(2 q_{n+1}) / q_n` for `N = 1..=depth`.
    pub partial_sums: Vec<f64>,
    pub increments: Vec<f64>,
    /// Partial sum plus a geometric tail extrapolated from the last increments.
    pub c_b_estimate: f64,
    /// Heuristic only: the last increments shrink at a geometric rate.
    pub converging: bool,
}

pub fn brjuno_sum(omega: &RotationNumber, depth: usize) -> Result<BrjunoReport, RotationError> {
    if depth < 2 {
        return Err(RotationError::Domain("Brjuno sum needs depth at least 2".into()));
    }
    let conv = convergents(omega, depth + 1)?;
    let mut partial_sums = Vec::with_capacity(depth);
    let mut increments = Vec::with_capacity(depth);
    let mut acc = 0.0;
    for n in 0..depth {
        let inc = (2.0 * conv[n + 1].q as f64).ln() / conv[n].q as f64;
        acc += inc;
        increments.push(inc);
        partial_sums.push(acc);
    }
    let tail_window = 4.min(depth - 1);
    let ratios: Vec<f64> = increments[depth - 1 - tail_window..]
        .windows(2)
        .map(|w| w[1] / w[0])
        .collect();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    let converging = worst < 1.0;
    let c_b_estimate = if converging {
        acc + increments[depth - 1] * worst / (1.0 - worst)
    } else {
        f64::INFINITY
    };
    Ok(BrjunoReport { depth, partial_sums, increments, c_b_estimate, converging })
}

/// Gauge functions of the set 𝓗.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Gauge {
    /// `log(1 + x)`
    Log1p,
    /// `x^γ`, `0 < γ < 1`
    Power(f64),
}

impl Gauge {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Gauge::Log1p => x.ln_1p(),
            Gauge::Power(g) => x.powf(g),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Gauge::Log1p => "log1p".into(),
            Gauge::Power(g) => format!("pow{g}"),
        }
    }

    pub fn parse(s: &str) -> Option<Gauge> {
        if s == "log1p" || s == "log" {
            return Some(Gauge::Log1p);
        }
        s.strip_prefix("pow").and_then(|g| g.parse().ok()).map(Gauge::Power)
    }

    /// Sampled membership test: strictly increasing with `h(x)/x` decreasing
    /// towards zero over `[1e-3, 1e12]`.
    pub fn is_admissible(&self) -> bool {
        if let Gauge::Power(g) = *self {
            if !(g > 0.0 && g < 1.0) {
                return false;
            }
        }
        let xs: Vec<f64> = (0..=60).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect();
        let hs: Vec<f64> = xs.iter().map(|&x| self.eval(x)).collect();
        let increasing = hs.windows(2).all(|w| w[1] > w[0]) && hs[0] > 0.0;
        let ratio: Vec<f64> = xs.iter().zip(&hs).map(|(x, h)| h / x).collect();
        let sublinear = ratio.windows(2).all(|w| w[1] <= w[0]) && *ratio.last().unwrap() < 1e-2;
        increasing && sublinear
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionAReport {
    pub h_id: String,
    pub c_t: f64,
    pub c_delta: f64,
    pub depth: usize,
    /// Per convergent index `n = 1..depth−1`: does `q_{n+1} > q_n h(q_n)` hold.
    pub passes_a1: Vec<bool>,
    /// The selected subsequence `n_j` (all indices passing the first inequality).
    pub subsequence: Vec<usize>,
    /// Per subsequence entry: a later entry satisfies the two-sided inequality.
    pub passes_a2: Vec<bool>,
    /// Greedy chain of subsequence positions `J_1 < J_2 < …`.
    pub chain: Vec<usize>,
    /// `δ_j = 1/(q_{n_j} h(q_{n_j}))`.
    pub delta_sequence: Vec<f64>,
}

fn a2_pair(q: f64, q_next: f64, h: Gauge, c_t: f64, c_delta: f64) -> bool {
    let lhs = ((q * h.eval(q)).ln() + (1.0 / c_delta).ln()) / q;
    let mid = (q_next * h.eval(q_next)).ln() / q;
    lhs < mid && mid < c_t
}

pub fn check_condition_a(
    omega: &RotationNumber,
    h: Gauge,
    c_t: f64,
    c_delta: f64,
    depth: usize,
) -> Result<ConditionAReport, RotationError> {
    if !h.is_admissible() {
        return Err(RotationError::Domain(format!("gauge {} is not in the admissible set", h.name())));
    }
    if !(c_delta > 0.0 && c_delta < 1.0) || !(c_t > 0.0) {
        return Err(RotationError::Domain("need 0 < C_delta < 1 and C_t > 0".into()));
    }
    let conv = convergents(omega, depth)?;
    let qs: Vec<f64> = conv.iter().map(|c| c.q as f64).collect();
    let passes_a1: Vec<bool> = (0..depth - 1).map(|i| qs[i + 1] > qs[i] * h.eval(qs[i])).collect();
    let subsequence: Vec<usize> =
        passes_a1.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| conv[i].n).collect();
    let sq: Vec<f64> = subsequence.iter().map(|&n| qs[n - 1]).collect();
    let passes_a2: Vec<bool> = (0..sq.len())
        .map(|j| (j + 1..sq.len()).any(|k| a2_pair(sq[j], sq[k], h, c_t, c_delta)))
        .collect();
    let mut chain = Vec::new();
    if let Some(start) = passes_a2.iter().position(|&p| p) {
        let mut cur = start;
        chain.push(cur);
        while let Some(next) = (cur + 1..sq.len()).find(|&k| a2_pair(sq[cur], sq[k], h, c_t, c_delta)) {
            chain.push(next);
            cur = next;
        }
    }
    let delta_sequence = sq.iter().map(|&q| 1.0 / (q * h.eval(q))).collect();
    Ok(ConditionAReport {
        h_id: h.name(),
        c_t,
        c_delta,
        depth,
        passes_a1,
        subsequence,
        passes_a2,
        chain,
        delta_sequence,
    })
}
