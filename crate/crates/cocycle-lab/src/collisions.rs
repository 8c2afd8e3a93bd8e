//! Critical points, collision times, dominance, and B/G/H words.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{zeros_of_cos, CocycleModel};
use crate::rotation::{circle_dist, orbit_point};

pub const DEFAULT_HORIZON: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollisionError {
    #[error("H1 violation: double root of cos(phi) near x = {0}")]
    DoubleRoot(f64),
    #[error("critical set is empty")]
    NoCriticalPoints,
    #[error("H-blocks overlap at positions {first} and {second}; n + n_- + n_+ exceeds the primary time")]
    Overlap { first: usize, second: usize },
    #[error("B at position {0} is not covered by any H-block and is not at the word boundary")]
    StrayB(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Zeros of `cos φ` by scan and bisection to 1e-12.
pub fn critical_set(model: &CocycleModel) -> Result<Vec<f64>, CollisionError> {
    let zs = zeros_of_cos(model, 1 << 16, 1e-12);
    for &z in &zs {
        let (p, dp) = model.phi_and_slope(z);
        if (p.sin() * dp).abs() < 1e-9 {
            return Err(CollisionError::DoubleRoot(z));
        }
    }
    Ok(zs)
}

/// First `k ∈ [1, horizon]` with `ρ(c + kω, c') < δ`.
pub fn collision_time(omega: f64, c: f64, c_target: f64, delta: f64, horizon: u64) -> Option<u64> {
    (1..=horizon).find(|&k| circle_dist(orbit_point(c, k as i64, omega), c_target) < delta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionTable {
    pub delta: f64,
    pub horizon: u64,
    pub centers: Vec<f64>,
    /// `tau[j][j']`, `None` when no hit within the horizon.
    pub tau: Vec<Vec<Option<u64>>>,
    /// Primary time `τ_{j,j}`; `None` when not found.
    pub tau0: Option<u64>,
    /// Whether `τ_{j,j}` agrees across `j`.
    pub tau0_consistent: bool,
}

impl CollisionTable {
    pub fn rows(&self) -> Vec<(usize, usize, Option<u64>)> {
        let mut out = Vec::new();
        for (j, row) in self.tau.iter().enumerate() {
            for (k, &t) in row.iter().enumerate() {
                out.push((j, k, t));
            }
        }
        out
    }
}

pub fn collision_table(omega: f64, centers: &[f64], delta: f64, horizon: u64) -> CollisionTable {
    let m = centers.len();
    let flat: Vec<Option<u64>> = (0..m * m)
        .into_par_iter()
        .map(|ij| collision_time(omega, centers[ij / m], centers[ij % m], delta, horizon))
        .collect();
    let tau: Vec<Vec<Option<u64>>> = flat.chunks(m).map(|r| r.to_vec()).collect();
    let diag: Vec<Option<u64>> = (0..m).map(|j| tau[j][j]).collect();
    let tau0_consistent = diag.windows(2).all(|w| w[0] == w[1]);
    CollisionTable { delta, horizon, centers: centers.to_vec(), tau, tau0: diag.first().copied().flatten(), tau0_consistent }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Primary,
    Secondary,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub verdict: Verdict,
    pub table: CollisionTable,
}

pub fn dominance(model: &CocycleModel, delta: f64, horizon: u64) -> Result<DominanceReport, CollisionError> {
    let centers = model.bump_centers();
    let centers = if centers.is_empty() { critical_set(model)? } else { centers };
    if centers.is_empty() {
        return Err(CollisionError::NoCriticalPoints);
    }
    let table = collision_table(model.omega_value(), &centers, delta, horizon);
    let verdict = match table.tau0 {
        None => Verdict::Inconclusive,
        Some(t0) => {
            let secondary = table
                .rows()
                .iter()
                .any(|&(j, k, t)| j != k && matches!(t, Some(t) if t <= t0));
            if secondary {
                Verdict::Secondary
            } else {
                Verdict::Primary
            }
        }
    };
    Ok(DominanceReport { verdict, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Letter {
    B,
    G,
    H,
}

/// One letter of the factorized word, covering `raw[start..start + len]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorLetter {
    pub letter: Letter,
    pub start: usize,
    pub len: usize,
    /// Raw content of a merged boundary `B`.
    pub content: Option<Vec<Letter>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorizedWord {
    pub raw: Vec<Letter>,
    pub letters: Vec<FactorLetter>,
    /// Length of the factorized word.
    pub j: usize,
    pub k1: usize,
    pub k2: usize,
    pub truncated: Vec<Letter>,
    pub n: usize,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl FactorizedWord {
    pub fn h_count(&self) -> usize {
        self.letters.iter().filter(|l| l.letter == Letter::H).count()
    }

    pub fn b_count(&self) -> usize {
        self.letters.iter().filter(|l| l.letter == Letter::B).count()
    }

    /// Canonical content of an `H`: `G^{n₋} B G^{n−1} B G^{n₊−1}`.
    pub fn h_pattern(&self) -> Vec<Letter> {
        let mut v = vec![Letter::G; self.n_minus];
        v.push(Letter::B);
        v.extend(std::iter::repeat_n(Letter::G, self.n - 1));
        v.push(Letter::B);
        v.extend(std::iter::repeat_n(Letter::G, self.n_plus - 1));
        v
    }

    /// Rebuild the B/G word from the factorized letters.
    pub fn expand(&self) -> Vec<Letter> {
        let h = self.h_pattern();
        let mut out = Vec::with_capacity(self.raw.len());
        for l in &self.letters {
            match (l.letter, &l.content) {
                (Letter::H, _) => out.extend_from_slice(&h),
                (Letter::B, Some(c)) => out.extend_from_slice(c),
                (other, _) => out.push(other),
            }
        }
        out
    }

    /// `k₁ < τ₀` and `j − k₂ < τ₀`.
    pub fn boundary_bounds_hold(&self, tau0: u64) -> bool {
        (self.k1 as u64) < tau0 && ((self.j as i64 - self.k2 as i64).max(0) as u64) < tau0
    }

    /// `(k₂ − k₁ − 1)/j`.
    pub fn interior_fraction(&self) -> f64 {
        (self.k2 - self.k1 - 1) as f64 / self.j as f64
    }
}

fn merged_b(raw: &[Letter], idx: &[usize]) -> FactorLetter {
    let (a, b) = (idx[0], *idx.last().unwrap() + 1);
    FactorLetter { letter: Letter::B, start: a, len: b - a, content: Some(raw[a..b].to_vec()) }
}

/// Raw and factorized words of `M(x, l)`. `B` at index `i` iff
/// `σ^i x ∈ U_δ(𝒞₀)`; an `H` covers `[i₀ − n₋, i₀ + n + n₊)` for every
/// visit `i₀` to `U_δ(c₀)` whose window fits inside the word.
pub fn word(
    model: &CocycleModel,
    x: f64,
    l: usize,
    delta: f64,
    n: usize,
    n_minus: usize,
    n_plus: usize,
) -> Result<FactorizedWord, CollisionError> {
    if n == 0 || n_plus == 0 || l == 0 {
        return Err(CollisionError::Invalid("need n >= 1, n_plus >= 1, l >= 1".into()));
    }
    let centers = model.bump_centers();
    let centers = if centers.is_empty() { critical_set(model)? } else { centers };
    if centers.is_empty() {
        return Err(CollisionError::NoCriticalPoints);
    }
    let w = model.omega_value();
    let c0 = centers[0];
    let pts: Vec<f64> = (0..l).map(|i| orbit_point(x, i as i64, w)).collect();
    let raw: Vec<Letter> = pts
        .iter()
        .map(|&p| if centers.iter().any(|&c| circle_dist(p, c) < delta) { Letter::B } else { Letter::G })
        .collect();
    let span = n_minus + n + n_plus;

    let mut windows: Vec<usize> = Vec::new();
    for (i, &p) in pts.iter().enumerate() {
        if circle_dist(p, c0) < delta && i >= n_minus && i + n + n_plus <= l {
            let s = i - n_minus;
            if let Some(&prev) = windows.last() {
                if s < prev + span {
                    return Err(CollisionError::Overlap { first: prev, second: s });
                }
            }
            windows.push(s);
        }
    }
    let mut covered = vec![false; l];
    for &s in &windows {
        covered[s..s + span].iter_mut().for_each(|c| *c = true);
    }
    let stray: Vec<usize> = (0..l).filter(|&i| raw[i] == Letter::B && !covered[i]).collect();
    let (lead, trail): (Vec<usize>, Vec<usize>) = match (windows.first(), windows.last()) {
        (Some(&first), Some(&last)) => {
            for &i in &stray {
                if i > first && i < last + span {
                    return Err(CollisionError::StrayB(i));
                }
            }
            stray.iter().partition(|&&i| i < first)
        }
        _ => stray.iter().partition(|&&i| i < l / 2),
    };

    let mut letters = Vec::new();
    let mut i = 0;
    let mut wi = 0;
    while i < l {
        if wi < windows.len() && windows[wi] == i {
            letters.push(FactorLetter { letter: Letter::H, start: i, len: span, content: None });
            i += span;
            wi += 1;
        } else if !lead.is_empty() && i == lead[0] {
            let m = merged_b(&raw, &lead);
            i += m.len;
            letters.push(m);
        } else if !trail.is_empty() && i == trail[0] {
            let m = merged_b(&raw, &trail);
            i += m.len;
            letters.push(m);
        } else {
            letters.push(FactorLetter { letter: raw[i], start: i, len: 1, content: None });
            i += 1;
        }
    }

    let j = letters.len();
    let bpos: Vec<usize> = letters
        .iter()
        .enumerate()
        .filter(|(_, l)| l.letter == Letter::B)
        .map(|(k, _)| k + 1)
        .collect();
    let (k1, k2) = match bpos.as_slice() {
        [a, b] => (*a, *b),
        [a] if *a > j / 2 => (0, *a),
        [a] => (*a, j + 1),
        [] => (0, j + 1),
        _ => return Err(CollisionError::StrayB(letters[bpos[1] - 1].start)),
    };
    let truncated = letters[k1..k2 - 1].iter().map(|l| l.letter).collect();
    Ok(FactorizedWord { raw, letters, j, k1, k2, truncated, n, n_minus, n_plus })
}

/// A point `c₁` in the widest gap between `c₀ + kω`, `|k| ≤ k_max`, so that
/// neither critical point hits the other before the primary time.
pub fn widest_gap_point(omega: f64, c0: f64, k_max: i64) -> (f64, f64) {
    let mut pts: Vec<f64> = (-k_max..=k_max).map(|k| orbit_point(c0, k, omega)).collect();
    pts.sort_by(f64::total_cmp);
    let mut best = (0.0, 0.0);
    for i in 0..pts.len() {
        let a = pts[i];
        let b = if i + 1 < pts.len() { pts[i + 1] } else { pts[0] + 1.0 };
        if b - a > best.1 {
            best = ((0.5 * (a + b)).rem_euclid(1.0), b - a);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_two_bump_model, TwoBumpSpec};
    use crate::rotation::{convergents, RotationNumber};

    fn golden() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    #[test]
    fn critical_set_two_bump() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let cs = critical_set(&m).unwrap();
        let want = m.bump_centers();
        assert_eq!(cs.len(), 2);
        for (a, b) in cs.iter().zip(&want) {
            assert!((a - b).abs() < 1e-11);
        }
        let m2 = build_two_bump_model(&TwoBumpSpec { t: 0.01, ..TwoBumpSpec::default() }).unwrap();
        let cs2 = critical_set(&m2).unwrap();
        assert!((cs2[1] - cs[1] - 0.01).abs() < 1e-11);
        let flat = CocycleModel::constant(0.0, 3.0, RotationNumber::golden(10)).unwrap();
        assert!(critical_set(&flat).unwrap().is_empty());
    }

    #[test]
    fn collision_examples() {
        // Frozen from a direct loop over k = 1..10⁶.
        assert_eq!(collision_time(golden(), 0.0, 0.5, 0.05, 1_000_000), Some(4));
        assert_eq!(collision_time(golden(), 0.3, 0.9, 0.5, 10), Some(1));
        assert_eq!(collision_time(golden(), 0.0, 0.5, 1e-9, 1000), None);
    }

    #[test]
    fn primary_time_matches_convergents() {
        let w = RotationNumber::golden(30);
        let qs: Vec<u64> = convergents(&w, 25).unwrap().iter().map(|c| c.q as u64).collect();
        for n in 3..20 {
            let (q, q1) = (qs[n] as f64, qs[n + 1] as f64);
            // ∥q_n ω∥ < δ ≤ ∥q_{n−1} ω∥ gives τ₀ = q_n.
            let lo = crate::rotation::dist_to_integer(qs[n] as i64, w.value);
            let hi = crate::rotation::dist_to_integer(qs[n - 1] as i64, w.value);
            assert!(1.0 / (q + q1) < lo);
            let delta = 0.5 * (lo + hi);
            assert_eq!(collision_time(w.value, 0.2, 0.2, delta, 1 << 30), Some(qs[n]), "n = {n}");
        }
    }

    #[test]
    fn dominance_cases() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let d = dominance(&m, 0.02, 1000).unwrap();
        assert_eq!(d.verdict, Verdict::Secondary);
        assert_eq!(d.table.tau[0][1], Some(1));
        assert_eq!(d.table.tau0, Some(34));
        assert!(d.table.tau0_consistent);
        let far = TwoBumpSpec { c1_0: widest_gap_point(golden(), 0.1, 34).0, ..TwoBumpSpec::default() };
        let d = dominance(&build_two_bump_model(&far).unwrap(), 0.005, 100_000).unwrap();
        let t0 = d.table.tau0.unwrap();
        for (j, k, t) in d.table.rows() {
            if j != k {
                assert!(t.is_none_or(|t| t > t0) == (d.verdict == Verdict::Primary));
            }
        }
    }

    #[test]
    fn shrinking_delta_increases_tau() {
        let w = golden();
        let mut prev = 0;
        for &d in &[0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.001] {
            let t = collision_time(w, 0.13, 0.77, d, 1_000_000).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn all_g_word() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        // 0.3 stays away from both bumps for a few steps.
        let w = word(&m, 0.3, 2, 0.02, 1, 3, 1).unwrap();
        assert!(w.raw.iter().all(|&l| l == Letter::G));
        assert_eq!((w.k1, w.k2, w.j), (0, 3, 2));
        assert_eq!(w.truncated.len(), 2);
    }

    #[test]
    fn single_h_block() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let w = m.omega_value();
        // σ^{3} x = c₀, so the window starts at index 0.
        let x = orbit_point(m.bump_centers()[0], -3, w);
        let fw = word(&m, x, 5, 0.02, 1, 3, 1).unwrap();
        assert_eq!(fw.letters.len(), 1);
        assert_eq!(fw.letters[0].letter, Letter::H);
        assert_eq!(fw.expand(), fw.raw);
        assert_eq!(fw.raw, vec![Letter::G, Letter::G, Letter::G, Letter::B, Letter::B]);
    }

    #[test]
    fn long_word_structure() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let x = m.bump_centers()[0] + 0.001;
        let fw = word(&m, x, 20_000, 0.02, 1, 3, 1).unwrap();
        assert_eq!(fw.expand(), fw.raw);
        assert!(fw.b_count() <= 2);
        assert!(fw.boundary_bounds_hold(34));
        assert!(fw.interior_fraction() > 0.99);
        assert!(fw.h_count() > 100);
    }

    #[test]
    fn overlap_is_an_error() {
        let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
        let x = m.bump_centers()[0];
        assert!(matches!(word(&m, x, 5000, 0.02, 1, 30, 10), Err(CollisionError::Overlap { .. })));
    }

    proptest::proptest! {
        #[test]
        fn collision_time_is_first_hit(w in 0.0f64..1.0, c in 0.0f64..1.0, c2 in 0.0f64..1.0, delta in 1e-3f64..0.3) {
            let hit = collision_time(w, c, c2, delta, 5000);
            let first = (1..=5000i64).find(|&k| circle_dist(orbit_point(c, k, w), c2) < delta).map(|k| k as u64);
            proptest::prop_assert_eq!(hit, first);
        }
    }
}
