//! One PASS/FAIL line per acceptance criterion. Exits nonzero when any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cocycle_lab::collisions::{collision_time, dominance, widest_gap_point, word, Verdict};
use cocycle_lab::dynamics::{certify_uh, lyapunov, uniform_grid, CertifyConfig};
use cocycle_lab::linalg::{diag, operator_norm, rot, rzr_decompose};
use cocycle_lab::model::{build_two_bump_model, TwoBumpSpec};
use cocycle_lab::resonance::{
    block_decompose, find_resonance, lemma3_validate, lemma4_validate, lemma5_validate, measured_c_m, select_n_pm,
    InteractionProfiles, ResonanceConfig,
};
use cocycle_lab::rotation::{brjuno_sum, convergents, RotationNumber};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn decomposition_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (lo, hi) = (1.01f64.ln(), 1e4f64.ln());
    let samples: Vec<(f64, f64, f64)> = (0..100_000)
        .map(|_| (rng.random_range(lo..hi).exp(), rng.random_range(lo..hi).exp(), rng.random_range(0.0..PI)))
        .collect();
    let (rec, norm) = samples
        .par_iter()
        .map(|&(l1, l2, phi)| {
            let d = rzr_decompose(l2, phi, l1).unwrap();
            let m = diag(l2).unwrap() * rot(phi) * diag(l1).unwrap();
            (d.reconstruct().rel_diff(&m), (d.mu - operator_norm(&m)).abs() / d.mu)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    outcome(rec <= 1e-9 && norm <= 1e-9, format!("max reconstruction {rec:.2e}, max norm mismatch {norm:.2e}"))
}

fn decomposition_limits() -> Outcome {
    let d = rzr_decompose(1e3, FRAC_PI_2, 1e3).unwrap();
    let quarter = (d.mu - 1.0).abs() <= 1e-9 && (d.psi - FRAC_PI_2).abs() <= 1e-9 && d.chi.abs() <= 1e-9;
    let mut worst: (f64, f64) = (f64::INFINITY, 0.0);
    for &l in &[1e3, 1e2, 10.0] {
        for i in 0..=2000 {
            let phi = PI * i as f64 / 2000.0;
            if phi.cos().abs() < 0.5 {
                continue;
            }
            let d = rzr_decompose(l, phi, l).unwrap();
            let r = d.mu / (l * l * phi.cos().abs());
            worst = (worst.0.min(r), worst.1.max(r));
        }
    }
    let ok = quarter && worst.0 >= 0.9 && worst.1 <= 1.1;
    outcome(
        ok,
        format!("phi = pi/2: mu - 1 = {:.1e}, psi - pi/2 = {:.1e}, chi = {:.1e}; ratio range [{:.4}, {:.4}]", d.mu - 1.0, d.psi - FRAC_PI_2, d.chi, worst.0, worst.1),
    )
}

fn norm_minimum() -> Outcome {
    let a = lemma3_validate(1e4, 1e2, 0.01).unwrap();
    let b = lemma3_validate(1e2, 1e4, 0.01).unwrap();
    let ok = (0.99..=1.01).contains(&a.ratio) && (0.99..=1.01).contains(&b.ratio);
    outcome(
        ok,
        format!(
            "lambda1 >> lambda2: ratio {:.6} (min at xi = {:.2e}, predicted {:.2e}); lambda2 >> lambda1: ratio {:.6}",
            a.ratio, a.xi_min, a.xi0_asymptotic, b.ratio
        ),
    )
}

fn interaction() -> Outcome {
    let r = lemma4_validate(1e4, 1e2, &InteractionProfiles::default(), 0.0, 400_001, 0.1).unwrap();
    let g = r.phi2_gap / r.gap_proof;
    let c = r.max_abs_chi2 / r.chi2_predicted;
    let ok = (g - 1.0).abs() <= 0.1 && (c - 1.0).abs() <= 0.1;
    outcome(ok, format!("gap / 2sqrt(beta) = {g:.4}, max|chi2| / predicted = {c:.4}"))
}

fn three_factor() -> Outcome {
    let r = lemma5_validate(1e4, 1e2, (10.0, 1e3), 41, &InteractionProfiles::default(), 0.1).unwrap();
    let ok = r.bounds_hold && r.worst_within_factor2;
    let max_tan = r.rows.iter().map(|x| x.max_abs_tan_phi3).fold(0.0, f64::max);
    let min_mu = r.rows.iter().map(|x| x.min_mu3).fold(f64::INFINITY, f64::min);
    outcome(
        ok,
        format!(
            "max|tan Phi3| {max_tan:.4} (< {:.3}), min mu3 {min_mu:.3} (>= {:.3}), worst lambda3 {:.3} vs predicted {:.3}",
            r.tan_bound, r.mu3_bound, r.lambda3_worst, r.lambda3_star
        ),
    )
}

/// Direct loop without the compensated product used by the library.
fn brute_collision(w: f64, c: f64, c2: f64, delta: f64, horizon: u64) -> Option<u64> {
    let mut k = 1u64;
    while k <= horizon {
        let d = (c + k as f64 * w - c2).rem_euclid(1.0);
        if d.min(1.0 - d) < delta {
            return Some(k);
        }
        k += 1;
    }
    None
}

fn collision_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cases: Vec<(f64, f64, f64, f64)> = (0..1000)
        .map(|_| {
            let w = rng.random_range(0.0..1.0);
            let d = rng.random_range(1e-7f64.ln()..0.5f64.ln()).exp();
            (w, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), d)
        })
        .collect();
    let bad: Vec<usize> = cases
        .par_iter()
        .enumerate()
        .filter(|(_, &(w, c, c2, d))| collision_time(w, c, c2, d, 1_000_000) != brute_collision(w, c, c2, d, 1_000_000))
        .map(|(i, _)| i)
        .collect();
    outcome(bad.is_empty(), format!("{} of 1000 disagree", bad.len()))
}

fn continued_fractions() -> Outcome {
    let w = RotationNumber::golden(40);
    // Best approximations of the second kind by exhaustive search.
    let mut best = Vec::new();
    let mut record = f64::INFINITY;
    let mut p_of = Vec::new();
    for q in 1..=10_000u64 {
        let p = (q as f64 * w.value).round();
        let e = (q as f64 * w.value - p).abs();
        if e < record {
            record = e;
            best.push(q as u128);
            p_of.push(p as u128);
        }
    }
    let conv: Vec<(u128, u128)> =
        convergents(&w, 40).unwrap().iter().filter(|c| c.q <= 10_000).map(|c| (c.p, c.q)).collect();
    let mut fib = vec![(0u128, 1u128), (1, 1)];
    while fib.last().unwrap().1 <= 10_000 {
        let (a, b) = (fib[fib.len() - 2], fib[fib.len() - 1]);
        fib.push((a.0 + b.0, a.1 + b.1));
    }
    let fib: Vec<(u128, u128)> = fib.into_iter().skip(1).filter(|f| f.1 <= 10_000).collect();
    let search: Vec<(u128, u128)> = p_of.into_iter().zip(best).collect();
    let cf_ok = conv == fib && conv == search;
    let b = brjuno_sum(&w, 20).unwrap();
    let nondecreasing = b.partial_sums.windows(2).all(|p| p[1] >= p[0]);
    let decaying = b.increments[1..].windows(2).all(|p| p[1] < p[0]) && *b.increments.last().unwrap() < 1e-3;
    outcome(
        cf_ok && nondecreasing && decaying,
        format!(
            "{} convergents with q <= 1e4 match Fibonacci and the exhaustive search: {cf_ok}; partial sums nondecreasing: {nondecreasing}; increments decaying: {decaying}",
            conv.len()
        ),
    )
}

fn resonance_window() -> Outcome {
    let cfg = ResonanceConfig::default();
    let mut rows = Vec::new();
    for &lam in &[10.0, 30.0, 100.0] {
        let spec = TwoBumpSpec { lambda0: lam, ..TwoBumpSpec::default() };
        let w = find_resonance(&spec, 1, (-0.1, 0.1), 0.02, &cfg).unwrap();
        rows.push((lam, w, spec));
    }
    let (_, w30, spec30) = &rows[1];
    let certified = w30.certified_at_t_res;
    let positive = w30.h > 0.0;
    let hs: Vec<f64> = rows.iter().map(|r| r.1.h).collect();
    let nonincreasing = hs.windows(2).all(|p| p[1] <= p[0]);
    let base = w30.h * 900.0;
    let scaled: Vec<f64> = rows.iter().map(|r| r.1.h * r.0 * r.0 / base).collect();
    let in_band = scaled.iter().all(|&s| (0.2..=5.0).contains(&s));
    let far_t = w30.t_res + 100.0 * w30.h;
    let m = build_two_bump_model(&TwoBumpSpec { t: far_t, ..spec30.clone() }).unwrap();
    let c = CertifyConfig::new(w30.block_length, cfg.grid_size, w30.target_rate).refine_near(&m.bump_centers(), cfg.refine_radius);
    let far = certify_uh(&m, &c).unwrap();
    let denied = !far.certified();
    outcome(
        certified && positive && nonincreasing && in_band && denied,
        format!(
            "(a) certified at t_res: {certified}; (b) h = {:.3e}; (c) h = {:?}, h*lambda0^2 / (lambda0 = 30 value) = {:?}; (d) at t_res + 100h: {:?}; N = {}",
            w30.h,
            hs.iter().map(|h| format!("{h:.3e}")).collect::<Vec<_>>(),
            scaled.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>(),
            far.status,
            w30.block_length
        ),
    )
}

fn lyapunov_without_secondary() -> Outcome {
    let mut quotients = vec![2, 3, 1, 50];
    quotients.extend(std::iter::repeat_n(1, 36));
    let w = RotationNumber::from_quotients(quotients.clone()).unwrap();
    let c0 = 0.1;
    let delta = 0.02;
    let tau0 = collision_time(w.value, c0, c0, delta, 1_000_000).unwrap();
    let (c1, gap) = widest_gap_point(w.value, c0, tau0 as i64);
    let spec = TwoBumpSpec { c1_0: c1, lambda0: 100.0, omega: quotients, ..TwoBumpSpec::default() };
    let m = build_two_bump_model(&spec).unwrap();
    let dom = dominance(&m, delta, 1_000_000).unwrap();
    let primary = dom.verdict == Verdict::Primary;
    let est = lyapunov(&m, &uniform_grid(64), 100_000, 1000).unwrap();
    let bound = 0.5 * 100f64.ln();
    outcome(
        primary && est.integrated >= bound,
        format!(
            "c1 = {c1:.6} in a gap of {gap:.4}, verdict {:?} (tau0 = {tau0}); integrated {:.4} vs {bound:.4}",
            dom.verdict, est.integrated
        ),
    )
}

fn block_decomposition() -> Outcome {
    let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
    let c_m = measured_c_m(&m);
    let (nm, np) = select_n_pm(&m, 1, 0.02, c_m).unwrap().unwrap();
    let c0 = m.bump_centers()[0];
    let mut worst_rec = 0.0f64;
    let mut worst_angle = 0.0f64;
    let mut bracket = true;
    for i in 0..=200 {
        let x = c0 - 0.0199 + 0.0398 * i as f64 / 200.0;
        let b = block_decompose(&m, x, 1, nm, np, 0.02, c_m).unwrap();
        worst_rec = worst_rec.max(b.reconstruction_error);
        worst_angle = worst_angle.max(b.max_middle_angle);
        bracket &= b.mu_in_bracket;
    }
    let kb = 10.0 / 900.0;
    outcome(
        worst_rec <= 1e-9 && worst_angle <= kb && bracket,
        format!("n_-, n_+ = {nm}, {np}; max reconstruction {worst_rec:.2e}; max|Phi_n|, |chi_n| = {worst_angle:.2e} (<= {kb:.2e}); mu_n bracket: {bracket}"),
    )
}

fn words() -> Outcome {
    let m = build_two_bump_model(&TwoBumpSpec::default()).unwrap();
    let c0 = m.bump_centers()[0];
    let w = word(&m, c0 + 0.003, 100_000, 0.02, 1, 3, 1).unwrap();
    let exact = w.expand() == w.raw;
    let bounds = w.boundary_bounds_hold(34);
    let frac = w.interior_fraction();
    outcome(
        exact && bounds && frac >= 0.99,
        format!("j = {}, H count {}, k1 = {}, k2 = {}; expansion exact: {exact}; bounds: {bounds}; fraction {frac:.6}", w.j, w.h_count(), w.k1, w.k2),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome, Option<f64>)> = vec![
        ("1 canonical decomposition round trip", decomposition_round_trip, Some(10.0)),
        ("2 canonical decomposition limits", decomposition_limits, None),
        ("3 two-factor norm minimum", norm_minimum, Some(5.0)),
        ("4 interaction of two collisions", interaction, Some(10.0)),
        ("5 three-factor product", three_factor, None),
        ("6 collision oracle", collision_oracle, None),
        ("7 continued fractions and Brjuno sums", continued_fractions, None),
        ("8 resonance window", resonance_window, Some(300.0)),
        ("9 Lyapunov exponent without secondary collisions", lyapunov_without_secondary, Some(120.0)),
        ("10 block decomposition", block_decomposition, None),
        ("11 word factorization", words, None),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let pass = o.pass && in_time;
        let tag = if pass { "PASS" } else { "FAIL" };
        let budget = limit.map(|l| format!(" of {l:.0}s")).unwrap_or_default();
        println!("{tag} criterion {name} [{secs:.1}s{budget}]: {}", o.detail);
        if !pass {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failing");
    if failed > 0 {
        std::process::exit(1);
    }
}
