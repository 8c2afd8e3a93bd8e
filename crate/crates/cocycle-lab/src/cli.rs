//! Command-line front end. Every output is CSV (or JSON for reports) behind
//! a `#`-prefixed JSON header with the effective configuration.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::collisions::{dominance, Verdict};
use crate::dynamics::{certify_uh, lemma2_check, lyapunov, measured_c3, uniform_grid, CertifyConfig};
use crate::linalg::{diag, rot, rzr_decompose};
use crate::model::{build_two_bump_model, verify_hypotheses, CocycleModel, TwoBumpSpec};
use crate::resonance::{
    find_resonance, lemma3_validate, lemma4_validate, lemma5_validate, InteractionProfiles, ResonanceConfig,
    ResonanceError,
};
use crate::rotation::{brjuno_sum, check_condition_a, convergents, Gauge, RotationNumber};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "cocycle-lab", version, about = "SL(2,R) cocycles over circle rotations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Serialize)]
struct Common {
    /// Flat `key = value` model file; keys may carry a `model.` prefix.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to COCYCLE_LAB_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Model overrides, `key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lemma-1 decomposition of Z(l2) R(phi) Z(l1).
    Decompose(DecomposeArgs),
    #[command(subcommand)]
    Rotation(RotationCmd),
    /// Check hypotheses H1-H6 on the configured model.
    ModelCheck {
        #[arg(long, default_value_t = 1 << 16)]
        grid: usize,
    },
    Lyapunov(LyapunovArgs),
    Certify(CertifyArgs),
    Collisions {
        #[arg(long, default_value_t = 0.02)]
        delta: f64,
        #[arg(long, default_value_t = 10_000_000)]
        horizon: u64,
    },
    ResonanceScan(ScanArgs),
    ValidateLemma(LemmaArgs),
    /// Certificates over a t x lambda0 grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
struct DecomposeArgs {
    #[arg(long, default_value_t = 10.0)]
    l1: f64,
    #[arg(long, default_value_t = 7.0)]
    l2: f64,
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    /// Random (l1, l2, phi) samples instead of one row.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum RotationCmd {
    Cf(OmegaArgs),
    Brjuno(OmegaArgs),
    Conda {
        #[command(flatten)]
        omega: OmegaArgs,
        #[arg(long, default_value = "log1p")]
        gauge: String,
        #[arg(long, default_value_t = 1.0)]
        c_t: f64,
        #[arg(long, default_value_t = 0.5)]
        c_delta: f64,
    },
}

#[derive(Debug, Args, Clone, Serialize)]
struct OmegaArgs {
    /// `golden`, a comma list of quotients, or a float in (0, 1).
    #[arg(long, default_value = "golden")]
    omega: String,
    #[arg(long, default_value_t = 20)]
    depth: usize,
}

#[derive(Debug, Args, Serialize)]
struct LyapunovArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Random start points drawn with `--seed` instead of a uniform grid.
    #[arg(long)]
    random: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct CertifyArgs {
    #[arg(long, default_value_t = 136)]
    n: usize,
    #[arg(long, default_value_t = 1 << 14)]
    grid: usize,
    /// Growth target; defaults to a quarter of log lambda_min.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    refine_radius: f64,
}

#[derive(Debug, Args, Serialize)]
struct ScanArgs {
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value_t = -0.1)]
    t_min: f64,
    #[arg(long, default_value_t = 0.1)]
    t_max: f64,
    /// Rows of the t scan around t_res.
    #[arg(long, default_value_t = 9)]
    steps: usize,
    /// Half-width of the t scan; defaults to 3h.
    #[arg(long)]
    scan_radius: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    delta: f64,
    #[arg(long, default_value_t = 1 << 14)]
    grid: usize,
    #[arg(long, default_value_t = 40)]
    bisect_iters: usize,
    #[arg(long, default_value_t = 2000)]
    lyap_n: usize,
    /// Skip the window bisection.
    #[arg(long)]
    no_window: bool,
}

#[derive(Debug, Args, Serialize)]
struct LemmaArgs {
    /// 2, 3, 4 or 5.
    lemma: u8,
    #[arg(long, default_value_t = 1e4)]
    l1: f64,
    #[arg(long, default_value_t = 1e2)]
    l2: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
    #[arg(long, default_value_t = 400_001)]
    points: usize,
    #[arg(long)]
    l3_min: Option<f64>,
    #[arg(long, default_value_t = 1e3)]
    l3_max: f64,
    #[arg(long, default_value_t = 41)]
    l3_steps: usize,
    /// Lemma 2: segment start and length.
    #[arg(long, default_value_t = 0.5)]
    x: f64,
    #[arg(long, default_value_t = 10)]
    length: usize,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    /// Comma list of t values.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    t: Vec<f64>,
    /// Comma list of lambda0 values.
    #[arg(long = "lambda0", value_delimiter = ',', default_value = "30")]
    lambda0: Vec<f64>,
    #[arg(long, default_value_t = 136)]
    n: usize,
    #[arg(long, default_value_t = 1 << 12)]
    grid: usize,
    #[arg(long, default_value_t = 0.02)]
    refine_radius: f64,
}

#[derive(Debug)]
enum Failure {
    Refused(String),
    Internal(String),
}

impl From<ResonanceError> for Failure {
    fn from(e: ResonanceError) -> Self {
        match e {
            ResonanceError::Refused(m) => Failure::Refused(m),
            ResonanceError::NotFound(_) | ResonanceError::Avoidance { .. } | ResonanceError::Model(_) => {
                Failure::Refused(e.to_string())
            }
            _ => Failure::Internal(e.to_string()),
        }
    }
}

macro_rules! refuse_on {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self { Failure::Refused(e.to_string()) }
        }
    )*};
}
refuse_on!(crate::model::ModelError, crate::rotation::RotationError, crate::collisions::CollisionError, crate::linalg::LinalgError);

impl From<crate::dynamics::DynamicsError> for Failure {
    fn from(e: crate::dynamics::DynamicsError) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

/// Float formatting shared by every CSV body: 17 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

struct Output {
    header: Value,
    name: String,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    trailer: Option<Value>,
}

impl Output {
    fn new(name: &str, header: Value, columns: Vec<&'static str>) -> Self {
        Output { header, name: name.into(), columns, rows: Vec::new(), trailer: None }
    }

    fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# {}", self.header).unwrap();
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        if let Some(t) = &self.trailer {
            writeln!(s, "# summary {t}").unwrap();
        }
        s
    }
}

fn header(command: &str, config: Value) -> Value {
    let canon = serde_json::to_string(&config).unwrap();
    let hash = Sha256::digest(canon.as_bytes());
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    json!({ "artifact": "cocycle-lab", "version": VERSION, "command": command, "config": config, "config_sha256": hex })
}

fn emit(common: &Common, out: &Output) -> Res<()> {
    let text = out.render();
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{}.csv", out.name)), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(common: &Common, name: &str, head: Value, body: Value) -> Res<()> {
    let doc = json!({ "header": head, "report": body });
    let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{name}.json")), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_spec(common: &Common) -> Res<TwoBumpSpec> {
    let mut spec = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Refused(format!("{}: {e}", p.display())))?;
            let stripped: String = text
                .lines()
                .map(|l| l.trim_start().strip_prefix("model.").unwrap_or(l))
                .collect::<Vec<_>>()
                .join("\n");
            TwoBumpSpec::from_kv(&stripped)?
        }
        None => TwoBumpSpec::default(),
    };
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Refused(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        spec.set(k.trim().strip_prefix("model.").unwrap_or(k.trim()), v.trim())?;
    }
    Ok(spec)
}

fn spec_json(spec: &TwoBumpSpec) -> Value {
    serde_json::to_value(spec).unwrap()
}

fn parse_omega(s: &str, depth: usize) -> Res<RotationNumber> {
    if s == "golden" {
        return Ok(RotationNumber::golden(depth.max(2) + 2));
    }
    if s.contains(',') || (!s.contains('.') && s.parse::<u64>().is_ok()) {
        let q: Result<Vec<u64>, _> = s.split(',').map(|p| p.trim().parse::<u64>()).collect();
        let q = q.map_err(|e| Failure::Refused(format!("omega quotients: {e}")))?;
        return Ok(RotationNumber::from_quotients(q)?);
    }
    let v: f64 = s.parse().map_err(|e| Failure::Refused(format!("omega {s:?}: {e}")))?;
    Ok(RotationNumber::from_float(v, depth.max(2) + 2)?)
}

fn cmd_decompose(common: &Common, a: &DecomposeArgs) -> Res<()> {
    let head = header("decompose", json!({ "args": a, "seed": common.seed }));
    match a.samples {
        None => {
            let d = rzr_decompose(a.l2, a.phi, a.l1)?;
            let mut out = Output::new("decompose", head, vec!["psi", "chi", "mu", "a", "b", "beta"]);
            out.rows.push([d.psi, d.chi, d.mu, d.a, d.b, d.beta].iter().map(|&v| fmt_f(v)).collect());
            emit(common, &out)
        }
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let mut out = Output::new(
                "decompose",
                head,
                vec!["lambda1", "lambda2", "phi", "psi", "chi", "mu", "a", "b", "beta", "reconstruction_error"],
            );
            for _ in 0..k {
                let l1 = 10f64.powf(rng.random_range(0.0043..4.0));
                let l2 = 10f64.powf(rng.random_range(0.0043..4.0));
                let phi = rng.random_range(0.0..std::f64::consts::PI);
                let d = rzr_decompose(l2, phi, l1)?;
                let m = diag(l2)? * rot(phi) * diag(l1)?;
                let e = d.reconstruct().rel_diff(&m);
                out.rows.push([l1, l2, phi, d.psi, d.chi, d.mu, d.a, d.b, d.beta, e].iter().map(|&v| fmt_f(v)).collect());
            }
            emit(common, &out)
        }
    }
}

fn cmd_rotation(common: &Common, c: &RotationCmd) -> Res<()> {
    match c {
        RotationCmd::Cf(o) => {
            let w = parse_omega(&o.omega, o.depth)?;
            let conv = convergents(&w, o.depth)?;
            let mut out = Output::new("rotation_cf", header("rotation cf", json!(o)), vec!["n", "a_n", "p", "q", "abs_error"]);
            for c in &conv {
                let a_n = w.quotients.get(c.n.saturating_sub(1)).copied().unwrap_or(0);
                let err = (w.value - c.p as f64 / c.q as f64).abs();
                out.rows.push(vec![c.n.to_string(), a_n.to_string(), c.p.to_string(), c.q.to_string(), fmt_f(err)]);
            }
            emit(common, &out)
        }
        RotationCmd::Brjuno(o) => {
            let w = parse_omega(&o.omega, o.depth + 2)?;
            let r = brjuno_sum(&w, o.depth)?;
            let conv = convergents(&w, o.depth + 1)?;
            let mut out = Output::new("rotation_brjuno", header("rotation brjuno", json!(o)), vec!["n", "q_n", "increment", "partial_sum"]);
            for (i, (inc, ps)) in r.increments.iter().zip(&r.partial_sums).enumerate() {
                out.rows.push(vec![(i + 1).to_string(), conv[i].q.to_string(), fmt_f(*inc), fmt_f(*ps)]);
            }
            out.trailer = Some(json!({ "c_b_estimate": r.c_b_estimate, "converging": r.converging }));
            emit(common, &out)
        }
        RotationCmd::Conda { omega, gauge, c_t, c_delta } => {
            let w = parse_omega(&omega.omega, omega.depth)?;
            let g = Gauge::parse(gauge).ok_or_else(|| Failure::Refused(format!("unknown gauge {gauge:?}")))?;
            let r = check_condition_a(&w, g, *c_t, *c_delta, omega.depth)?;
            let cfg = json!({ "omega": omega, "gauge": gauge, "c_t": c_t, "c_delta": c_delta });
            let mut out = Output::new("rotation_conda", header("rotation conda", cfg), vec!["j", "n_j", "passes_a2", "in_chain", "delta_j"]);
            for (j, &n) in r.subsequence.iter().enumerate() {
                out.rows.push(vec![
                    j.to_string(),
                    n.to_string(),
                    r.passes_a2[j].to_string(),
                    r.chain.contains(&j).to_string(),
                    fmt_f(r.delta_sequence[j]),
                ]);
            }
            out.trailer = Some(json!({ "passes_a1": r.passes_a1, "chain": r.chain }));
            emit(common, &out)
        }
    }
}

fn model_of(common: &Common) -> Res<(TwoBumpSpec, CocycleModel)> {
    let spec = load_spec(common)?;
    let m = build_two_bump_model(&spec)?;
    Ok((spec, m))
}

fn cmd_model_check(common: &Common, grid: usize) -> Res<()> {
    let (spec, m) = model_of(common)?;
    let r = verify_hypotheses(&m, grid);
    let mut out = Output::new("model_check", header("model-check", json!({ "model": spec_json(&spec), "grid": grid })), vec!["hypothesis", "value", "pass"]);
    let rows: Vec<(&str, f64, bool)> = vec![
        ("H1", r.zeros.len() as f64, r.h1_pass),
        ("H2", r.h2.iter().map(|b| b.variation).fold(0.0, f64::max), r.h2_pass),
        ("H3", r.c3_witness, r.h3_pass),
        ("H4", r.winding as f64, r.h4_pass),
        ("H5", r.lambda_min, r.h5_pass),
        ("H6", r.h6_drho_dt, r.h6_pass),
        ("envelope", 0.0, r.envelope_pass),
    ];
    for (h, v, p) in rows {
        out.rows.push(vec![h.into(), fmt_f(v), p.to_string()]);
    }
    out.trailer = Some(json!({ "all_pass": r.all_pass }));
    emit(common, &out)?;
    if r.all_pass {
        Ok(())
    } else {
        Err(Failure::Refused("model violates at least one hypothesis".into()))
    }
}

fn cmd_lyapunov(common: &Common, a: &LyapunovArgs) -> Res<()> {
    let (spec, m) = model_of(common)?;
    let xs = match a.random {
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            (0..k).map(|_| rng.random_range(0.0..1.0)).collect()
        }
        None => uniform_grid(a.grid),
    };
    let est = lyapunov(&m, &xs, a.n, a.burn_in)?;
    let cfg = json!({ "model": spec_json(&spec), "args": a, "seed": common.seed });
    let mut out = Output::new("lyapunov", header("lyapunov", cfg), vec!["x", "vector_rate", "norm_rate"]);
    for p in &est.points {
        out.rows.push(vec![fmt_f(p.x), fmt_f(p.vector_rate), fmt_f(p.norm_rate)]);
    }
    out.trailer = Some(json!({ "integrated": est.integrated, "renormalizations": est.renormalizations }));
    emit(common, &out)
}

fn cmd_certify(common: &Common, a: &CertifyArgs) -> Res<()> {
    let (spec, m) = model_of(common)?;
    let target = a.target.unwrap_or(0.25 * m.lambda.min().ln());
    let cfg = CertifyConfig::new(a.n, a.grid, target).refine_near(&m.bump_centers(), a.refine_radius);
    let c = certify_uh(&m, &cfg)?;
    let head = header("certify", json!({ "model": spec_json(&spec), "args": a, "target_rate": target }));
    let mut out = Output::new("certify", head, vec!["x", "eu", "es"]);
    for i in 0..c.x.len() {
        out.rows.push(vec![fmt_f(c.x[i]), fmt_f(c.eu_angles[i]), fmt_f(c.es_angles[i])]);
    }
    out.trailer = Some(json!({
        "status": c.status,
        "min_norm_margin": c.min_norm_margin,
        "min_cell_bound": c.min_cell_bound,
        "lambda0_estimate": c.lambda0_estimate,
        "c_estimate": c.c_estimate,
        "crossings": c.crossings,
        "min_separation": c.min_separation,
        "unresolved_cells": c.unresolved_cells,
        "max_residual": c.max_residual,
    }));
    emit(common, &out)
}

fn cmd_collisions(common: &Common, delta: f64, horizon: u64) -> Res<()> {
    let (spec, m) = model_of(common)?;
    let d = dominance(&m, delta, horizon)?;
    let head = header("collisions", json!({ "model": spec_json(&spec), "delta": delta, "horizon": horizon }));
    let mut out = Output::new("collisions", head, vec!["j", "j_target", "tau"]);
    for (j, k, t) in d.table.rows() {
        out.rows.push(vec![j.to_string(), k.to_string(), t.map_or("none".into(), |t| t.to_string())]);
    }
    let verdict = match d.verdict {
        Verdict::Primary => "PRIMARY",
        Verdict::Secondary => "SECONDARY",
        Verdict::Inconclusive => "INCONCLUSIVE",
    };
    out.trailer = Some(json!({ "verdict": verdict, "tau0": d.table.tau0, "tau0_consistent": d.table.tau0_consistent }));
    emit(common, &out)
}

fn cmd_scan(common: &Common, a: &ScanArgs) -> Res<()> {
    let spec = load_spec(common)?;
    let cfg = ResonanceConfig {
        grid_size: a.grid,
        bisect_iters: a.bisect_iters,
        measure_window: !a.no_window,
        ..ResonanceConfig::default()
    };
    let w = find_resonance(&spec, a.order, (a.t_min, a.t_max), a.delta, &cfg)?;
    let radius = a.scan_radius.unwrap_or(if w.h > 0.0 { 3.0 * w.h } else { 1e-3 });
    let steps = a.steps.max(1);
    let ts: Vec<f64> = (0..steps)
        .map(|i| if steps == 1 { w.t_res } else { w.t_res - radius + 2.0 * radius * i as f64 / (steps - 1) as f64 })
        .collect();
    let rows: Vec<Res<Vec<String>>> = ts
        .iter()
        .map(|&t| {
            let m = build_two_bump_model(&TwoBumpSpec { t, ..spec.clone() })?;
            let cc = CertifyConfig::new(w.block_length, a.grid, w.target_rate).refine_near(&m.bump_centers(), cfg.refine_radius);
            let c = certify_uh(&m, &cc)?;
            let l = lyapunov(&m, &uniform_grid(64), a.lyap_n, 100)?;
            Ok(vec![fmt_f(t), c.certified().to_string(), fmt_f(c.min_norm_margin), fmt_f(l.integrated)])
        })
        .collect();
    let head = header("resonance-scan", json!({ "model": spec_json(&spec), "args": a }));
    let mut out = Output::new("resonance_scan", head.clone(), vec!["t", "certified", "min_norm_margin", "lyapunov"]);
    for r in rows {
        out.rows.push(r?);
    }
    emit(common, &out)?;
    emit_json(common, "resonance_window", head, serde_json::to_value(&w).unwrap())
}

fn cmd_lemma(common: &Common, a: &LemmaArgs) -> Res<()> {
    let prof = InteractionProfiles::default();
    let head = header("validate-lemma", json!({ "args": a }));
    let name = format!("lemma{}", a.lemma);
    match a.lemma {
        2 => {
            let (spec, m) = model_of(common)?;
            let c3 = measured_c3(&m, 1 << 14);
            let r = lemma2_check(&m, a.x, a.length, c3, 0.5 * c3)?;
            let head = header("validate-lemma", json!({ "args": a, "model": spec_json(&spec) }));
            emit_json(common, &name, head, serde_json::to_value(r).unwrap())
        }
        3 => {
            let r = lemma3_validate(a.l1, a.l2, a.tol)?;
            emit_json(common, &name, head, serde_json::to_value(r).unwrap())
        }
        4 => {
            let mut r = lemma4_validate(a.l1, a.l2, &prof, a.delta, a.points, a.tol)?;
            r.points.clear();
            emit_json(common, &name, head, serde_json::to_value(r).unwrap())
        }
        5 => {
            let lo = a.l3_min.unwrap_or(a.l2.sqrt());
            let r = lemma5_validate(a.l1, a.l2, (lo, a.l3_max), a.l3_steps, &prof, a.tol)?;
            emit_json(common, &name, head, serde_json::to_value(r).unwrap())
        }
        k => Err(Failure::Refused(format!("no validator for lemma {k}; use 2, 3, 4 or 5"))),
    }
}

fn cmd_sweep(common: &Common, a: &SweepArgs) -> Res<()> {
    let spec = load_spec(common)?;
    let cells: Vec<(f64, f64)> = a.t.iter().flat_map(|&t| a.lambda0.iter().map(move |&l| (t, l))).collect();
    let rows: Vec<Res<Vec<String>>> = cells
        .par_iter()
        .map(|&(t, l)| {
            let m = build_two_bump_model(&TwoBumpSpec { t, lambda0: l, ..spec.clone() })?;
            let cfg = CertifyConfig::new(a.n, a.grid, 0.25 * m.lambda.min().ln()).refine_near(&m.bump_centers(), a.refine_radius);
            let c = certify_uh(&m, &cfg)?;
            Ok(vec![
                fmt_f(t),
                fmt_f(l),
                serde_json::to_value(c.status).unwrap().as_str().unwrap_or("").to_string(),
                fmt_f(c.min_norm_margin),
                fmt_f(c.min_cell_bound),
                c.crossings.to_string(),
            ])
        })
        .collect();
    let head = header("sweep", json!({ "model": spec_json(&spec), "args": a }));
    let mut out = Output::new("sweep", head, vec!["t", "lambda0", "status", "min_norm_margin", "min_cell_bound", "crossings"]);
    for r in rows {
        out.rows.push(r?);
    }
    emit(common, &out)
}

fn configure_workers(common: &Common) -> Res<()> {
    let env = std::env::var("COCYCLE_LAB_WORKERS").ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = common.workers.or(env) {
        if n == 0 {
            return Err(Failure::Refused("--workers must be positive".into()));
        }
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Res<()> {
    configure_workers(&cli.common)?;
    let c = &cli.common;
    match &cli.command {
        Command::Decompose(a) => cmd_decompose(c, a),
        Command::Rotation(r) => cmd_rotation(c, r),
        Command::ModelCheck { grid } => cmd_model_check(c, *grid),
        Command::Lyapunov(a) => cmd_lyapunov(c, a),
        Command::Certify(a) => cmd_certify(c, a),
        Command::Collisions { delta, horizon } => cmd_collisions(c, *delta, *horizon),
        Command::ResonanceScan(a) => cmd_scan(c, a),
        Command::ValidateLemma(a) => cmd_lemma(c, a),
        Command::Sweep(a) => cmd_sweep(c, a),
    }
}

/// Parse `args` and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_REFUSED,
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Refused(m)) => {
            eprintln!("refused: {m}");
            EXIT_REFUSED
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            EXIT_INTERNAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_f(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn header_hash_is_stable() {
        let a = header("x", json!({ "k": 1 }));
        let b = header("x", json!({ "k": 1 }));
        assert_eq!(a, b);
        assert_ne!(a["config_sha256"], header("x", json!({ "k": 2 }))["config_sha256"]);
    }

    #[test]
    fn omega_parsing() {
        assert_eq!(parse_omega("golden", 10).unwrap().quotients, vec![1; 12]);
        assert_eq!(parse_omega("2,3,1", 10).unwrap().quotients, vec![2, 3, 1]);
        assert!(parse_omega("0.5.1", 10).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["cocycle-lab", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["cocycle-lab", "decompose", "--l1", "0.5"]), EXIT_REFUSED);
        assert_eq!(run(["cocycle-lab", "validate-lemma", "3", "--l1", "10", "--l2", "7"]), EXIT_REFUSED);
    }
}
