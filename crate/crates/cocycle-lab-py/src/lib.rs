use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cocycle_lab::collisions;
use cocycle_lab::dynamics::{self, CertifyConfig};
use cocycle_lab::linalg::rzr_decompose;
use cocycle_lab::model::{build_two_bump_model, CocycleModel, TwoBumpSpec};
use cocycle_lab::resonance::{self, ResonanceConfig};
use cocycle_lab::rotation::{self, RotationNumber};

fn refused(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// Reports go through serde_json so Python sees plain dicts and lists.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn spec_from(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<TwoBumpSpec> {
    let mut spec = TwoBumpSpec::default();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            spec.set(&key, &value).map_err(refused)?;
        }
    }
    Ok(spec)
}

fn model_from(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<CocycleModel> {
    build_two_bump_model(&spec_from(overrides)?).map_err(refused)
}

/// `(psi, chi, mu)` with `Z(l2) R(phi) Z(l1) = R(psi) Z(mu) R(chi)`.
#[pyfunction]
fn decompose(l1: f64, l2: f64, phi: f64) -> PyResult<(f64, f64, f64)> {
    let d = rzr_decompose(l2, phi, l1).map_err(refused)?;
    Ok((d.psi, d.chi, d.mu))
}

#[pyfunction]
#[pyo3(signature = (quotients=None, depth=20))]
fn convergents(quotients: Option<Vec<u64>>, depth: usize) -> PyResult<Vec<(u128, u128)>> {
    let w = match quotients {
        Some(q) => RotationNumber::from_quotients(q).map_err(refused)?,
        None => RotationNumber::golden(depth.max(1)),
    };
    let depth = depth.min(w.depth());
    Ok(rotation::convergents(&w, depth).map_err(refused)?.iter().map(|c| (c.p, c.q)).collect())
}

#[pyfunction]
#[pyo3(signature = (depth=20, quotients=None))]
fn brjuno_sum<'py>(py: Python<'py>, depth: usize, quotients: Option<Vec<u64>>) -> PyResult<Bound<'py, PyAny>> {
    let w = match quotients {
        Some(q) => RotationNumber::from_quotients(q).map_err(refused)?,
        None => RotationNumber::golden(depth + 2),
    };
    to_py(py, &rotation::brjuno_sum(&w, depth).map_err(refused)?)
}

/// First `k >= 1` with `dist(c + k omega, c_target) < delta`.
#[pyfunction]
#[pyo3(signature = (omega, c, c_target, delta, horizon=1_000_000))]
fn collision_time(omega: f64, c: f64, c_target: f64, delta: f64, horizon: u64) -> Option<u64> {
    collisions::collision_time(omega, c, c_target, delta, horizon)
}

#[pyfunction]
#[pyo3(signature = (model=None, n=100_000, grid=64, burn_in=1000))]
fn lyapunov(model: Option<&Bound<'_, PyDict>>, n: usize, grid: usize, burn_in: usize) -> PyResult<f64> {
    let m = model_from(model)?;
    let est = dynamics::lyapunov(&m, &dynamics::uniform_grid(grid), n, burn_in)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(est.integrated)
}

#[pyfunction]
#[pyo3(signature = (n, model=None, grid=4096, target=None, refine_radius=0.02))]
fn certify<'py>(
    py: Python<'py>,
    n: usize,
    model: Option<&Bound<'py, PyDict>>,
    grid: usize,
    target: Option<f64>,
    refine_radius: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let m = model_from(model)?;
    let target = target.unwrap_or(0.25 * m.lambda.min().ln());
    let cfg = CertifyConfig::new(n, grid, target).refine_near(&m.bump_centers(), refine_radius);
    let cert = py
        .detach(|| dynamics::certify_uh(&m, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &cert)
}

#[pyfunction]
#[pyo3(signature = (model=None, delta=0.02, horizon=1_000_000))]
fn dominance<'py>(py: Python<'py>, model: Option<&Bound<'py, PyDict>>, delta: f64, horizon: u64) -> PyResult<Bound<'py, PyAny>> {
    let m = model_from(model)?;
    to_py(py, &collisions::dominance(&m, delta, horizon).map_err(refused)?)
}

#[pyfunction]
#[pyo3(signature = (model=None, order=1, t_min=-0.1, t_max=0.1, delta=0.02, grid=16384))]
fn find_resonance<'py>(
    py: Python<'py>,
    model: Option<&Bound<'py, PyDict>>,
    order: usize,
    t_min: f64,
    t_max: f64,
    delta: f64,
    grid: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = spec_from(model)?;
    let cfg = ResonanceConfig { grid_size: grid, ..ResonanceConfig::default() };
    let w = py.detach(|| resonance::find_resonance(&spec, order, (t_min, t_max), delta, &cfg)).map_err(|e| match e {
        resonance::ResonanceError::Refused(_) => refused(e),
        other => PyRuntimeError::new_err(other.to_string()),
    })?;
    to_py(py, &w)
}

#[pymodule]
fn cocycle_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(convergents, m)?)?;
    m.add_function(wrap_pyfunction!(brjuno_sum, m)?)?;
    m.add_function(wrap_pyfunction!(collision_time, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(dominance, m)?)?;
    m.add_function(wrap_pyfunction!(find_resonance, m)?)?;
    Ok(())
}
