//! Python bindings. Matrices cross the boundary as lists of rows and
//! reports come back as plain dicts.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use jls_core::excitation::{self, InputBasis, ObservationPair};
use jls_core::model::{self, JlsModel, SwitchSequence};
use jls_core::modes::{self, Factorization, PfConfig};
use jls_core::realization::{self, RealizationReport};
use jls_core::{numerics, JlsError, Matrix, Vector};

create_exception!(jls_realize, JlsRealizeError, PyException);

fn err(e: JlsError) -> PyErr {
    JlsRealizeError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(JlsRealizeError::new_err("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    model::matrix_to_rows(m)
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = jls_core::format::to_json(value, false).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Model", module = "jls_realize", frozen, from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: JlsModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(
        modes: Vec<Vec<Vec<f64>>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        probs: Vec<f64>,
    ) -> PyResult<Self> {
        let modes = modes
            .into_iter()
            .map(matrix)
            .collect::<PyResult<Vec<_>>>()?;
        let inner = JlsModel::new(modes, matrix(b)?, matrix(c)?, probs).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: JlsModel::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: JlsModel::from_json_str(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }
    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }
    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }
    #[getter]
    fn s(&self) -> usize {
        self.inner.s()
    }
    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs.clone()
    }
    #[getter]
    fn modes(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.modes.iter().map(rows).collect()
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            inner: self.inner.scaled(factor),
        }
    }

    /// `sum_i p_i A_i (x) A_i`.
    fn second_moment(&self) -> Vec<Vec<f64>> {
        rows(&jls_core::oracle::second_moment(&self.inner))
    }

    /// Controllability, observability, stability and minimality.
    fn check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("r_B", realization::controllability_rank(&self.inner).rank)?;
        d.set_item("r_C", realization::observability_rank(&self.inner).rank)?;
        let stab = model::mean_square_stable(&self.inner).map_err(err)?;
        d.set_item("stability", to_dict(py, &stab)?)?;
        d.set_item(
            "minimality",
            to_dict(py, &model::minimality_check(&self.inner))?,
        )?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n={}, m={}, p={}, s={})",
            self.inner.n,
            self.inner.m,
            self.inner.p,
            self.inner.s()
        )
    }
}

#[pyclass(name = "Observations", module = "jls_realize", frozen)]
struct PyObservations {
    pair: ObservationPair,
}

#[pymethods]
impl PyObservations {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            pair: ObservationPair::load(path).map_err(err)?,
        })
    }

    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        rows(&self.pair.y)
    }
    #[getter]
    fn y_plus(&self) -> Vec<Vec<f64>> {
        rows(&self.pair.y_plus)
    }
    #[getter]
    fn horizon(&self) -> usize {
        self.pair.meta.horizon
    }
    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.pair.meta)
    }

    fn to_json(&self) -> PyResult<String> {
        self.pair.to_json().map_err(err)
    }

    fn to_csv(&self) -> String {
        self.pair.to_csv()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.pair.save_json(path).map_err(err)
    }
}

impl PyObservations {
    fn basis(&self) -> PyResult<InputBasis> {
        excitation::standard_basis(self.pair.meta.p, self.pair.meta.horizon).map_err(err)
    }
}

/// Rollout with 1-based switches `theta(0)..theta(K-1)`; missing inputs
/// are zero. Returns `y_1..y_K`.
#[pyfunction]
#[pyo3(signature = (model, switches, inputs=None))]
fn simulate(
    model: &PyModel,
    switches: Vec<usize>,
    inputs: Option<Vec<Vec<f64>>>,
) -> PyResult<Vec<Vec<f64>>> {
    let seq = SwitchSequence::from_one_based(&switches).map_err(err)?;
    let inputs: Vec<Vector> = inputs
        .unwrap_or_default()
        .into_iter()
        .map(Vector::from_vec)
        .collect();
    let traj = model::simulate_with_switches(&model.inner, &seq, &inputs).map_err(err)?;
    Ok(traj
        .outputs
        .iter()
        .map(|y| y.iter().copied().collect())
        .collect())
}

/// Exact or Monte Carlo observations under the standard input basis.
#[pyfunction]
#[pyo3(signature = (model, horizon, mode="exact", copies=1000, seed=0))]
fn observations(
    model: &PyModel,
    horizon: usize,
    mode: &str,
    copies: usize,
    seed: u64,
) -> PyResult<PyObservations> {
    let basis = excitation::standard_basis(model.inner.p, horizon).map_err(err)?;
    let pair = match mode {
        "exact" => excitation::exact_observations(&model.inner, &basis),
        "monte-carlo" => excitation::collect_observations(&model.inner, &basis, copies, seed),
        other => return Err(JlsRealizeError::new_err(format!("unknown mode {other:?}"))),
    }
    .map_err(err)?;
    Ok(PyObservations { pair })
}

/// State dimension from `rank(Y_O)`.
#[pyfunction]
#[pyo3(signature = (obs, tol=numerics::DEFAULT_RANK_TOL, model=None))]
fn estimate_dim<'py>(
    py: Python<'py>,
    obs: &PyObservations,
    tol: f64,
    model: Option<&PyModel>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut report = RealizationReport::from_observations(&obs.pair.y, obs.pair.meta.horizon, tol)
        .map_err(err)?;
    if let Some(m) = model {
        report = report.with_model(&m.inner).map_err(err)?;
    }
    to_dict(py, &report)
}

/// State dimension, then the number of modes. The oracle factorization
/// needs the model.
#[pyfunction]
#[pyo3(signature = (obs, tol=numerics::DEFAULT_RANK_TOL, factorization="oracle", model=None, b=None, max_iter=200, starts=8, mode_tol=modes::DEFAULT_MODE_TOL, seed=0))]
#[allow(clippy::too_many_arguments)]
fn estimate_modes<'py>(
    py: Python<'py>,
    obs: &PyObservations,
    tol: f64,
    factorization: &str,
    model: Option<&PyModel>,
    b: Option<f64>,
    max_iter: usize,
    starts: usize,
    mode_tol: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = PfConfig {
        b,
        max_iter,
        starts,
        rank_tol: mode_tol,
        seed,
        ..PfConfig::default()
    };
    let basis = obs.basis()?;
    let f = match (factorization, model) {
        ("oracle", Some(m)) => Factorization::Oracle {
            model: &m.inner,
            basis: &basis,
        },
        ("oracle", None) => {
            return Err(JlsRealizeError::new_err(
                "oracle factorization needs model=",
            ))
        }
        ("blind", _) => Factorization::Blind,
        (other, _) => {
            return Err(JlsRealizeError::new_err(format!(
                "unknown factorization {other:?}"
            )))
        }
    };
    let est =
        modes::estimate_modes(&obs.pair.y, &obs.pair.y_plus, tol, &config, &f).map_err(err)?;
    let d = to_dict(py, &est)?;
    d.set_item("s", est.s())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (y_plus, b=None, max_iter=200, starts=8, seed=0))]
fn solve_pf<'py>(
    py: Python<'py>,
    y_plus: Vec<Vec<f64>>,
    b: Option<f64>,
    max_iter: usize,
    starts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = PfConfig {
        b,
        max_iter,
        starts,
        seed,
        ..PfConfig::default()
    };
    let sol = modes::solve_pf_altmin(&matrix(y_plus)?, &config).map_err(err)?;
    to_dict(py, &sol)
}

#[pyfunction]
#[pyo3(signature = (model, t_max, tol=numerics::DEFAULT_RANK_TOL))]
fn scan<'py>(
    py: Python<'py>,
    model: &PyModel,
    t_max: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_dict(
        py,
        &realization::rank_saturation_scan(&model.inner, t_max, tol).map_err(err)?,
    )
}

#[pyfunction]
fn swap_transform(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&modes::swap_transform(&matrix(m)?).map_err(err)?))
}

#[pyfunction]
fn swap_inverse(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&modes::swap_inverse(&matrix(m)?).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (m, tol=numerics::DEFAULT_RANK_TOL))]
fn numerical_rank<'py>(py: Python<'py>, m: Vec<Vec<f64>>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &numerics::numerical_rank(&matrix(m)?, tol))
}

#[pymodule]
fn jls_realize(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("JlsRealizeError", m.py().get_type::<JlsRealizeError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyObservations>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(observations, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_dim, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_modes, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pf, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(swap_transform, m)?)?;
    m.add_function(wrap_pyfunction!(swap_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    Ok(())
}
