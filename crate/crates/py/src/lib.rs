//! Python bindings. Matrices cross the boundary as lists of rows of complex
//! numbers; structured results come back as dicts.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use rfsphase::cli::config::RunConfig;
use rfsphase::cli::pipeline::{self, Diagram as CoreDiagram};
use rfsphase::eigensolver::{ground_state as core_ground_state, SolverOptions};
use rfsphase::error::Error;
use rfsphase::linalg::CMat;
use rfsphase::models::{build_model, ModelKind, ModelSpec};
use rfsphase::ordparam::{self, Observable as CoreObservable, PhaseLabels};
use rfsphase::{fss, qstate};

create_exception!(rfsphase_py, RfsError, PyException);
create_exception!(rfsphase_py, ConfigError, RfsError);
create_exception!(rfsphase_py, NotIndefiniteError, RfsError);

fn err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::NotIndefinite { .. } => NotIndefiniteError::new_err(msg),
        Error::Config(_) | Error::InvalidSpec(_) | Error::Json(_) => ConfigError::new_err(msg),
        _ => RfsError::new_err(msg),
    }
}

fn to_matrix(rows: Vec<Vec<Complex64>>) -> PyResult<CMat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::new_err("matrix must be square and nonempty"));
    }
    Ok(CMat::from_fn(n, n, |i, j| rows[i][j]))
}

fn from_matrix(m: &CMat) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    serde_json::from_value(serde_json::Value::String(kind.to_string()))
        .map_err(|_| ConfigError::new_err(format!("unknown model kind {kind:?}")))
}

/// Hermitian unit-trace matrix.
#[pyclass]
#[derive(Clone)]
struct DensityMatrix {
    inner: qstate::DensityMatrix,
}

#[pymethods]
impl DensityMatrix {
    #[new]
    fn new(matrix: Vec<Vec<Complex64>>) -> PyResult<Self> {
        let inner = qstate::DensityMatrix::from_matrix(to_matrix(matrix)?).map_err(err)?;
        Ok(DensityMatrix { inner })
    }

    /// Projector onto a normalized state vector.
    #[staticmethod]
    fn pure(state: Vec<Complex64>) -> PyResult<Self> {
        let inner = qstate::DensityMatrix::pure(&state).map_err(err)?;
        Ok(DensityMatrix { inner })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<Complex64>> {
        from_matrix(&self.inner.matrix)
    }

    fn purity(&self) -> f64 {
        self.inner.purity()
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(order={})", self.inner.order())
    }
}

/// Solution of the order-parameter problem.
#[pyclass]
struct Observable {
    inner: CoreObservable,
}

#[pymethods]
impl Observable {
    #[getter]
    fn matrix(&self) -> Vec<Vec<Complex64>> {
        from_matrix(&self.inner.m)
    }

    #[getter]
    fn lambda_min(&self) -> f64 {
        self.inner.lambda_min
    }

    #[getter]
    fn a_lambda_min(&self) -> f64 {
        self.inner.a_lambda_min
    }

    #[getter]
    fn a_lambda_max(&self) -> f64 {
        self.inner.a_lambda_max
    }

    #[getter]
    fn null_dim(&self) -> usize {
        self.inner.null_dim
    }

    fn expectation(&self, rho: &DensityMatrix) -> f64 {
        self.inner.expectation(&rho.inner)
    }

    /// Pauli coefficients as (label, coeff), largest magnitude first.
    fn pauli_terms(&self) -> PyResult<Vec<(String, f64)>> {
        let d = qstate::pauli_decompose(&self.inner.m).map_err(err)?;
        Ok(d.terms.into_iter().map(|t| (t.label, t.coeff)).collect())
    }

    /// Eigenvalue and rank-one projector pairs, largest |eigenvalue| first.
    fn projectors(&self) -> Vec<(f64, Vec<Vec<Complex64>>)> {
        ordparam::eigen_projectors(&self.inner.m)
            .into_iter()
            .map(|(a, p)| (a, from_matrix(&p)))
            .collect()
    }
}

/// Ground states and RFS field over a parameter lattice.
#[pyclass]
struct Diagram {
    inner: CoreDiagram,
    config: RunConfig,
}

#[pymethods]
impl Diagram {
    /// Builds the diagram described by a JSON run configuration.
    #[new]
    fn new(py: Python<'_>, config_json: &str) -> PyResult<Self> {
        let config = RunConfig::from_json(config_json).map_err(err)?;
        let inner = py.allow_threads(|| CoreDiagram::compute(&config)).map_err(err)?;
        Ok(Diagram { inner, config })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.lattice.rows, self.inner.lattice.cols)
    }

    /// Parameter point of each cell, row-major.
    fn points(&self) -> Vec<[f64; 2]> {
        let l = &self.inner.lattice;
        (0..l.len()).map(|n| l.point(n / l.cols, n % l.cols)).collect()
    }

    /// g̃ per cell; NaN where undefined.
    fn g(&self) -> Vec<f64> {
        self.inner.field.g.clone()
    }

    /// Angle of the vector field per cell, or None.
    fn angles(&self) -> Vec<Option<f64>> {
        self.inner.field.angle.clone()
    }

    fn energies(&self) -> Vec<f64> {
        self.inner.states.iter().map(|s| s.energy).collect()
    }

    /// Reduced density matrices of the centered k-site window.
    fn rdms(&self, k: usize) -> PyResult<Vec<DensityMatrix>> {
        Ok(self
            .inner
            .rdms(k)
            .map_err(err)?
            .into_iter()
            .map(|inner| DensityMatrix { inner })
            .collect())
    }

    fn field_csv(&self) -> String {
        rfsphase::rfsfield::field_csv(&self.inner.field)
    }

    /// Labels phases from the angle map and solves for the observable.
    #[pyo3(signature = (two_state=false))]
    fn order_parameter(&self, py: Python<'_>, two_state: bool) -> PyResult<(Observable, PyObject)> {
        let r = py
            .allow_threads(|| pipeline::order_param_from_diagram(&self.inner, &self.config, two_state))
            .map_err(err)?;
        let summary = to_py(py, &r)?;
        Ok((Observable { inner: r.observable }, summary))
    }
}

#[pyfunction]
fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> PyResult<f64> {
    qstate::uhlmann_fidelity(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn bures_distance_sq(a: &DensityMatrix, b: &DensityMatrix) -> PyResult<f64> {
    qstate::bures_distance_sq(&a.inner, &b.inner).map_err(err)
}

/// Reduced density matrix of a pure state on sites start..stop.
#[pyfunction]
fn partial_trace(state: Vec<Complex64>, n_sites: usize, start: usize, stop: usize) -> PyResult<DensityMatrix> {
    let inner = qstate::partial_trace(&state, n_sites, start..stop).map_err(err)?;
    Ok(DensityMatrix { inner })
}

#[pyfunction]
fn pauli_decompose(matrix: Vec<Vec<Complex64>>) -> PyResult<Vec<(String, f64)>> {
    let d = qstate::pauli_decompose(&to_matrix(matrix)?).map_err(err)?;
    Ok(d.terms.into_iter().map(|t| (t.label, t.coeff)).collect())
}

/// Ground-state energy and vector of a model at λ = (lambda1, lambda2).
#[pyfunction]
#[pyo3(signature = (kind, sites, lambda1, lambda2, tiebreak=1e-6))]
fn ground_state(kind: &str, sites: usize, lambda1: f64, lambda2: f64, tiebreak: f64) -> PyResult<(f64, Vec<f64>)> {
    let spec = ModelSpec::new(parse_kind(kind)?, sites).with_tiebreak(tiebreak);
    let model = build_model(&spec).map_err(err)?;
    let gs = core_ground_state(&model.assemble([lambda1, lambda2]), None, &SolverOptions::default())
        .and_then(|g| g.require_converged())
        .map_err(err)?;
    Ok((gs.energy, gs.vector))
}

/// Observable separating the `plus` and `minus` sets.
#[pyfunction]
fn solve_order_parameter(plus: Vec<DensityMatrix>, minus: Vec<DensityMatrix>) -> PyResult<Observable> {
    let rdms: Vec<qstate::DensityMatrix> = plus.iter().chain(&minus).map(|d| d.inner.clone()).collect();
    let labels = PhaseLabels::from_sets((0..plus.len()).collect(), (plus.len()..rdms.len()).collect()).map_err(err)?;
    let inner = ordparam::solve_order_parameter(&rdms, &labels).map_err(err)?;
    Ok(Observable { inner })
}

/// Closed-form observable for a single pair of states.
#[pyfunction]
fn solve_two_state(plus: &DensityMatrix, minus: &DensityMatrix) -> PyResult<Observable> {
    let inner = ordparam::solve_two_state(&plus.inner, &minus.inner).map_err(err)?;
    Ok(Observable { inner })
}

/// Fit of G(L) = a L^s (1 + b L^(−θ s)) to maximal gradients.
#[pyfunction]
fn fit_fss(py: Python<'_>, lengths: Vec<f64>, gradients: Vec<f64>) -> PyResult<PyObject> {
    let fit = fss::fit_fss(&lengths, &gradients).map_err(err)?;
    to_py(py, &fit)
}

/// Location and magnitude of the steepest slope of a sampled curve.
#[pyfunction]
fn max_gradient(h: Vec<f64>, curve: Vec<f64>) -> PyResult<(f64, f64)> {
    fss::max_gradient(&h, &curve).map_err(err)
}

/// Runs the oracle checks; returns one dict per check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn validate(py: Python<'_>, seed: u64) -> PyResult<Vec<PyObject>> {
    let checks = py.allow_threads(|| pipeline::validation_suite(seed));
    checks
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("name", &c.name)?;
            d.set_item("tolerance", c.tolerance)?;
            d.set_item("measured", c.measured)?;
            d.set_item("passed", c.passed)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

#[pymodule]
fn rfsphase_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("RfsError", py.get_type::<RfsError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("NotIndefiniteError", py.get_type::<NotIndefiniteError>())?;
    m.add_class::<DensityMatrix>()?;
    m.add_class::<Observable>()?;
    m.add_class::<Diagram>()?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(bures_distance_sq, m)?)?;
    m.add_function(wrap_pyfunction!(partial_trace, m)?)?;
    m.add_function(wrap_pyfunction!(pauli_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(ground_state, m)?)?;
    m.add_function(wrap_pyfunction!(solve_order_parameter, m)?)?;
    m.add_function(wrap_pyfunction!(solve_two_state, m)?)?;
    m.add_function(wrap_pyfunction!(fit_fss, m)?)?;
    m.add_function(wrap_pyfunction!(max_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
