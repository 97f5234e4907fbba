//! Python bindings for the ensemble MHD solver.
//!
//! Structured results cross the boundary as JSON and arrive in Python as
//! plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use ensemble_mhd::harness::experiments::{configure_execution, mean_errors, member_errors};
use ensemble_mhd::harness::{self, Experiment, ExperimentConfig};
use ensemble_mhd::manufactured::{self, ManufacturedCase};
use ensemble_mhd::mesh::{build_rect_mesh, Mesh as CoreMesh};
use ensemble_mhd::stepper::{Discretization, EnsembleState, Scheme, StepReport, Stepper};
use ensemble_mhd::{analysis, Error};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "ensemble" => Ok(Scheme::Ensemble),
        "serial" => Ok(Scheme::Serial),
        other => Err(PyValueError::new_err(format!(
            "unknown scheme `{other}` (expected `ensemble` or `serial`)"
        ))),
    }
}

/// Uniform triangulation of a rectangle.
#[pyclass(frozen, module = "ensemble_mhd_py")]
struct Mesh {
    inner: Arc<CoreMesh>,
}

#[pymethods]
impl Mesh {
    #[new]
    #[pyo3(signature = (x_range, y_range, nx, ny = None))]
    fn new(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: Option<usize>) -> PyResult<Self> {
        let mesh = build_rect_mesh(x_range, y_range, nx, ny.unwrap_or(nx)).map_err(to_py_err)?;
        Ok(Mesh { inner: Arc::new(mesh) })
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.inner.n_vertices()
    }

    #[getter]
    fn n_triangles(&self) -> usize {
        self.inner.n_triangles()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn n_boundary_edges(&self) -> usize {
        self.inner.boundary_edges().len()
    }

    /// Maximum element diameter.
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn vertices(&self) -> Vec<(f64, f64)> {
        self.inner.vertices().iter().map(|p| (p[0], p[1])).collect()
    }

    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.triangles().iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(vertices={}, triangles={}, h={:.6e})",
            self.inner.n_vertices(),
            self.inner.n_triangles(),
            self.inner.h()
        )
    }
}

/// An ensemble of one registered case advanced step by step.
#[pyclass(module = "ensemble_mhd_py")]
struct Simulation {
    case: ManufacturedCase,
    disc: Arc<Discretization>,
    stepper: Stepper,
    state: EnsembleState,
    scheme: Scheme,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (case, divisions, dt, final_time = 1.0, scheme = "ensemble"))]
    fn new(case: &str, divisions: usize, dt: f64, final_time: f64, scheme: &str) -> PyResult<Self> {
        let scheme = parse_scheme(scheme)?;
        let case = manufactured::case_by_name(case).map_err(to_py_err)?;
        let mesh = Arc::new(build_rect_mesh(case.x_range, case.y_range, divisions, divisions).map_err(to_py_err)?);
        let disc = Arc::new(Discretization::new(mesh, case.field()).map_err(to_py_err)?);
        let stepper = Stepper::new(disc.clone(), case.params(dt, final_time)).map_err(to_py_err)?;
        let state = case.initial_state(&disc).map_err(to_py_err)?;
        Ok(Simulation {
            case,
            disc,
            stepper,
            state,
            scheme,
        })
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.state.n
    }

    #[getter]
    fn members(&self) -> usize {
        self.state.members()
    }

    /// Velocity factorizations performed so far.
    #[getter]
    fn factorizations(&self) -> usize {
        self.stepper.factorizations()
    }

    /// `½‖φ̄‖² + ½‖ū‖²` of the current state.
    fn energy(&self) -> PyResult<f64> {
        analysis::ensemble_energy(
            &self.disc.velocity,
            &self.state.mean_u,
            &self.disc.potential,
            &self.state.mean_phi,
        )
        .map_err(to_py_err)
    }

    /// Advances one step and returns the step report as a dict.
    fn step(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let report = self.advance(py)?;
        to_py_object(py, &report)
    }

    /// Advances `steps` steps and returns the energy after each.
    fn run(&mut self, py: Python<'_>, steps: usize) -> PyResult<Vec<f64>> {
        let mut energies = Vec::with_capacity(steps);
        for _ in 0..steps {
            energies.push(self.advance(py)?.energy);
        }
        Ok(energies)
    }

    /// Per-member `[‖u−u_h‖, ‖∇(u−u_h)‖, ‖φ−φ_h‖, ‖∇(φ−φ_h)‖]` against the
    /// exact solution; `None` for cases without one.
    fn member_errors(&self) -> PyResult<Option<Vec<[f64; 4]>>> {
        if !self.case.has_exact() {
            return Ok(None);
        }
        (0..self.state.members())
            .map(|j| member_errors(&self.case, &self.disc, &self.state, j))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(to_py_err)
    }

    /// `[‖ū−ū_h‖, ‖φ̄−φ̄_h‖]`; `None` for cases without an exact solution.
    fn mean_errors(&self) -> PyResult<Option<[f64; 2]>> {
        if !self.case.has_exact() {
            return Ok(None);
        }
        mean_errors(&self.case, &self.disc, &self.state).map(Some).map_err(to_py_err)
    }

    /// Velocity coefficients of member `j`.
    fn velocity(&self, j: usize) -> PyResult<Vec<f64>> {
        self.state
            .u
            .get(j)
            .map(|u| u.coeffs().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("member {j} out of range")))
    }

    /// Potential coefficients of member `j`.
    fn potential(&self, j: usize) -> PyResult<Vec<f64>> {
        self.state
            .phi
            .get(j)
            .map(|p| p.coeffs().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("member {j} out of range")))
    }
}

impl Simulation {
    fn advance(&mut self, py: Python<'_>) -> PyResult<StepReport> {
        let Simulation {
            case,
            stepper,
            state,
            scheme,
            ..
        } = self;
        let scheme = *scheme;
        py.detach(|| stepper.advance_with(state, scheme, &*case, &*case))
            .map_err(to_py_err)
    }
}

/// Observed orders between consecutive rows.
#[pyfunction]
fn convergence_rate(errors: Vec<f64>, h: Vec<f64>) -> PyResult<Vec<f64>> {
    analysis::convergence_rate(&errors, &h).map_err(to_py_err)
}

/// `(max, sqrt(dt Σ e²))` of a per-step error series.
#[pyfunction]
fn discrete_norms(errors: Vec<f64>, dt: f64) -> PyResult<(f64, f64)> {
    analysis::discrete_norms(&errors, dt).map_err(to_py_err)
}

/// Names of the registered cases.
#[pyfunction]
fn case_names() -> Vec<&'static str> {
    manufactured::CASE_NAMES.to_vec()
}

/// Finite-difference residual audit of a registered case.
#[pyfunction]
#[pyo3(signature = (case, samples = 100, seed = 0))]
fn audit_case(py: Python<'_>, case: &str, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let case = manufactured::case_by_name(case).map_err(to_py_err)?;
    to_py_object(py, &manufactured::audit(&case, samples, seed))
}

/// Runs one experiment. `config` is TOML text in the CLI's format; `out_dir`
/// overrides where CSV/JSON files go. Returns the result as a dict.
#[pyfunction]
#[pyo3(signature = (experiment, config = None, out_dir = None))]
fn run_experiment(
    py: Python<'_>,
    experiment: &str,
    config: Option<&str>,
    out_dir: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let exp = Experiment::from_name(experiment).map_err(to_py_err)?;
    let mut cfg = match config {
        Some(text) => ExperimentConfig::from_toml(exp, text),
        None => Ok(ExperimentConfig::defaults(exp)),
    }
    .map_err(to_py_err)?;
    if let Some(dir) = out_dir {
        cfg.out_dir = dir;
    }
    cfg.validate().map_err(to_py_err)?;
    configure_execution(&cfg);
    let json = py
        .detach(|| -> ensemble_mhd::Result<serde_json::Value> {
            let value = match exp {
                Experiment::Converge => serde_json::to_value(harness::run_convergence(&cfg)?),
                Experiment::Efficiency => serde_json::to_value(harness::run_efficiency(&cfg)?),
                Experiment::Stability => serde_json::to_value(harness::run_stability(&cfg)?),
                Experiment::Run => serde_json::to_value(harness::run_custom(&cfg)?),
            };
            value.map_err(|e| Error::InvalidInput(format!("json: {e}")))
        })
        .map_err(to_py_err)?;
    to_py_object(py, &json)
}

#[pymodule]
fn ensemble_mhd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(convergence_rate, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_norms, m)?)?;
    m.add_function(wrap_pyfunction!(case_names, m)?)?;
    m.add_function(wrap_pyfunction!(audit_case, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
