//! Python bindings for `backstep-core`.
//!
//! Vectors cross the boundary as Python lists of floats; reports come back
//! as plain dicts.

use backstep_core::analysis::{self, ConfigOverrides, DesignGoal, DesignRequest, Preset};
use backstep_core::controller::{self, FeedbackGain};
use backstep_core::simulator::{self, Trajectory};
use backstep_core::{kernel, Error, Grid, SimulationConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(backstep, BackstepError, PyException);
create_exception!(backstep, InadmissibleError, BackstepError);
create_exception!(backstep, SolverError, BackstepError);

fn to_py(e: Error) -> PyErr {
    // an aborted run reports the class of its underlying cause
    let mut root = &e;
    while let Error::Aborted { cause, .. } = root {
        root = cause;
    }
    let msg = e.to_string();
    match root {
        Error::Inadmissible { .. } | Error::IllConditioned { .. } => InadmissibleError::new_err(msg),
        Error::Solver(_) | Error::NewtonNonconvergence { .. } | Error::Convergence { .. } => SolverError::new_err(msg),
        Error::InvalidParameter(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Resolution { .. } => {
            PyValueError::new_err(msg)
        }
        _ => BackstepError::new_err(msg),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| BackstepError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Truncated kernel table on a uniform grid.
#[pyclass(name = "Kernel", frozen)]
struct PyKernel {
    inner: kernel::Kernel,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (mu, nu = 1.0, length = 1.0, nx = 200, tol = kernel::DEFAULT_TOL))]
    fn new(mu: f64, nu: f64, length: f64, nx: usize, tol: f64) -> PyResult<Self> {
        let grid = Grid::new(length, nx).map_err(to_py)?;
        let inner = kernel::kernel_table(&grid, mu, nu, tol).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.grid().nodes().to_vec()
    }

    /// k(x_i, y_j) for j <= i.
    fn value(&self, i: usize, j: usize) -> PyResult<f64> {
        self.inner.value(i, j).map_err(to_py)
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.grid().len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    /// k(L, y_j) for every node.
    fn boundary_row(&self) -> Vec<f64> {
        self.inner.boundary_row().to_vec()
    }

    /// Max interior residual of the kernel PDE.
    fn pde_residual(&self) -> PyResult<f64> {
        kernel::kernel_pde_residual(&self.inner).map_err(to_py)
    }
}

/// Truncated backstepping transform for `modes` sine modes.
#[pyclass(name = "Transform", frozen)]
struct PyTransform {
    kernel: kernel::Kernel,
    set: backstep_core::TransformSet,
    gain: FeedbackGain,
}

#[pymethods]
impl PyTransform {
    #[new]
    #[pyo3(signature = (mu, modes, nu = 1.0, length = 1.0, nx = 200))]
    fn new(mu: f64, modes: usize, nu: f64, length: f64, nx: usize) -> PyResult<Self> {
        let (kernel, set) = backstep_core::TransformSet::from_parameters(mu, nu, length, nx, modes).map_err(to_py)?;
        let gain = FeedbackGain::new(&kernel, &set).map_err(to_py)?;
        Ok(Self { kernel, set, gain })
    }

    #[getter]
    fn modes(&self) -> usize {
        self.set.modes()
    }

    #[getter]
    fn kernel_order(&self) -> usize {
        self.kernel.order()
    }

    /// The values 1 + a_j; every one must be nonzero.
    #[getter]
    fn one_plus_a(&self) -> Vec<f64> {
        self.set.admissibility().iter().map(|a| 1.0 + a).collect()
    }

    #[getter]
    fn inverse_residual(&self) -> f64 {
        self.set.inverse_residual()
    }

    /// w = T u.
    fn forward(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.set.forward_transform(&u).map_err(to_py)
    }

    /// u = (I - Phi) w.
    fn inverse(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.set.inverse_transform(&w).map_err(to_py)
    }

    fn apply_phi(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.set.apply_phi(&u).map_err(to_py)
    }

    /// Boundary input g(u) computed from the precomputed gain vector.
    fn control(&self, u: Vec<f64>) -> PyResult<f64> {
        self.gain.apply(&u).map_err(to_py)
    }

    /// Boundary input computed directly from the transform.
    fn control_direct(&self, u: Vec<f64>) -> PyResult<f64> {
        controller::feedback_control(&u, &self.kernel, &self.set).map_err(to_py)
    }

    fn operator_norms<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let norms = self.set.operator_norms().map_err(to_py)?;
        json_to_py(py, &norms)
    }
}

/// Closed-form target decay rate gamma.
#[pyfunction]
#[pyo3(signature = (alpha, mu, modes, nu = 1.0, length = 1.0))]
fn gamma_rate(alpha: f64, mu: f64, modes: usize, nu: f64, length: f64) -> PyResult<f64> {
    Ok(controller::gamma_rate(nu, alpha, mu, modes, length).map_err(to_py)?.value)
}

/// Closed-form plant decay rate rho.
#[pyfunction]
#[pyo3(signature = (alpha, mu, modes, nu = 1.0, length = 1.0))]
fn rho_rate(alpha: f64, mu: f64, modes: usize, nu: f64, length: f64) -> PyResult<f64> {
    Ok(controller::rho_rate(nu, alpha, mu, modes, length).map_err(to_py)?.value)
}

/// Pick (mu, N) for a target rate, or the fewest modes when `rate` is None.
#[pyfunction]
#[pyo3(signature = (alpha, rate = None, nu = 1.0, length = 1.0, nx = 1000))]
fn design<'py>(
    py: Python<'py>,
    alpha: f64,
    rate: Option<f64>,
    nu: f64,
    length: f64,
    nx: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let goal = rate.map_or(DesignGoal::Minimal, DesignGoal::Rate);
    let req = DesignRequest { nx, ..DesignRequest::new(nu, alpha, length, goal) };
    let report = analysis::design(&req).map_err(to_py)?;
    json_to_py(py, &report)
}

fn trajectory_dict<'py>(py: Python<'py>, traj: &Trajectory, states: bool) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("times", &traj.times)?;
    d.set_item("controls", &traj.controls)?;
    d.set_item("l2_norms", &traj.l2_norms)?;
    d.set_item("h1_norms", &traj.h1_norms)?;
    d.set_item("newton_iters", &traj.newton_iters)?;
    if states {
        d.set_item("states", &traj.states)?;
    }
    Ok(d)
}

fn resolve_config(preset: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<SimulationConfig> {
    let base = match preset {
        Some(name) => Preset::parse(name).map_err(to_py)?.config(),
        None => SimulationConfig::default(),
    };
    let config = match overrides {
        Some(kw) => {
            let py = kw.py();
            let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
            let o: ConfigOverrides =
                serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("bad configuration: {e}")))?;
            o.apply(base)
        }
        None => base,
    };
    config.validate().map_err(to_py)?;
    Ok(config)
}

/// Run one simulation. Keyword arguments override the preset (or the
/// default configuration); the accepted names match the config file keys.
#[pyfunction]
#[pyo3(signature = (preset = None, states = false, **overrides))]
fn simulate<'py>(
    py: Python<'py>,
    preset: Option<&str>,
    states: bool,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = resolve_config(preset, overrides)?;
    let traj = py.detach(|| simulator::run_simulation(&config)).map_err(to_py)?;
    let d = trajectory_dict(py, &traj, states)?;
    d.set_item("config", json_to_py(py, &config)?)?;
    Ok(d)
}

/// Run a simulation and fit the exponential decay rate of the L2 norm.
#[pyfunction]
#[pyo3(signature = (preset, **overrides))]
fn experiment<'py>(py: Python<'py>, preset: &str, overrides: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let config = resolve_config(Some(preset), overrides)?;
    let result = py.detach(|| analysis::run_experiment(&config)).map_err(to_py)?;
    let d = trajectory_dict(py, &result.trajectory, false)?;
    d.set_item("config", json_to_py(py, &result.config)?)?;
    d.set_item("design", json_to_py(py, &result.report)?)?;
    d.set_item("fit", json_to_py(py, &result.fit)?)?;
    Ok(d)
}

#[pymodule]
fn backstep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BackstepError", m.py().get_type::<BackstepError>())?;
    m.add("InadmissibleError", m.py().get_type::<InadmissibleError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyTransform>()?;
    m.add_function(wrap_pyfunction!(gamma_rate, m)?)?;
    m.add_function(wrap_pyfunction!(rho_rate, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}
