//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use pisgd_core::ball::{self, BallSampler};
use pisgd_core::experiment::{run_experiment as run_experiment_core, BuiltObjective, ExperimentConfig, ObjectiveConfig};
use pisgd_core::nn::{self, LabeledSample, NetworkSpec};
use pisgd_core::optimizer::{self, PisgdConfig, Trace};
use pisgd_core::planner::{self, ProblemConstants, DEFAULT_C, DEFAULT_PHI};
use pisgd_core::stationarity::{self, DEFAULT_HULL_TOL};

fn err(e: pisgd_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Round-trips a serializable value through JSON into native Python objects.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let json = PyModule::import_bound(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn constants(l0: f64, q: f64, delta: f64, dim: usize, theta: f64) -> PyResult<ProblemConstants> {
    ProblemConstants::new(l0, q, delta, dim)
        .and_then(|c| c.with_theta(theta))
        .map_err(err)
}

fn builtin(objective: &str, dim: usize) -> PyResult<BuiltObjective> {
    let cfg = match objective {
        "abs" => ObjectiveConfig::Abs { x1: 1.0 },
        "max" => ObjectiveConfig::Max { dim, x1: None },
        other => return Err(PyValueError::new_err(format!("unknown objective `{other}` (abs or max)"))),
    };
    BuiltObjective::build(&cfg).map_err(err)
}

/// `E‖z‖ = σd/(d+1)` for `z` uniform on the ball of radius `σ` in `d` dimensions.
#[pyfunction]
fn expected_norm(dim: usize, radius: f64) -> f64 {
    ball::expected_norm(dim, radius)
}

#[pyfunction]
fn ball_density_constant(dim: usize, radius: f64) -> f64 {
    ball::ball_density_constant(dim, radius)
}

#[pyfunction]
fn double_factorial_ratio(dim: usize) -> f64 {
    ball::double_factorial_ratio(dim)
}

/// `count` points uniform on the ball, as a list of lists.
#[pyfunction]
#[pyo3(signature = (dim, radius, seed, count=1))]
fn sample_ball(dim: usize, radius: f64, seed: u64, count: usize) -> PyResult<Vec<Vec<f64>>> {
    let mut s = BallSampler::new(dim, radius, seed).map_err(err)?;
    Ok((0..count).map(|_| s.sample()).collect())
}

#[pyfunction]
#[pyo3(signature = (k_total, beta, l0, q, delta, dim, theta=1.0))]
fn theorem_schedule(
    py: Python<'_>,
    k_total: usize,
    beta: f64,
    l0: f64,
    q: f64,
    delta: f64,
    dim: usize,
    theta: f64,
) -> PyResult<PyObject> {
    let c = constants(l0, q, delta, dim, theta)?;
    to_py(py, &planner::theorem_schedule(k_total, beta, &c).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (k_total, beta, l0, q, delta, dim, theta=1.0))]
fn bound_rhs(k_total: usize, beta: f64, l0: f64, q: f64, delta: f64, dim: usize, theta: f64) -> PyResult<f64> {
    let c = constants(l0, q, delta, dim, theta)?;
    planner::bound_rhs(k_total, beta, &c).map_err(err)
}

#[pyfunction]
fn optimal_plan(py: Python<'_>, eps1: f64, eps2: f64, l0: f64, q: f64, delta: f64, dim: usize) -> PyResult<PyObject> {
    let c = constants(l0, q, delta, dim, 1.0)?;
    let plan = planner::optimal_plan(eps1, eps2, &c).map_err(err)?;
    let schedule = plan.schedule(&c).map_err(err)?;
    let calls = plan.gradient_calls() as u64;
    to_py(
        py,
        &serde_json::json!({
            "k_total": plan.k_total,
            "beta": plan.beta,
            "batch": schedule.batch,
            "radius": schedule.radius,
            "step": schedule.step,
            "gradient_calls": calls,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (eps1, eps2, gamma, l0, q, delta, dim, c=DEFAULT_C, phi=DEFAULT_PHI))]
#[allow(clippy::too_many_arguments)]
fn high_prob_plan(
    py: Python<'_>,
    eps1: f64,
    eps2: f64,
    gamma: f64,
    l0: f64,
    q: f64,
    delta: f64,
    dim: usize,
    c: f64,
    phi: f64,
) -> PyResult<PyObject> {
    let consts = constants(l0, q, delta, dim, 1.0)?;
    to_py(py, &planner::high_prob_plan(eps1, eps2, gamma, c, phi, &consts).map_err(err)?)
}

/// One PISGD (or SGD with `perturb=False`) run on a built-in objective (`abs` or `max`).
#[pyfunction]
#[pyo3(signature = (objective, x1, k_total, batch, step, radius, seed, perturb=true, stride=1))]
#[allow(clippy::too_many_arguments)]
fn run_builtin(
    py: Python<'_>,
    objective: &str,
    x1: Vec<f64>,
    k_total: usize,
    batch: usize,
    step: f64,
    radius: f64,
    seed: u64,
    perturb: bool,
    stride: usize,
) -> PyResult<PyObject> {
    let built = builtin(objective, x1.len())?;
    let cfg = PisgdConfig::new(k_total, batch, step, radius, seed)
        .map_err(err)?
        .with_trace(Trace::UntilStop { stride });
    let rec = py
        .allow_threads(|| {
            if perturb {
                optimizer::pisgd_run(built.as_dyn(), &x1, &cfg)
            } else {
                optimizer::sgd_run(built.as_dyn(), &x1, &cfg)
            }
        })
        .map_err(err)?;
    to_py(py, &rec)
}

/// Averaged gradient over `samples` ball perturbations at `x` for a built-in objective.
#[pyfunction]
fn averaged_gradient(py: Python<'_>, objective: &str, x: Vec<f64>, radius: f64, samples: usize, seed: u64) -> PyResult<PyObject> {
    let built = builtin(objective, x.len())?;
    let est = stationarity::averaged_gradient(built.as_dyn(), &x, radius, samples, seed).map_err(err)?;
    to_py(py, &est)
}

#[pyfunction]
#[pyo3(signature = (vectors, tol=DEFAULT_HULL_TOL))]
fn min_norm_point(py: Python<'_>, vectors: Vec<Vec<f64>>, tol: f64) -> PyResult<PyObject> {
    to_py(py, &stationarity::min_norm_point(&vectors, tol).map_err(err)?)
}

/// Runs a TOML experiment and returns its summary.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_toml: &str) -> PyResult<PyObject> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(err)?;
    let out = py.allow_threads(|| run_experiment_core(&cfg)).map_err(err)?;
    to_py(py, &out.summary)
}

/// The one-hidden-layer classifier on flat parameter vectors.
#[pyclass(name = "Network", module = "pisgd")]
struct PyNetwork {
    spec: NetworkSpec,
}

impl PyNetwork {
    fn sample(&self, features: Vec<f64>, class: usize) -> PyResult<LabeledSample> {
        if features.len() != self.spec.inputs() {
            return Err(err(pisgd_core::Error::DimensionMismatch {
                expected: self.spec.inputs(),
                got: features.len(),
            }));
        }
        LabeledSample::new(features, class, self.spec.classes()).map_err(err)
    }

    fn check(&self, w: &[f64]) -> PyResult<()> {
        if w.len() != self.spec.num_params() {
            return Err(err(pisgd_core::Error::DimensionMismatch {
                expected: self.spec.num_params(),
                got: w.len(),
            }));
        }
        Ok(())
    }
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (layers, relu_cap=1.0))]
    fn new(layers: [usize; 3], relu_cap: f64) -> PyResult<Self> {
        Ok(Self {
            spec: NetworkSpec::new(layers, relu_cap).map_err(err)?,
        })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        self.spec.init_params(seed)
    }

    /// Cross-entropy loss of one sample.
    fn loss(&self, w: Vec<f64>, features: Vec<f64>, class: usize) -> PyResult<f64> {
        self.check(&w)?;
        let s = self.sample(features, class)?;
        Ok(nn::forward(&self.spec, &w, &s).0)
    }

    /// Class probabilities of one sample.
    fn predict(&self, w: Vec<f64>, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&w)?;
        let s = self.sample(features, 0)?;
        Ok(nn::forward(&self.spec, &w, &s).1.a3)
    }

    /// Backpropagated gradient at `w + perturbation`.
    #[pyo3(signature = (w, features, class, perturbation=None))]
    fn gradient(&self, w: Vec<f64>, features: Vec<f64>, class: usize, perturbation: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let s = self.sample(features, class)?;
        let z = perturbation.unwrap_or_else(|| vec![0.0; w.len()]);
        nn::backprop_grad(&self.spec, &w, &z, &s).map_err(err)
    }

    fn sample_lipschitz(&self, features: Vec<f64>) -> PyResult<f64> {
        self.sample(features.clone(), 0)?;
        Ok(nn::sample_lipschitz(&self.spec, &features))
    }

    fn __repr__(&self) -> String {
        let [a, b, c] = self.spec.layer_sizes;
        format!("Network(layers=[{a}, {b}, {c}], relu_cap={})", self.spec.relu_cap)
    }
}

#[pymodule]
fn pisgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(expected_norm, m)?)?;
    m.add_function(wrap_pyfunction!(ball_density_constant, m)?)?;
    m.add_function(wrap_pyfunction!(double_factorial_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sample_ball, m)?)?;
    m.add_function(wrap_pyfunction!(theorem_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(bound_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_plan, m)?)?;
    m.add_function(wrap_pyfunction!(high_prob_plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_builtin, m)?)?;
    m.add_function(wrap_pyfunction!(averaged_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(min_norm_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyNetwork>()?;
    Ok(())
}
