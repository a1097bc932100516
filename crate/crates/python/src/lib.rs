//! Python bindings. Matrices cross the boundary as lists of rows and vectors
//! as lists of floats.

use std::collections::BTreeMap;

use magging::aggregate::{self, AggregationResult, LeaveOut, StackConstraint, StackingConfig};
use magging::estimators::{self, EstimatorKind, EstimatorSpec};
use magging::groups::{consecutive_blocks, known_groups, random_subsample, Grouping, Strategy};
use magging::linalg::{matrix_from_rows, matrix_to_rows, CovarianceMatrix};
use magging::maximin::{self, SupportSpec};
use magging::sim::{self, MixtureSimConfig, PeriodicSimConfig, Scenario, SimOutput};
use magging::simplex_qp::{self, QpProblem};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: magging::Error) -> PyErr {
    if e.is_solver_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(rows).map_err(to_py)
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn sigma_or_identity(sigma: Option<Vec<Vec<f64>>>, p: usize) -> PyResult<CovarianceMatrix> {
    match sigma {
        Some(rows) => CovarianceMatrix::new(matrix(&rows)?).map_err(to_py),
        None => Ok(CovarianceMatrix::identity(p)),
    }
}

fn support(points: Vec<Vec<f64>>, sigma: Option<Vec<Vec<f64>>>) -> PyResult<SupportSpec> {
    let p = points.first().map_or(0, Vec::len);
    let sigma = sigma_or_identity(sigma, p)?;
    SupportSpec::new(points.into_iter().map(vector).collect(), sigma).map_err(to_py)
}

fn estimator_spec(estimator: &str, lam: Option<f64>, intercept: bool, standardize: bool) -> PyResult<EstimatorSpec> {
    let kind = match (estimator, lam) {
        ("ols", None) => EstimatorKind::Ols,
        ("ridge", Some(lambda)) => EstimatorKind::Ridge { lambda },
        ("lasso", lambda) => EstimatorKind::Lasso { lambda },
        _ => return Err(PyValueError::new_err(format!("unknown estimator '{estimator}' (lam={lam:?})"))),
    };
    let spec = EstimatorSpec { kind, intercept, standardize, ..Default::default() };
    spec.validate().map_err(to_py)?;
    Ok(spec)
}

/// Result of one aggregation scheme.
#[pyclass(name = "Aggregate", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyAggregate(AggregationResult);

#[pymethods]
impl PyAggregate {
    #[getter]
    fn scheme(&self) -> String {
        self.0.scheme.to_string()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta.as_slice().to_vec()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.0.intercept
    }

    #[getter]
    fn diagnostics(&self) -> BTreeMap<String, f64> {
        self.0.diagnostics.clone()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.0.predict(&matrix(&x)?).map_err(to_py)?.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Aggregate(scheme='{}', theta={:?})", self.0.scheme, self.0.theta.as_slice())
    }
}

/// Per-group fits over a shared design.
#[pyclass(name = "Ensemble", frozen, skip_from_py_object)]
pub struct PyEnsemble {
    inner: estimators::Ensemble,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

#[pymethods]
impl PyEnsemble {
    /// Fits one estimator per group. `groups` is a list of index lists;
    /// see `known_groups`, `consecutive_blocks` and `random_subsample`.
    #[staticmethod]
    #[pyo3(signature = (x, y, groups, estimator = "lasso", lam = None, intercept = false, standardize = false))]
    fn fit(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        groups: Vec<Vec<usize>>,
        estimator: &str,
        lam: Option<f64>,
        intercept: bool,
        standardize: bool,
    ) -> PyResult<Self> {
        let x = matrix(&x)?;
        let y = vector(y);
        let grouping = grouping_from(x.nrows(), groups)?;
        let spec = estimator_spec(estimator, lam, intercept, standardize)?;
        let inner = py.detach(|| estimators::fit_ensemble(&x, &y, &grouping, &spec)).map_err(to_py)?;
        Ok(PyEnsemble { inner, x, y })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn thetas(&self) -> Vec<Vec<f64>> {
        self.inner.thetas.iter().map(|t| t.as_slice().to_vec()).collect()
    }

    #[getter]
    fn intercepts(&self) -> Vec<f64> {
        self.inner.intercepts.clone()
    }

    #[pyo3(signature = (tol = simplex_qp::DEFAULT_TOL))]
    fn magging(&self, py: Python<'_>, tol: f64) -> PyResult<PyAggregate> {
        py.detach(|| aggregate::magging_with_tol(&self.inner, tol)).map(PyAggregate).map_err(to_py)
    }

    fn mean(&self) -> PyResult<PyAggregate> {
        aggregate::mean_aggregate(&self.inner).map(PyAggregate).map_err(to_py)
    }

    /// `constraint` is `convex`, `sign` or `ridge` (with `radius`);
    /// `leaveout` is `loo` or `oob`.
    #[pyo3(signature = (constraint = "convex", leaveout = "loo", radius = None))]
    fn stacked(&self, py: Python<'_>, constraint: &str, leaveout: &str, radius: Option<f64>) -> PyResult<PyAggregate> {
        let constraint = match (constraint, radius) {
            ("convex", None) => StackConstraint::Convex,
            ("sign", None) => StackConstraint::Sign,
            ("ridge", Some(radius)) => StackConstraint::Ridge { radius },
            _ => return Err(PyValueError::new_err(format!("unknown stacking constraint '{constraint}' (radius={radius:?})"))),
        };
        let leaveout = match leaveout {
            "loo" => LeaveOut::LeaveOneOut,
            "oob" => LeaveOut::OutOfBag,
            other => return Err(PyValueError::new_err(format!("unknown leave-out scheme '{other}'"))),
        };
        let cfg = StackingConfig { constraint, leaveout };
        cfg.validate().map_err(to_py)?;
        py.detach(|| aggregate::stacked_aggregate(&self.inner, &self.x, &self.y, &cfg)).map(PyAggregate).map_err(to_py)
    }

    /// A single fit on all rows with the ensemble's estimator.
    fn pooled(&self) -> PyResult<PyAggregate> {
        let fit = estimators::fit_pooled(&self.x, &self.y, &self.inner.spec).map_err(to_py)?;
        Ok(PyAggregate(aggregate::pooled_result(&fit)))
    }
}

fn grouping_from(n: usize, groups: Vec<Vec<usize>>) -> PyResult<Grouping> {
    let grouping = Grouping { strategy: Strategy::Known, n, groups, seed: None };
    grouping.validate().map_err(to_py)?;
    Ok(grouping)
}

#[pyfunction(name = "known_groups")]
fn py_known_groups(labels: Vec<i64>) -> PyResult<Vec<Vec<usize>>> {
    Ok(known_groups(&labels).map_err(to_py)?.groups)
}

#[pyfunction(name = "consecutive_blocks")]
fn py_consecutive_blocks(n: usize, num_groups: usize) -> PyResult<Vec<Vec<usize>>> {
    Ok(consecutive_blocks(n, num_groups).map_err(to_py)?.groups)
}

#[pyfunction(name = "random_subsample")]
fn py_random_subsample(n: usize, num_groups: usize, m: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(random_subsample(n, num_groups, m, seed).map_err(to_py)?.groups)
}

/// Minimizes `wᵀHw + 2cᵀw` over the probability simplex.
#[pyfunction]
#[pyo3(signature = (h, linear = None, tol = simplex_qp::DEFAULT_TOL))]
fn solve_simplex_qp<'py>(py: Python<'py>, h: Vec<Vec<f64>>, linear: Option<Vec<f64>>, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let prob = QpProblem::new(matrix(&h)?, linear.map(vector)).map_err(to_py)?;
    let sol = simplex_qp::solve_simplex_qp(&prob, tol).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("w", sol.w)?;
    d.set_item("objective", sol.objective)?;
    d.set_item("gap", sol.gap)?;
    d.set_item("iterations", sol.iterations)?;
    Ok(d)
}

/// Minimum-Σ-norm point of the convex hull of `points`.
#[pyfunction]
#[pyo3(signature = (points, sigma = None, tol = 1e-12))]
fn maximin_point(points: Vec<Vec<f64>>, sigma: Option<Vec<Vec<f64>>>, tol: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = maximin::maximin_point(&support(points, sigma)?, tol).map_err(to_py)?;
    Ok((m.point.as_slice().to_vec(), m.weights))
}

/// Brute-force grid minimizer of the worst-case loss (p ≤ 3).
#[pyfunction]
#[pyo3(signature = (points, sigma = None, grid_step = 0.01, radius = None))]
fn maximin_by_definition(points: Vec<Vec<f64>>, sigma: Option<Vec<Vec<f64>>>, grid_step: f64, radius: Option<f64>) -> PyResult<Vec<f64>> {
    let spec = support(points, sigma)?;
    let radius = radius.unwrap_or_else(|| maximin::default_grid_radius(&spec));
    Ok(maximin::maximin_by_definition(&spec, grid_step, radius).map_err(to_py)?.point.as_slice().to_vec())
}

/// Simulated dataset with its ground truth.
#[pyclass(name = "Simulation", frozen, skip_from_py_object)]
pub struct PySimulation(SimOutput);

#[pymethods]
impl PySimulation {
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0.x)
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.0.y.as_slice().to_vec()
    }

    #[getter]
    fn groups(&self) -> Vec<Vec<usize>> {
        self.0.grouping.groups.clone()
    }

    #[getter]
    fn group_b(&self) -> Vec<Vec<f64>> {
        self.0.group_b.iter().map(|b| b.as_slice().to_vec()).collect()
    }

    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.0.sigma.matrix())
    }

    #[getter]
    fn majority_b(&self) -> Option<Vec<f64>> {
        self.0.majority_b.as_ref().map(|b| b.as_slice().to_vec())
    }

    #[getter]
    fn common_signal(&self) -> Option<Vec<f64>> {
        self.0.common_signal.as_ref().map(|s| s.as_slice().to_vec())
    }

    /// Error-bound certificate for a clusterwise simulation, as a dict.
    #[pyo3(signature = (estimator = "ols", lam = None, tol = 1e-12))]
    fn certify<'py>(&self, py: Python<'py>, estimator: &str, lam: Option<f64>, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let spec = estimator_spec(estimator, lam, false, false)?;
        let c = py.detach(|| magging::experiments::certify_simulation(&self.0, &spec, tol)).map_err(to_py)?;
        let d = PyDict::new(py);
        for (k, v) in [("eta1", c.eta1), ("eta2", c.eta2), ("kappa", c.kappa), ("bound", c.bound), ("lhs", c.lhs), ("slack", c.slack)] {
            d.set_item(k, v)?;
        }
        d.set_item("holds", c.holds)?;
        d.set_item("m", c.m)?;
        Ok(d)
    }
}

/// `scenario` is `clusterwise`, `smooth_drift` or `outlier_contamination`.
#[pyfunction]
#[pyo3(signature = (scenario, n = 1000, p = 5, num_groups = 50, seed = 0, noise_sd = 1.0, contamination_fraction = 0.0, group_size = None, shared_design = false))]
#[allow(clippy::too_many_arguments)]
fn simulate_mixture(
    scenario: &str,
    n: usize,
    p: usize,
    num_groups: usize,
    seed: u64,
    noise_sd: f64,
    contamination_fraction: f64,
    group_size: Option<usize>,
    shared_design: bool,
) -> PyResult<PySimulation> {
    let scenario: Scenario = scenario.parse().map_err(to_py)?;
    let cfg = MixtureSimConfig { n, p, num_groups, scenario, noise_sd, contamination_fraction, group_size, shared_design, seed, ..Default::default() };
    sim::simulate_mixture(&cfg).map(PySimulation).map_err(to_py)
}

/// Periodic recordings sharing a common component.
#[pyfunction]
#[pyo3(signature = (seed = 0, num_groups = 50, n_per_group = 300, noise_sd = 1.0))]
fn simulate_periodic(seed: u64, num_groups: usize, n_per_group: usize, noise_sd: f64) -> PyResult<PySimulation> {
    let cfg = PeriodicSimConfig { seed, num_groups, n_per_group, noise_sd, ..Default::default() };
    sim::simulate_periodic(&cfg).map(PySimulation).map_err(to_py)
}

#[pymodule]
fn pymagging(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyAggregate>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(py_known_groups, m)?)?;
    m.add_function(wrap_pyfunction!(py_consecutive_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(py_random_subsample, m)?)?;
    m.add_function(wrap_pyfunction!(solve_simplex_qp, m)?)?;
    m.add_function(wrap_pyfunction!(maximin_point, m)?)?;
    m.add_function(wrap_pyfunction!(maximin_by_definition, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_periodic, m)?)?;
    m.add("RNG_ALGORITHM", magging::groups::RNG_ALGORITHM)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names() {
        assert_eq!(estimator_spec("ols", None, false, false).unwrap().kind, EstimatorKind::Ols);
        assert_eq!(estimator_spec("lasso", None, false, false).unwrap().kind, EstimatorKind::Lasso { lambda: None });
        assert_eq!(estimator_spec("ridge", Some(0.5), true, false).unwrap().kind, EstimatorKind::Ridge { lambda: 0.5 });
        assert!(grouping_from(3, vec![vec![0, 3]]).is_err());
        assert!(grouping_from(3, vec![vec![0, 1], vec![1, 2]]).is_ok());
    }
}
