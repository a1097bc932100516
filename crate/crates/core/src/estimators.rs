//! Per-group and pooled regression estimators.
//!
//! Each ensemble member is an ordinary least squares, ridge or Lasso fit on
//! the rows of one group. The ensemble also stores the fitted values of
//! every member over the full design, which is all that magging needs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::Grouping;
use crate::linalg::{gram, validate_design, validate_response};

/// Largest accepted condition number of `XᵀX` for OLS.
pub const OLS_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    Ols,
    Ridge { lambda: f64 },
    /// `lambda: None` selects `σ̂·sqrt(log p / n_g)` per group.
    Lasso { lambda: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub intercept: bool,
    pub standardize: bool,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Lasso { lambda: None },
            tolerance: 1e-8,
            max_iterations: 100_000,
            intercept: false,
            standardize: false,
        }
    }
}

impl EstimatorSpec {
    pub fn ols() -> Self {
        EstimatorSpec { kind: EstimatorKind::Ols, ..Default::default() }
    }

    pub fn ridge(lambda: f64) -> Self {
        EstimatorSpec { kind: EstimatorKind::Ridge { lambda }, ..Default::default() }
    }

    pub fn lasso(lambda: f64) -> Self {
        EstimatorSpec { kind: EstimatorKind::Lasso { lambda: Some(lambda) }, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = match self.kind {
            EstimatorKind::Ols | EstimatorKind::Lasso { lambda: None } => 0.0,
            EstimatorKind::Ridge { lambda } | EstimatorKind::Lasso { lambda: Some(lambda) } => lambda,
        };
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("penalty must be finite and >= 0, got {lambda}")));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of fitting one estimator to one block of data.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub theta: DVector<f64>,
    pub intercept: f64,
    /// Penalty actually used (Lasso and ridge).
    pub lambda: Option<f64>,
    /// Coordinate-descent sweeps; zero for closed-form fits.
    pub iterations: usize,
    /// False when Lasso hit `max_iterations`; `theta` is then the last iterate.
    pub converged: bool,
}

/// Default Lasso penalty `σ̂·sqrt(log p / n)`, `σ̂` the sample standard
/// deviation of the response.
pub fn default_lasso_lambda(y: &DVector<f64>, p: usize) -> f64 {
    let n = y.len();
    if n < 2 || p < 2 {
        return 0.0;
    }
    let mean = y.mean();
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    sd * ((p as f64).ln() / n as f64).sqrt()
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Fits one estimator on `(x, y)`.
///
/// * OLS: `argmin ‖y − Xθ‖²`, refused when `cond(XᵀX) > 1e12`.
/// * Ridge: `argmin ‖y − Xθ‖² + λ·n·‖θ‖²`.
/// * Lasso: `argmin (2n)⁻¹‖y − Xθ‖² + λ‖θ‖₁` by cyclic coordinate descent.
pub fn fit_group(x: &DMatrix<f64>, y: &DVector<f64>, spec: &EstimatorSpec) -> Result<GroupFit> {
    validate_design(x)?;
    validate_response(x, y)?;
    spec.validate()?;

    let prep = Preprocessed::new(x, y, spec.intercept, spec.standardize);
    let (theta_std, lambda, iterations, converged) = match spec.kind {
        EstimatorKind::Ols => (ols(&prep.x, &prep.y)?, None, 0, true),
        EstimatorKind::Ridge { lambda } => (ridge(&prep.x, &prep.y, lambda)?, Some(lambda), 0, true),
        EstimatorKind::Lasso { lambda } => {
            let lambda = lambda.unwrap_or_else(|| default_lasso_lambda(y, x.ncols()));
            let (theta, iterations, converged) =
                lasso_cd(&prep.x, &prep.y, lambda, spec.tolerance, spec.max_iterations);
            (theta, Some(lambda), iterations, converged)
        }
    };
    let (theta, intercept) = prep.unscale(theta_std);
    Ok(GroupFit { theta, intercept, lambda, iterations, converged })
}

/// The pooled fit on all rows.
pub fn fit_pooled(x: &DMatrix<f64>, y: &DVector<f64>, spec: &EstimatorSpec) -> Result<GroupFit> {
    fit_group(x, y, spec)
}

/// Centering and scaling applied before fitting, undone afterwards.
struct Preprocessed {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: Option<DVector<f64>>,
    y_mean: f64,
    scale: Option<DVector<f64>>,
}

impl Preprocessed {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool, standardize: bool) -> Self {
        let mut xs = x.clone();
        let mut ys = y.clone();
        let mut x_mean = None;
        let mut y_mean = 0.0;
        if intercept {
            let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
            for (j, mut col) in xs.column_iter_mut().enumerate() {
                col.add_scalar_mut(-means[j]);
            }
            y_mean = y.mean();
            ys.add_scalar_mut(-y_mean);
            x_mean = Some(means);
        }
        let mut scale = None;
        if standardize {
            let n = xs.nrows() as f64;
            let s = DVector::from_iterator(
                xs.ncols(),
                xs.column_iter().map(|c| {
                    let rms = (c.norm_squared() / n).sqrt();
                    if rms > 0.0 { rms } else { 1.0 }
                }),
            );
            for (j, mut col) in xs.column_iter_mut().enumerate() {
                col /= s[j];
            }
            scale = Some(s);
        }
        Preprocessed { x: xs, y: ys, x_mean, y_mean, scale }
    }

    fn unscale(&self, mut theta: DVector<f64>) -> (DVector<f64>, f64) {
        if let Some(s) = &self.scale {
            theta.component_div_assign(s);
        }
        let intercept = match &self.x_mean {
            Some(m) => self.y_mean - m.dot(&theta),
            None => 0.0,
        };
        (theta, intercept)
    }
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let g = gram(x, false).into_inner();
    let eig = g.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= OLS_CONDITION_LIMIT) {
        return Err(Error::Singular { condition, limit: OLS_CONDITION_LIMIT });
    }
    solve_spd(g, x.tr_mul(y), condition)
}

fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let mut g = gram(x, false).into_inner();
    let shift = lambda * x.nrows() as f64;
    for j in 0..g.ncols() {
        g[(j, j)] += shift;
    }
    solve_spd(g, x.tr_mul(y), f64::INFINITY)
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, condition: f64) -> Result<DVector<f64>> {
    match a.cholesky() {
        Some(c) => Ok(c.solve(&b)),
        None => Err(Error::Singular { condition, limit: OLS_CONDITION_LIMIT }),
    }
}

/// Cyclic coordinate descent for `(2n)⁻¹‖y − Xθ‖² + λ‖θ‖₁`, starting at zero.
/// Stops once a full sweep changes no coefficient by `tol` or more.
fn lasso_cd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iterations: usize,
) -> (DVector<f64>, usize, bool) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared() / n).collect();
    let mut theta: DVector<f64> = DVector::zeros(p);
    let mut resid = y.clone();
    for sweep in 1..=max_iterations {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let rho = col.dot(&resid) / n + col_sq[j] * theta[j];
            let updated = soft_threshold(rho, lambda) / col_sq[j];
            let delta = updated - theta[j];
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                theta[j] = updated;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            return (theta, sweep, true);
        }
    }
    (theta, max_iterations, false)
}

/// Diagnostics kept for every ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub size: usize,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Coefficient estimates of every group together with their fitted values
/// on a common reference design.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub thetas: Vec<DVector<f64>>,
    pub intercepts: Vec<f64>,
    /// `fitted[g] = X θ̂_g (+ intercept)` over all reference rows.
    pub fitted: Vec<DVector<f64>>,
    pub grouping: Grouping,
    pub spec: EstimatorSpec,
    pub members: Vec<MemberInfo>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas.first().map_or(0, DVector::len)
    }

    /// Builds an ensemble from precomputed coefficients, with fitted values
    /// over `x`.
    pub fn from_thetas(x: &DMatrix<f64>, thetas: Vec<DVector<f64>>, grouping: Grouping, spec: EstimatorSpec) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidInput("ensemble needs at least one member".into()));
        }
        if let Some(t) = thetas.iter().find(|t| t.len() != x.ncols()) {
            return Err(Error::Dimension(format!(
                "coefficient vector of length {} against design with {} columns",
                t.len(),
                x.ncols()
            )));
        }
        let fitted = thetas.iter().map(|t| x * t).collect();
        let members = (0..thetas.len())
            .map(|g| MemberInfo {
                size: grouping.groups.get(g).map_or(0, Vec::len),
                lambda: None,
                iterations: 0,
                converged: true,
            })
            .collect();
        Ok(Ensemble { intercepts: vec![0.0; thetas.len()], thetas, fitted, grouping, spec, members })
    }

    /// Recomputes the fitted values over a different reference design.
    pub fn with_reference_design(&self, x_ref: &DMatrix<f64>) -> Result<Self> {
        if x_ref.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "reference design has {} columns, ensemble has dimension {}",
                x_ref.ncols(),
                self.dim()
            )));
        }
        let mut out = self.clone();
        out.fitted = self
            .thetas
            .iter()
            .zip(&self.intercepts)
            .map(|(t, &b)| (x_ref * t).add_scalar(b))
            .collect();
        Ok(out)
    }
}

/// Fits one estimator per group and evaluates every member on all rows of
/// `x`. Groups are fitted in parallel; the output is identical to a
/// sequential run.
pub fn fit_ensemble(x: &DMatrix<f64>, y: &DVector<f64>, grouping: &Grouping, spec: &EstimatorSpec) -> Result<Ensemble> {
    validate_design(x)?;
    validate_response(x, y)?;
    grouping.validate()?;
    if grouping.n != x.nrows() {
        return Err(Error::Dimension(format!(
            "grouping covers n={} samples, design has {} rows",
            grouping.n,
            x.nrows()
        )));
    }
    let fits: Vec<GroupFit> = grouping
        .groups
        .par_iter()
        .enumerate()
        .map(|(g, idx)| {
            let xg = x.select_rows(idx);
            let yg = y.select_rows(idx);
            fit_group(&xg, &yg, spec).map_err(|e| Error::Group { group: g, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let members = fits
        .iter()
        .zip(&grouping.groups)
        .map(|(f, idx)| MemberInfo {
            size: idx.len(),
            lambda: f.lambda,
            iterations: f.iterations,
            converged: f.converged,
        })
        .collect();
    let fitted = fits.iter().map(|f| (x * &f.theta).add_scalar(f.intercept)).collect();
    let (thetas, intercepts) = fits.into_iter().map(|f| (f.theta, f.intercept)).unzip();
    Ok(Ensemble {
        thetas,
        intercepts,
        fitted,
        grouping: grouping.clone(),
        spec: *spec,
        members,
    })
}
