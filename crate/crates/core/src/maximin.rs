//! Population-level maximin effects.
//!
//! For a finite support `{b_1, …, b_k}` of the coefficient distribution and
//! predictor covariance `Σ`, the maximin parameter maximizes the worst-case
//! explained variance `V_{β,b} = 2βᵀΣb − βᵀΣβ`. It coincides with the
//! point of the support's convex hull that is closest to the origin in the
//! Σ-norm, which is what [`maximin_point`] computes. [`maximin_by_definition`]
//! is a brute-force grid search over the original max–min problem, kept as
//! an independent check for small dimensions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregationResult;
use crate::error::{Error, Result};
use crate::estimators::Ensemble;
use crate::linalg::{gram, l1_norm, quad_form, sigma_norm_sq, weighted_sum, CovarianceMatrix};
use crate::simplex_qp::{solve_simplex_qp, QpProblem};

/// Support points of the coefficient distribution with the predictor
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSpec {
    points: Vec<DVector<f64>>,
    sigma: CovarianceMatrix,
}

impl SupportSpec {
    pub fn new(points: Vec<DVector<f64>>, sigma: CovarianceMatrix) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("support needs at least one point".into()));
        }
        let p = sigma.dim();
        if let Some(b) = points.iter().find(|b| b.len() != p) {
            return Err(Error::Dimension(format!("support point of length {} with {p}x{p} covariance", b.len())));
        }
        if points.iter().flat_map(|b| b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("support point has non-finite entries".into()));
        }
        Ok(SupportSpec { points, sigma })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn sigma(&self) -> &CovarianceMatrix {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// A copy with one more support point.
    pub fn with_point(&self, b: DVector<f64>) -> Result<Self> {
        let mut points = self.points.clone();
        points.push(b);
        SupportSpec::new(points, self.sigma.clone())
    }
}

/// `V_{β,b} = 2βᵀΣb − βᵀΣβ`.
pub fn explained_variance(beta: &DVector<f64>, b: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let p = sigma.nrows();
    if beta.len() != p || b.len() != p || sigma.ncols() != p {
        return Err(Error::Dimension(format!(
            "β has length {}, b has length {}, Σ is {}x{}",
            beta.len(),
            b.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let sigma_beta = sigma * beta;
    Ok(2.0 * sigma_beta.dot(b) - sigma_beta.dot(beta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximinPoint {
    pub point: DVector<f64>,
    /// Convex weights over the support points.
    pub weights: Vec<f64>,
    /// `γᵀΣγ` at the returned point.
    pub sigma_norm_sq: f64,
    pub gap: f64,
}

impl MaximinPoint {
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "maximin_point": self.point.as_slice(),
            "weights": self.weights,
            "sigma_norm_sq": self.sigma_norm_sq,
            "sigma_norm": self.sigma_norm_sq.sqrt(),
            "gap": self.gap,
        })
    }
}

/// The minimum-Σ-norm point of the convex hull of the support.
///
/// Solves `min_{w ∈ simplex} wᵀMw` with `M_{gh} = b_gᵀΣb_h` and returns
/// `Σ_g w_g b_g`.
pub fn maximin_point(spec: &SupportSpec, tol: f64) -> Result<MaximinPoint> {
    let b = DMatrix::from_columns(&spec.points);
    let mut m = b.tr_mul(&(spec.sigma.matrix() * &b));
    let k = m.nrows();
    for j in 0..k {
        for i in (j + 1)..k {
            m[(i, j)] = m[(j, i)];
        }
    }
    let sol = solve_simplex_qp(&QpProblem::quadratic(m)?, tol)?;
    let point = weighted_sum(&spec.points, &sol.w);
    let norm = sigma_norm_sq(&point, spec.sigma.matrix())?;
    Ok(MaximinPoint { point, weights: sol.w, sigma_norm_sq: norm, gap: sol.gap })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOracle {
    pub point: DVector<f64>,
    /// `max_b −V_{β,b}` at the grid minimizer.
    pub value: f64,
    pub evaluated: usize,
}

/// Largest dimension accepted by the grid oracle.
pub const GRID_MAX_DIM: usize = 3;

/// Default grid radius: 1.5 times the largest absolute support coordinate.
pub fn default_grid_radius(spec: &SupportSpec) -> f64 {
    1.5 * spec.points.iter().map(|b| b.amax()).fold(0.0, f64::max)
}

/// Brute-force minimizer of `max_b −V_{β,b}` over the grid
/// `(hℤ)^p ∩ [−r, r]^p`, which contains the origin. Ties go to the
/// lexicographically smallest grid point.
pub fn maximin_by_definition(spec: &SupportSpec, grid_step: f64, radius: f64) -> Result<GridOracle> {
    let p = spec.dim();
    if p > GRID_MAX_DIM {
        return Err(Error::InvalidInput(format!("grid oracle supports p <= {GRID_MAX_DIM}, got p = {p}")));
    }
    if !(grid_step > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidInput("grid step and radius must be positive".into()));
    }
    let extent = spec.points.iter().map(|b| b.amax()).fold(0.0, f64::max);
    if radius < extent {
        return Err(Error::InvalidInput(format!(
            "grid radius {radius} does not cover the support (max |coordinate| {extent})"
        )));
    }
    let half = (radius / grid_step).floor() as usize;
    let per_axis = 2 * half + 1;
    let total = per_axis.pow(p as u32);
    let sigma = spec.sigma.matrix();
    // −V_{β,b} = βᵀΣβ − 2(Σb)ᵀβ
    let sigma_b: Vec<DVector<f64>> = spec.points.iter().map(|b| sigma * b).collect();

    let grid_point = |flat: usize| -> DVector<f64> {
        let mut beta = DVector::zeros(p);
        let mut rem = flat;
        for d in (0..p).rev() {
            beta[d] = ((rem % per_axis) as f64 - half as f64) * grid_step;
            rem /= per_axis;
        }
        beta
    };
    let eval = |flat: usize| -> (f64, usize) {
        let beta = grid_point(flat);
        let quad = quad_form(&beta, sigma);
        let worst = sigma_b
            .iter()
            .map(|sb| quad - 2.0 * sb.dot(&beta))
            .fold(f64::NEG_INFINITY, f64::max);
        (worst, flat)
    };
    // Flat indices enumerate the grid in lexicographic order, so the
    // smallest index wins ties.
    let (value, best) = (0..total)
        .into_par_iter()
        .map(eval)
        .reduce(|| (f64::INFINITY, usize::MAX), |a, b| {
            if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }
        });
    let point = grid_point(best);
    Ok(GridOracle { point, value, evaluated: total })
}

/// Maximin points before and after adding `new_point` to the support.
pub fn robustness_delta(spec: &SupportSpec, new_point: &DVector<f64>, tol: f64) -> Result<(MaximinPoint, MaximinPoint)> {
    let old = maximin_point(spec, tol)?;
    let new = maximin_point(&spec.with_point(new_point.clone())?, tol)?;
    Ok((old, new))
}

/// Empirical check of `‖θ̂_Magging − b_maximin‖²_Σ ≤ 6η₁ + 4η₂κ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    /// `max_g (θ̂_g − b*_g)ᵀΣ(θ̂_g − b*_g)`.
    pub eta1: f64,
    /// `max_g max_{jk} |(Σ̂_g − Σ)_{jk}|`.
    pub eta2: f64,
    /// `max(max_g ‖b*_g‖₁, max_g ‖θ̂_g‖₁)`.
    pub kappa: f64,
    pub bound: f64,
    pub lhs: f64,
    /// Numerical uncertainty of `lhs` from the two simplex solves.
    pub slack: f64,
    /// `lhs ≤ bound + slack`.
    pub holds: bool,
    /// Smallest group size.
    pub m: usize,
}

/// Computes the error drivers and both sides of the bound.
///
/// `spec.points` holds the true per-group parameters `b*_g` in group order
/// and `spec.sigma` the population covariance; `x` is the design the
/// ensemble was fitted on.
pub fn theorem1_certificate(
    x: &DMatrix<f64>,
    ens: &Ensemble,
    spec: &SupportSpec,
    magging_result: &AggregationResult,
    tol: f64,
) -> Result<BoundCertificate> {
    let g = ens.len();
    if spec.points.len() != g {
        return Err(Error::Dimension(format!("{} true parameters for {g} ensemble members", spec.points.len())));
    }
    if ens.dim() != spec.dim() || x.ncols() != spec.dim() || magging_result.theta.len() != spec.dim() {
        return Err(Error::Dimension("ensemble, design and covariance dimensions differ".into()));
    }
    if ens.grouping.n != x.nrows() {
        return Err(Error::Dimension("grouping does not match the design".into()));
    }
    let sigma = spec.sigma.matrix();

    let eta1 = ens
        .thetas
        .iter()
        .zip(&spec.points)
        .map(|(t, b)| quad_form(&(t - b), sigma).max(0.0))
        .fold(0.0, f64::max);
    let eta2 = ens
        .grouping
        .groups
        .iter()
        .map(|idx| (gram(&x.select_rows(idx), true).into_inner() - sigma).amax())
        .fold(0.0, f64::max);
    let kappa = spec
        .points
        .iter()
        .chain(&ens.thetas)
        .map(l1_norm)
        .fold(0.0, f64::max);
    let maximin = maximin_point(spec, tol)?;
    let lhs = quad_form(&(&magging_result.theta - &maximin.point), sigma).max(0.0);
    let bound = 6.0 * eta1 + 4.0 * eta2 * kappa * kappa;
    // A hull point with objective gap δ lies within squared distance δ of
    // the minimum-norm point, so each solve blurs lhs by a multiple of its gap.
    let magging_gap = magging_result.diagnostics.get("gap").copied().unwrap_or(0.0);
    let scale = spec.points.iter().map(|b| quad_form(b, sigma)).fold(0.0, f64::max);
    let slack = 4.0 * (magging_gap + maximin.gap) + 64.0 * f64::EPSILON * scale;
    Ok(BoundCertificate {
        eta1,
        eta2,
        kappa,
        bound,
        lhs,
        slack,
        holds: lhs <= bound + slack,
        m: ens.grouping.min_group_size(),
    })
}
