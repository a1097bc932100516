//! Aggregation of an ensemble into a single coefficient vector.
//!
//! All schemes return `θ̂_aggr = Σ_g w_g θ̂_g`; they differ in how the
//! weights are chosen:
//!
//! * mean: `w_g = 1/G`;
//! * stacking: weights minimizing `‖Y − Σ_g Ŷ_loo(g) w_g‖₂` over a ridge,
//!   sign or convex constraint set, with leave-out fitted values;
//! * magging: convex weights minimizing `‖Σ_g Ŷ(g) w_g‖₂`. These never
//!   look at the response.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_group, Ensemble, GroupFit};
use crate::linalg::{gram, validate_design, validate_response, weighted_sum};
use crate::simplex_qp::{solve_simplex_qp, QpProblem, SimplexWeights, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StackConstraint {
    /// `‖w‖₂ ≤ radius`.
    Ridge { radius: f64 },
    /// `w ≥ 0`.
    Sign,
    /// `w ≥ 0`, `Σ w = 1`.
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaveOut {
    /// Refit each member without sample `i` to predict sample `i`.
    LeaveOneOut,
    /// Members trained on sample `i` predict zero for it.
    OutOfBag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackingConfig {
    pub constraint: StackConstraint,
    pub leaveout: LeaveOut,
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if let StackConstraint::Ridge { radius } = self.constraint {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::InvalidInput(format!("ridge radius must be > 0, got {radius}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Mean,
    Stacked(StackingConfig),
    Magging,
    /// A single fit on all data; carries no weights.
    Pooled,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Mean => f.write_str("mean"),
            Scheme::Magging => f.write_str("magging"),
            Scheme::Pooled => f.write_str("pooled"),
            Scheme::Stacked(cfg) => {
                let lo = match cfg.leaveout {
                    LeaveOut::LeaveOneOut => "loo",
                    LeaveOut::OutOfBag => "oob",
                };
                match cfg.constraint {
                    StackConstraint::Convex => write!(f, "stack:convex:{lo}"),
                    StackConstraint::Sign => write!(f, "stack:sign:{lo}"),
                    StackConstraint::Ridge { radius } => write!(f, "stack:ridge:{radius}:{lo}"),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    pub scheme: Scheme,
    pub weights: Vec<f64>,
    pub theta: DVector<f64>,
    pub intercept: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl AggregationResult {
    /// `{"scheme", "weights", "theta", "intercept", "diagnostics"}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme.to_string(),
            "weights": self.weights,
            "theta": self.theta.as_slice(),
            "intercept": self.intercept,
            "diagnostics": self.diagnostics,
        })
    }

    /// Fitted values of the aggregate on `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(predict(&self.theta, x)?.add_scalar(self.intercept))
    }
}

/// `X_new · θ`.
pub fn predict(theta: &DVector<f64>, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x_new.ncols() != theta.len() {
        return Err(Error::Dimension(format!(
            "design has {} columns, coefficient vector has length {}",
            x_new.ncols(),
            theta.len()
        )));
    }
    Ok(x_new * theta)
}

fn combine(ens: &Ensemble, scheme: Scheme, weights: Vec<f64>, diagnostics: BTreeMap<String, f64>) -> AggregationResult {
    let theta = weighted_sum(&ens.thetas, &weights);
    let intercept = ens.intercepts.iter().zip(&weights).map(|(b, w)| b * w).sum();
    AggregationResult { scheme, weights, theta, intercept, diagnostics }
}

fn require_members(ens: &Ensemble) -> Result<()> {
    if ens.is_empty() {
        return Err(Error::InvalidInput("ensemble is empty".into()));
    }
    Ok(())
}

pub fn mean_aggregate(ens: &Ensemble) -> Result<AggregationResult> {
    require_members(ens)?;
    let g = ens.len();
    Ok(combine(ens, Scheme::Mean, vec![1.0 / g as f64; g], BTreeMap::new()))
}

/// Wraps a pooled fit so it can be reported next to the aggregates.
pub fn pooled_result(fit: &GroupFit) -> AggregationResult {
    AggregationResult {
        scheme: Scheme::Pooled,
        weights: Vec::new(),
        theta: fit.theta.clone(),
        intercept: fit.intercept,
        diagnostics: BTreeMap::from([("converged".to_string(), f64::from(u8::from(fit.converged)))]),
    }
}

/// `n⁻¹ FᵀF` for the matrix `F` whose columns are the fitted vectors.
fn fitted_gram(columns: &[DVector<f64>]) -> DMatrix<f64> {
    gram(&DMatrix::from_columns(columns), true).into_inner()
}

pub fn magging(ens: &Ensemble) -> Result<AggregationResult> {
    magging_with_tol(ens, DEFAULT_TOL)
}

/// Magging weights `argmin_{w ∈ simplex} ‖Σ_g w_g Ŷ(g)‖₂`.
///
/// The quadratic form is assembled as `n⁻¹ FᵀF`; the scaling leaves the
/// minimizer unchanged and keeps the solver tolerance on the scale of
/// `θᵀΣ̂θ`.
pub fn magging_with_tol(ens: &Ensemble, tol: f64) -> Result<AggregationResult> {
    require_members(ens)?;
    let g = ens.len();
    if ens.fitted.len() != g {
        return Err(Error::Dimension(format!("{} fitted vectors for {g} members", ens.fitted.len())));
    }
    let h = fitted_gram(&ens.fitted);
    let mut diagnostics = BTreeMap::new();
    if h.trace() == 0.0 {
        // All fits vanish: every w is optimal, the minimum-norm choice is uniform.
        diagnostics.insert("degenerate".to_string(), 1.0);
        diagnostics.insert("objective".to_string(), 0.0);
        diagnostics.insert("fitted_norm".to_string(), 0.0);
        return Ok(combine(ens, Scheme::Magging, vec![1.0 / g as f64; g], diagnostics));
    }
    let sol = solve_simplex_qp(&QpProblem::quadratic(h)?, tol)?;
    let aggregate_fit = weighted_sum(&ens.fitted, &sol.w);
    diagnostics.insert("degenerate".to_string(), 0.0);
    diagnostics.insert("fitted_norm".to_string(), aggregate_fit.norm());
    insert_solver_diagnostics(&mut diagnostics, &sol);
    Ok(combine(ens, Scheme::Magging, sol.w, diagnostics))
}

fn insert_solver_diagnostics(d: &mut BTreeMap<String, f64>, sol: &SimplexWeights) {
    d.insert("objective".to_string(), sol.objective);
    d.insert("gap".to_string(), sol.gap);
    d.insert("xi".to_string(), sol.regularization_used);
    d.insert("iterations".to_string(), sol.iterations as f64);
}

/// Leave-out fitted values: column `g` holds member `g`'s prediction for
/// every sample, computed without that sample when it belongs to `G_g`.
pub fn leaveout_predictions(ens: &Ensemble, x: &DMatrix<f64>, y: &DVector<f64>, leaveout: LeaveOut) -> Result<DMatrix<f64>> {
    validate_design(x)?;
    validate_response(x, y)?;
    if ens.grouping.n != x.nrows() || ens.len() != ens.grouping.len() {
        return Err(Error::Dimension(format!(
            "ensemble of {} members over n={} samples does not match design with {} rows",
            ens.len(),
            ens.grouping.n,
            x.nrows()
        )));
    }
    let n = x.nrows();
    let mut z = DMatrix::from_columns(&ens.fitted);
    match leaveout {
        LeaveOut::OutOfBag => {
            for (g, idx) in ens.grouping.groups.iter().enumerate() {
                for &i in idx {
                    z[(i, g)] = 0.0;
                }
            }
        }
        LeaveOut::LeaveOneOut => {
            let tasks: Vec<(usize, usize)> = ens
                .grouping
                .groups
                .iter()
                .enumerate()
                .flat_map(|(g, idx)| idx.iter().map(move |&i| (g, i)))
                .collect();
            let values: Vec<f64> = tasks
                .par_iter()
                .map(|&(g, i)| {
                    let keep: Vec<usize> = ens.grouping.groups[g].iter().copied().filter(|&j| j != i).collect();
                    let fit = fit_group(&x.select_rows(&keep), &y.select_rows(&keep), &ens.spec)
                        .map_err(|e| Error::LeaveOut { group: g, sample: i, source: Box::new(e) })?;
                    Ok(x.row(i).transpose().dot(&fit.theta) + fit.intercept)
                })
                .collect::<Result<_>>()?;
            for (&(g, i), v) in tasks.iter().zip(values) {
                z[(i, g)] = v;
            }
        }
    }
    debug_assert_eq!(z.nrows(), n);
    Ok(z)
}

pub fn stacked_aggregate(ens: &Ensemble, x: &DMatrix<f64>, y: &DVector<f64>, cfg: &StackingConfig) -> Result<AggregationResult> {
    stacked_aggregate_with_tol(ens, x, y, cfg, DEFAULT_TOL)
}

pub fn stacked_aggregate_with_tol(
    ens: &Ensemble,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &StackingConfig,
    tol: f64,
) -> Result<AggregationResult> {
    require_members(ens)?;
    cfg.validate()?;
    let z = leaveout_predictions(ens, x, y, cfg.leaveout)?;
    let weights = stacking_weights(&z, y, &cfg.constraint, tol)?;
    let mut diagnostics = weights.1;
    let residual = y - &z * DVector::from_column_slice(&weights.0);
    diagnostics.insert("residual_norm".to_string(), residual.norm());
    Ok(combine(ens, Scheme::Stacked(*cfg), weights.0, diagnostics))
}

/// Weights minimizing `‖y − Zw‖₂` over the constraint set, from the
/// leave-out prediction matrix `Z` (n × G).
pub fn stacking_weights(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    constraint: &StackConstraint,
    tol: f64,
) -> Result<(Vec<f64>, BTreeMap<String, f64>)> {
    if z.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} predictions per member, {} responses", z.nrows(), y.len())));
    }
    let n = z.nrows() as f64;
    let ztz = gram(z, true).into_inner();
    let zty = z.tr_mul(y) / n;
    let mut diagnostics = BTreeMap::new();
    let w = match *constraint {
        StackConstraint::Convex => {
            let sol = solve_simplex_qp(&QpProblem::new(ztz, Some(-zty))?, tol)?;
            insert_solver_diagnostics(&mut diagnostics, &sol);
            sol.w
        }
        StackConstraint::Sign => nnls(&ztz, &zty)?,
        StackConstraint::Ridge { radius } => {
            let (w, multiplier) = norm_constrained_ls(&ztz, &zty, radius)?;
            diagnostics.insert("multiplier".to_string(), multiplier);
            w
        }
    };
    Ok((w, diagnostics))
}

/// Lawson–Hanson active-set solver for `min ‖y − Zw‖²`, `w ≥ 0`, given
/// `A = ZᵀZ` and `b = Zᵀy` (any common scaling).
pub fn nnls(ata: &DMatrix<f64>, atb: &DVector<f64>) -> Result<Vec<f64>> {
    let g = ata.nrows();
    if ata.ncols() != g || atb.len() != g {
        return Err(Error::Dimension("normal equations have inconsistent shapes".into()));
    }
    let scale = atb.amax().max(ata.amax()).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut x = DVector::<f64>::zeros(g);
    let mut passive = vec![false; g];
    let max_outer = 3 * g + 10;

    for _ in 0..max_outer {
        let grad = atb - ata * &x;
        let candidate = (0..g)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = candidate else {
            return Ok(x.iter().map(|v| v.max(0.0)).collect());
        };
        passive[j] = true;

        loop {
            let p_idx: Vec<usize> = (0..g).filter(|&k| passive[k]).collect();
            let sub = subset_solve(ata, atb, &p_idx);
            if sub.iter().all(|&v| v > tol) {
                x.fill(0.0);
                for (&k, &v) in p_idx.iter().zip(&sub) {
                    x[k] = v;
                }
                break;
            }
            // Step back towards the feasible region until a variable hits zero.
            let mut alpha = f64::INFINITY;
            for (&k, &v) in p_idx.iter().zip(&sub) {
                if v <= tol {
                    let denom = x[k] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (&k, &v) in p_idx.iter().zip(&sub) {
                x[k] += alpha * (v - x[k]);
            }
            for &k in &p_idx {
                if x[k] <= tol {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if passive.iter().all(|p| !p) {
                break;
            }
        }
    }
    Err(Error::NoConvergence { iterations: max_outer, gap: f64::NAN, tol })
}

/// Least squares restricted to the columns in `idx`; falls back to the
/// pseudo-inverse when the sub-system is singular.
fn subset_solve(ata: &DMatrix<f64>, atb: &DVector<f64>, idx: &[usize]) -> Vec<f64> {
    let a = ata.select_rows(idx).select_columns(idx);
    let b = atb.select_rows(idx);
    if let Some(c) = a.clone().cholesky() {
        return c.solve(&b).as_slice().to_vec();
    }
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-12).map(|v| v.as_slice().to_vec()).unwrap_or_else(|_| vec![0.0; idx.len()])
}

/// `min ‖y − Zw‖²` subject to `‖w‖₂ ≤ radius`, via the eigenbasis of `ZᵀZ`
/// and bisection on the Lagrange multiplier. Returns the weights and the
/// multiplier (zero when the constraint is inactive).
pub fn norm_constrained_ls(ata: &DMatrix<f64>, atb: &DVector<f64>, radius: f64) -> Result<(Vec<f64>, f64)> {
    let eig = ata.clone().symmetric_eigen();
    let coords = eig.eigenvectors.tr_mul(atb);
    let lam_max = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let cutoff = 1e-12 * lam_max;
    let weights_at = |mu: f64| -> DVector<f64> {
        let scaled = DVector::from_fn(coords.len(), |k, _| {
            let d = eig.eigenvalues[k].max(0.0) + mu;
            if d > cutoff { coords[k] / d } else { 0.0 }
        });
        &eig.eigenvectors * scaled
    };
    let unconstrained = weights_at(0.0);
    if unconstrained.norm() <= radius {
        return Ok((unconstrained.as_slice().to_vec(), 0.0));
    }
    let mut lo = 0.0;
    let mut hi = lam_max.max(1.0);
    while weights_at(hi).norm() > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if weights_at(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok((weights_at(hi).as_slice().to_vec(), hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorSpec;
    use crate::groups::{consecutive_blocks, known_groups};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ensemble_of(thetas: Vec<DVector<f64>>, x: &DMatrix<f64>) -> Ensemble {
        let g = thetas.len();
        let grouping = consecutive_blocks(x.nrows().max(g), g).unwrap();
        Ensemble::from_thetas(x, thetas, grouping, EstimatorSpec::ols()).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn mean_examples() {
        let x = DMatrix::identity(2, 2);
        let t = v(&[0.3, -1.0]);
        let r = mean_aggregate(&ensemble_of(vec![t.clone(), t.clone(), t.clone()], &x)).unwrap();
        assert_abs_diff_eq!(r.theta, t, epsilon = 1e-15);
        let r = mean_aggregate(&ensemble_of(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])], &x)).unwrap();
        assert_eq!(r.theta, v(&[0.5, 0.5]));
        let r = mean_aggregate(&ensemble_of(vec![v(&[1.0, -2.0]), v(&[-1.0, 2.0])], &x)).unwrap();
        assert_eq!(r.theta, v(&[0.0, 0.0]));
    }

    #[test]
    fn magging_single_member() {
        let x = DMatrix::identity(2, 2);
        let r = magging(&ensemble_of(vec![v(&[2.0, 1.0])], &x)).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(r.theta, v(&[2.0, 1.0]));
    }

    #[test]
    fn magging_two_axis_fits() {
        let x = DMatrix::identity(2, 2);
        let r = magging(&ensemble_of(vec![v(&[2.0, 0.0]), v(&[0.0, 1.0])], &x)).unwrap();
        assert_abs_diff_eq!(r.weights[0], 0.2, epsilon = 1e-8);
        assert_abs_diff_eq!(r.weights[1], 0.8, epsilon = 1e-8);
    }

    #[test]
    fn magging_opposite_fits_cancel() {
        let x = DMatrix::identity(3, 3);
        let r = magging(&ensemble_of(vec![v(&[1.0, -2.0, 0.5]), v(&[-1.0, 2.0, -0.5])], &x)).unwrap();
        assert_abs_diff_eq!(r.weights[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.weights[1], 0.5, epsilon = 1e-9);
        assert!(r.predict(&x).unwrap().norm() < 1e-8);
    }

    #[test]
    fn magging_identical_members_are_uniform() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i + 2 * j) as f64 - 2.0);
        let t = v(&[0.7, -0.4]);
        let r = magging(&ensemble_of(vec![t.clone(); 4], &x)).unwrap();
        for w in &r.weights {
            assert_abs_diff_eq!(*w, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.theta, t, epsilon = 1e-12);
    }

    #[test]
    fn magging_degenerate_ensemble() {
        let x = DMatrix::identity(2, 2);
        let r = magging(&ensemble_of(vec![v(&[0.0, 0.0]); 3], &x)).unwrap();
        assert_eq!(r.diagnostics["degenerate"], 1.0);
        assert_eq!(r.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn magging_ignores_the_response() {
        // The API takes no response; refitting nothing and rerunning is bit-identical.
        let x = DMatrix::from_fn(6, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let ens = ensemble_of(vec![v(&[1.0, 0.5]), v(&[-0.2, 1.0]), v(&[0.4, -0.9])], &x);
        assert_eq!(magging(&ens).unwrap().weights, magging(&ens).unwrap().weights);
    }

    #[test]
    fn stacking_single_member_convex() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 + 1.0) * (j as f64 + 0.5));
        let y = v(&[1.0, -1.0, 2.0, 0.0, 3.0, 1.0]);
        let grouping = consecutive_blocks(6, 1).unwrap();
        let ens = crate::estimators::fit_ensemble(&x, &y, &grouping, &EstimatorSpec::ridge(0.1)).unwrap();
        for leaveout in [LeaveOut::LeaveOneOut, LeaveOut::OutOfBag] {
            let cfg = StackingConfig { constraint: StackConstraint::Convex, leaveout };
            assert_eq!(stacked_aggregate(&ens, &x, &y, &cfg).unwrap().weights, vec![1.0]);
        }
    }

    #[test]
    fn convex_stacking_picks_perfect_member() {
        let z = DMatrix::from_fn(8, 3, |i, j| ((i * 5 + j * 11) % 7) as f64 - 3.0);
        let y = z.column(1).into_owned();
        let (w, _) = stacking_weights(&z, &y, &StackConstraint::Convex, 1e-10).unwrap();
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-6);
        let resid = &y - &z * DVector::from_vec(w);
        assert!(resid.norm() < 1e-5);
    }

    #[test]
    fn sign_stacking_with_orthogonal_predictions() {
        // Orthogonal columns make the problem separable.
        let z = DMatrix::from_columns(&[
            v(&[1.0, 1.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 0.0, 2.0, 0.0, 0.0]),
            v(&[0.0, 0.0, 0.0, 1.0, -1.0]),
        ]);
        let y = v(&[3.0, 1.0, -4.0, 2.0, 0.5]);
        let (w, _) = stacking_weights(&z, &y, &StackConstraint::Sign, 1e-10).unwrap();
        for g in 0..3 {
            let c = z.column(g);
            let expected = (c.dot(&y) / c.norm_squared()).max(0.0);
            assert_abs_diff_eq!(w[g], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn ridge_stacking_respects_radius() {
        let z = DMatrix::from_fn(10, 3, |i, j| ((i * 3 + j * 7) % 5) as f64 - 1.5 + j as f64 * 0.1);
        let y = DVector::from_fn(10, |i, _| (i as f64).sin() * 10.0);
        let ztz = gram(&z, false).into_inner();
        let zty = z.tr_mul(&y);
        let (free, _) = norm_constrained_ls(&ztz, &zty, 1e9).unwrap();
        let free_norm = DVector::from_vec(free.clone()).norm();
        // inactive constraint returns least squares
        let ls = ztz.clone().cholesky().unwrap().solve(&zty);
        assert_abs_diff_eq!(DVector::from_vec(free), ls, epsilon = 1e-9);
        // active constraint lands on the boundary and beats other boundary points
        let radius = 0.5 * free_norm;
        let (w, mult) = norm_constrained_ls(&ztz, &zty, radius).unwrap();
        let w = DVector::from_vec(w);
        assert!(mult > 0.0);
        assert_abs_diff_eq!(w.norm(), radius, epsilon = 1e-9);
        let loss = |u: &DVector<f64>| (&y - &z * u).norm_squared();
        for k in 0..200 {
            let a = k as f64 * 0.0314;
            let dir = v(&[a.cos(), a.sin() * 0.6, a.sin() * 0.8]) * radius;
            assert!(loss(&w) <= loss(&dir) + 1e-9);
        }
    }

    #[test]
    fn oob_predictions_zero_inside_group() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64 + 1.0);
        let y = x.column(0) * 2.0;
        let grouping = known_groups(&[0, 0, 0, 1, 1, 1]).unwrap();
        let ens = crate::estimators::fit_ensemble(&x, &y, &grouping, &EstimatorSpec::ols()).unwrap();
        let z = leaveout_predictions(&ens, &x, &y, LeaveOut::OutOfBag).unwrap();
        for i in 0..3 {
            assert_eq!(z[(i, 0)], 0.0);
            assert_abs_diff_eq!(z[(i, 1)], 2.0 * (i as f64 + 1.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn loo_predictions_match_manual_refits() {
        let x = DMatrix::from_fn(8, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0 + j as f64);
        let y = DVector::from_fn(8, |i, _| (i as f64 * 0.7).cos());
        let grouping = known_groups(&[0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let spec = EstimatorSpec::ols();
        let ens = crate::estimators::fit_ensemble(&x, &y, &grouping, &spec).unwrap();
        let z = leaveout_predictions(&ens, &x, &y, LeaveOut::LeaveOneOut).unwrap();
        let keep: Vec<usize> = vec![0, 2, 3];
        let fit = fit_group(&x.select_rows(&keep), &y.select_rows(&keep), &spec).unwrap();
        assert_abs_diff_eq!(z[(1, 0)], x.row(1).transpose().dot(&fit.theta), epsilon = 1e-12);
        // outside its group a member predicts with its full fit
        assert_abs_diff_eq!(z[(1, 1)], ens.fitted[1][1], epsilon = 0.0);
    }

    #[test]
    fn loo_failures_name_sample_and_group() {
        let x = DMatrix::from_fn(3, 1, |i, _| i as f64 + 1.0);
        let y = v(&[1.0, 2.0, 3.0]);
        let grouping = known_groups(&[0, 0, 1]).unwrap();
        let ens = crate::estimators::fit_ensemble(&x, &y, &grouping, &EstimatorSpec::ols()).unwrap();
        let cfg = StackingConfig { constraint: StackConstraint::Convex, leaveout: LeaveOut::LeaveOneOut };
        let err = stacked_aggregate(&ens, &x, &y, &cfg).unwrap_err();
        assert!(matches!(err, Error::LeaveOut { group: 1, sample: 2, .. }), "{err}");
    }

    #[test]
    fn predict_examples() {
        let theta = v(&[1.5, -2.0]);
        assert_eq!(predict(&DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap(), DVector::zeros(2));
        assert_eq!(predict(&theta, &DMatrix::identity(2, 2)).unwrap(), theta);
        assert!(predict(&theta, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn result_json_shape() {
        let x = DMatrix::identity(2, 2);
        let r = magging(&ensemble_of(vec![v(&[2.0, 0.0]), v(&[0.0, 1.0])], &x)).unwrap();
        let j = r.to_json_value();
        assert_eq!(j["scheme"], "magging");
        assert_eq!(j["weights"].as_array().unwrap().len(), 2);
        assert_eq!(j["theta"].as_array().unwrap().len(), 2);
        assert!(j["diagnostics"]["gap"].as_f64().unwrap() <= 1e-9);
    }

    fn random_thetas(seed: u64, g: usize, p: usize) -> Vec<DVector<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        (0..g).map(|_| DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0))).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregates_are_linear_combinations(seed in any::<u64>(), g in 1usize..6) {
            let x = DMatrix::from_fn(12, 3, |i, j| ((i * 5 + j * 3 + seed as usize) % 9) as f64 - 4.0);
            let ens = ensemble_of(random_thetas(seed, g, 3), &x);
            let y = DVector::from_fn(12, |i, _| i as f64 * 0.1);
            let cfg = StackingConfig { constraint: StackConstraint::Convex, leaveout: LeaveOut::OutOfBag };
            for r in [mean_aggregate(&ens).unwrap(), magging(&ens).unwrap(), stacked_aggregate(&ens, &x, &y, &cfg).unwrap()] {
                let direct = weighted_sum(&ens.thetas, &r.weights);
                prop_assert!((&direct - &r.theta).norm() <= 1e-10 * (1.0 + direct.norm()));
            }
        }

        #[test]
        fn magging_beats_every_single_member(seed in any::<u64>(), g in 1usize..8) {
            let x = DMatrix::from_fn(15, 4, |i, j| ((i * 7 + j * 5 + seed as usize) % 11) as f64 - 5.0);
            let ens = ensemble_of(random_thetas(seed, g, 4), &x);
            let r = magging(&ens).unwrap();
            let agg = weighted_sum(&ens.fitted, &r.weights).norm();
            let best = ens.fitted.iter().map(|f| f.norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(agg <= best + 1e-6 * (1.0 + best));
        }

        #[test]
        fn magging_is_scale_equivariant(seed in any::<u64>(), c in 0.1f64..10.0) {
            let x = DMatrix::from_fn(10, 3, |i, j| ((i * 3 + j * 7 + seed as usize) % 8) as f64 - 3.5);
            let thetas = random_thetas(seed, 4, 3);
            let base = magging(&ensemble_of(thetas.clone(), &x)).unwrap();
            let scaled = magging(&ensemble_of(thetas.iter().map(|t| t * c).collect(), &x)).unwrap();
            for (a, b) in base.weights.iter().zip(&scaled.weights) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
            prop_assert!((&base.theta * c - &scaled.theta).norm() <= 1e-4 * c * (1.0 + base.theta.norm()));
        }

        #[test]
        fn convex_stacking_beats_every_vertex(seed in any::<u64>(), g in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let z = DMatrix::from_fn(20, g, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
            let (w, _) = stacking_weights(&z, &y, &StackConstraint::Convex, 1e-10).unwrap();
            let resid = (&y - &z * DVector::from_vec(w)).norm();
            let best = (0..g).map(|k| (&y - z.column(k)).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(resid <= best + 1e-6);
        }

        #[test]
        fn nnls_satisfies_kkt(seed in any::<u64>(), g in 1usize..7) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let z = DMatrix::from_fn(25, g, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(25, |_, _| rng.random_range(-1.0..1.0));
            let ata = z.tr_mul(&z);
            let atb = z.tr_mul(&y);
            let w = DVector::from_vec(nnls(&ata, &atb).unwrap());
            let grad = &atb - &ata * &w;
            for k in 0..g {
                prop_assert!(w[k] >= 0.0);
                prop_assert!(grad[k] <= 1e-9);
                if w[k] > 0.0 {
                    prop_assert!(grad[k].abs() <= 1e-9);
                }
            }
        }
    }
}
