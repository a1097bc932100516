//! Convex quadratic programs over the probability simplex:
//!
//! ```text
//! minimize  f(w) = wᵀHw + 2·cᵀw   subject to  w ≥ 0, Σ w = 1
//! ```
//!
//! for positive semi-definite `H`. Magging uses `c = 0`; convex stacking
//! uses `c = −ŶᵀY`.
//!
//! The solver runs accelerated projected gradient (FISTA with gradient
//! restarts) on `H + ξI`. The small ridge `ξ` picks out the minimum-norm
//! weight vector among tied minimizers; the iteration starts from uniform
//! weights, which keeps symmetric ties exactly symmetric. The Frank–Wolfe
//! gap serves as the stopping certificate.
//!
//! Near-singular `H` can leave first-order iterations crawling along a face.
//! At iterations 64, 128, 256, … and once more at the end, an active-set
//! solve on the current support is tried and kept only when it lowers the
//! gap without raising the objective. Gaps below the rounding floor
//! `(64 + 4G)·ε·(max|H| + max|c|)` count as converged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, project_simplex};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// Feasibility slack accepted on input weights.
const NEG_SLACK: f64 = 1e-12;
const SUM_SLACK: f64 = 1e-10;
/// Gap resolution floor is `(ROUNDING_FACTOR + 4G)·ε·max|H|`.
const ROUNDING_FACTOR: f64 = 64.0;
const POLISH_EVERY: usize = 64;

/// The data of a simplex-constrained quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: DMatrix<f64>,
    linear: Option<DVector<f64>>,
}

impl QpProblem {
    /// Validates that `h` is symmetric PSD and `linear`, if any, matches.
    pub fn new(h: DMatrix<f64>, linear: Option<DVector<f64>>) -> Result<Self> {
        check_psd(&h)?;
        if let Some(c) = &linear {
            if c.len() != h.nrows() {
                return Err(Error::Dimension(format!(
                    "linear term has length {}, H is {}x{}",
                    c.len(),
                    h.nrows(),
                    h.ncols()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("linear term has non-finite entries".into()));
            }
        }
        Ok(QpProblem { h, linear })
    }

    pub fn quadratic(h: DMatrix<f64>) -> Result<Self> {
        Self::new(h, None)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn linear(&self) -> Option<&DVector<f64>> {
        self.linear.as_ref()
    }

    /// `wᵀHw + 2·cᵀw`.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        let quad = w.dot(&(&self.h * w));
        quad + self.linear.as_ref().map_or(0.0, |c| 2.0 * c.dot(w))
    }

    /// `∇f(w) = 2(Hw + c)`.
    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.h * w;
        if let Some(c) = &self.linear {
            g += c;
        }
        g * 2.0
    }
}

/// Solver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights {
    pub w: Vec<f64>,
    /// `wᵀHw + 2cᵀw` on the unregularized problem.
    pub objective: f64,
    pub iterations: usize,
    /// Ridge `ξ` added to the diagonal of `H`.
    pub regularization_used: f64,
    /// Frank–Wolfe gap of the unregularized problem at `w`.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Overrides the default ridge `max(1e-10, 1e-12·trace H)`.
    pub regularization: Option<f64>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { tol: DEFAULT_TOL, max_iterations: DEFAULT_MAX_ITERATIONS, regularization: None }
    }
}

/// Default tie-break ridge for `H`.
pub fn default_regularization(h: &DMatrix<f64>) -> f64 {
    (1e-12 * h.trace()).max(1e-10)
}

pub fn solve_simplex_qp(prob: &QpProblem, tol: f64) -> Result<SimplexWeights> {
    solve_simplex_qp_with(prob, &QpOptions { tol, ..Default::default() })
}

pub fn solve_simplex_qp_with(prob: &QpProblem, opts: &QpOptions) -> Result<SimplexWeights> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    let g = prob.dim();
    let xi = opts.regularization.unwrap_or_else(|| default_regularization(&prob.h));
    if g == 1 {
        return finish(prob, vec![1.0], 0, xi);
    }

    let mut h_reg = prob.h.clone();
    for i in 0..g {
        h_reg[(i, i)] += xi;
    }
    let reg = QpProblem { h: h_reg, linear: prob.linear.clone() };

    // Gershgorin bound on the largest eigenvalue of 2(H + ξI).
    let lipschitz = 2.0
        * reg
            .h
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;

    // The gap cannot be resolved below the rounding error of ∇f·w.
    let scale = reg.h.amax() + reg.linear.as_ref().map_or(0.0, |c| c.amax());
    let target = opts.tol.max((ROUNDING_FACTOR + 4.0 * g as f64) * f64::EPSILON * scale);

    let mut x = DVector::from_element(g, 1.0 / g as f64);
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut gap = fw_gap(&reg, &x);
    let mut iterations = 0;
    let mut next_polish = POLISH_EVERY;
    while gap > target {
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence { iterations, gap, tol: opts.tol });
        }
        iterations += 1;
        let grad_y = reg.gradient(&y);
        let trial = &y - grad_y * step;
        let x_next = DVector::from_vec(project_simplex(trial.as_slice())?);

        // Restart momentum when the step opposes the gradient direction.
        if (&y - &x_next).dot(&(&x_next - &x)) > 0.0 {
            momentum = 1.0;
            y = x_next.clone();
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            y = &x_next + (&x_next - &x) * ((momentum - 1.0) / next);
            momentum = next;
        }
        x = x_next;
        gap = fw_gap(&reg, &x);

        // Active-set refinement on a doubling schedule finishes ill-conditioned
        // problems that the gradient method only approaches slowly.
        if iterations == next_polish && gap > target {
            next_polish *= 2;
            if let Some((p, p_gap)) = try_polish(&reg, &x, gap) {
                x = p;
                y = x.clone();
                momentum = 1.0;
                gap = p_gap;
            }
        }
    }
    let rounding = 16.0 * f64::EPSILON * (1.0 + reg.objective(&x).abs());
    if gap > rounding {
        if let Some((p, _)) = try_polish(&reg, &x, gap) {
            x = p;
        }
    }
    finish(prob, x.as_slice().to_vec(), iterations, xi)
}

/// The refined point if it improves both objective and gap.
fn try_polish(prob: &QpProblem, x: &DVector<f64>, gap: f64) -> Option<(DVector<f64>, f64)> {
    let p = active_set(prob, x)?;
    let p_gap = fw_gap(prob, &p);
    (prob.objective(&p) <= prob.objective(x) && p_gap < gap).then_some((p, p_gap))
}

/// Minimizer of `f` on the affine hull of the face `support`, from its KKT
/// system. `None` if the system is singular.
fn face_solve(prob: &QpProblem, support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    // [2H_S 1; 1ᵀ 0] [w_S; ν] = [−2c_S; 1]
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = 2.0 * prob.h[(i, j)];
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
        rhs[a] = prob.linear.as_ref().map_or(0.0, |c| -2.0 * c[i]);
    }
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let w: Vec<f64> = sol.iter().take(k).copied().collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// Primal active-set refinement started from the feasible point `x`.
///
/// Moves towards the minimizer of each face, dropping coordinates that hit
/// zero on the way and adding the coordinate with the most negative reduced
/// gradient once a face is optimal. Finite for positive definite `H`.
fn active_set(prob: &QpProblem, x: &DVector<f64>) -> Option<DVector<f64>> {
    let g = x.len();
    let mut w = x.clone();
    let mut support: Vec<usize> = (0..g).filter(|&i| w[i] > 0.0).collect();
    for _ in 0..4 * g + 8 {
        if support.is_empty() {
            return None;
        }
        let target = face_solve(prob, &support)?;
        // Largest step towards the face minimizer that stays feasible.
        let mut alpha = 1.0f64;
        let mut blocking = None;
        for (a, &i) in support.iter().enumerate() {
            let d = target[a] - w[i];
            if d < 0.0 && w[i] + d < 0.0 {
                let t = w[i] / -d;
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        for (a, &i) in support.iter().enumerate() {
            w[i] += alpha * (target[a] - w[i]);
        }
        if let Some(b) = blocking {
            w[b] = 0.0;
            support.retain(|&i| i != b && w[i] > 0.0);
            for i in 0..g {
                if !support.contains(&i) {
                    w[i] = 0.0;
                }
            }
            continue;
        }
        let grad = prob.gradient(&w);
        let level = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
        let slack = 16.0 * f64::EPSILON * grad.amax().max(f64::MIN_POSITIVE);
        let entering = (0..g)
            .filter(|i| !support.contains(i))
            .min_by(|&a, &b| grad[a].total_cmp(&grad[b]))
            .filter(|&j| grad[j] < level - slack);
        match entering {
            Some(j) => {
                support.push(j);
                support.sort_unstable();
            }
            None => break,
        }
    }
    let total = w.sum();
    (total > 0.0).then(|| w / total)
}

fn finish(prob: &QpProblem, mut w: Vec<f64>, iterations: usize, xi: f64) -> Result<SimplexWeights> {
    for v in &mut w {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let wv = DVector::from_vec(w);
    let objective = prob.objective(&wv);
    let gap = fw_gap(prob, &wv);
    Ok(SimplexWeights {
        w: wv.as_slice().to_vec(),
        objective,
        iterations,
        regularization_used: xi,
        gap,
    })
}

/// `⟨∇f(w), w⟩ − min_g ∇f(w)_g`, clamped at zero.
fn fw_gap(prob: &QpProblem, w: &DVector<f64>) -> f64 {
    let grad = prob.gradient(w);
    (grad.dot(w) - grad.min()).max(0.0)
}

/// Frank–Wolfe duality gap of a feasible `w`. It upper-bounds
/// `f(w) − min f` and vanishes exactly at minimizers.
pub fn duality_gap(prob: &QpProblem, w: &[f64]) -> Result<f64> {
    if w.len() != prob.dim() {
        return Err(Error::Dimension(format!(
            "weights have length {}, problem has dimension {}",
            w.len(),
            prob.dim()
        )));
    }
    if w.iter().any(|&v| !(v >= -NEG_SLACK)) || (w.iter().sum::<f64>() - 1.0).abs() > SUM_SLACK {
        return Err(Error::InvalidInput("weights are not in the probability simplex".into()));
    }
    Ok(fw_gap(prob, &DVector::from_column_slice(w)))
}
