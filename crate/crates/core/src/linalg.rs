//! Dense linear-algebra primitives shared by the estimators, the simplex
//! solver and the maximin oracle.
//!
//! Matrices are `nalgebra` dense types. Design matrices are `n × p` with one
//! sample per row; coefficient vectors have length `p`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DesignMatrix = DMatrix<f64>;
pub type ResponseVector = DVector<f64>;
pub type CoefficientVector = DVector<f64>;

/// Relative tolerance for the symmetry check on covariance matrices.
pub const SYMMETRY_RTOL: f64 = 1e-12;
/// Eigenvalues down to `-PSD_RTOL * trace` are accepted as rounding noise.
pub const PSD_RTOL: f64 = 1e-10;

/// A symmetric positive semi-definite `p × p` matrix: a population
/// covariance or an empirical Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_psd(&m)?;
        Ok(CovarianceMatrix(m))
    }

    pub fn identity(p: usize) -> Self {
        CovarianceMatrix(DMatrix::identity(p, p))
    }

    /// Wraps a matrix that is symmetric by construction (e.g. `gram`)
    /// without running the eigenvalue check.
    pub(crate) fn from_symmetric(m: DMatrix<f64>) -> Self {
        CovarianceMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl std::ops::Deref for CovarianceMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for CovarianceMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        CovarianceMatrix::new(matrix_from_rows(&rows)?)
    }
}

impl From<CovarianceMatrix> for Vec<Vec<f64>> {
    fn from(c: CovarianceMatrix) -> Self {
        matrix_to_rows(&c.0)
    }
}

/// Builds a dense matrix from row vectors; all rows must have equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Checks that a design matrix is non-empty with finite entries.
pub fn validate_design(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "design matrix must be non-empty, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("design matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Checks a response vector against the row count of its design.
pub fn validate_response(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "response has length {}, design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("response has non-finite entries".into()));
    }
    Ok(())
}

/// `XᵀX`, optionally divided by the number of rows.
///
/// Only the upper triangle is computed; the lower triangle is a copy, so
/// the result is exactly symmetric.
pub fn gram(x: &DMatrix<f64>, scale_by_n: bool) -> CovarianceMatrix {
    let mut g = x.tr_mul(x);
    let p = g.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            g[(i, j)] = g[(j, i)];
        }
    }
    if scale_by_n && x.nrows() > 0 {
        g /= x.nrows() as f64;
    }
    CovarianceMatrix::from_symmetric(g)
}

/// The squared Σ-norm `vᵀSv`, clamped at zero when rounding drives it
/// slightly negative.
pub fn sigma_norm_sq(v: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    if s.nrows() != v.len() || s.ncols() != v.len() {
        return Err(Error::Dimension(format!(
            "vector of length {} against {}x{} matrix",
            v.len(),
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(quad_form(v, s).max(0.0))
}

pub(crate) fn quad_form(v: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    v.dot(&(s * v))
}

/// Euclidean projection onto the probability simplex `{w ≥ 0, Σ w = 1}`
/// by sorting and thresholding.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector onto the simplex".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in simplex projection".into()));
    }
    // Feasible inputs are returned untouched.
    if v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(v.to_vec());
    }

    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    Ok(v.iter().map(|&x| (x - tau).max(0.0)).collect())
}

/// Verifies symmetry and positive semi-definiteness within the crate-wide
/// tolerances.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let min_eig = min_eigenvalue(m);
    let tolerance = PSD_RTOL * m.trace().abs();
    if min_eig < -tolerance {
        return Err(Error::NotPsd { min_eigenvalue: min_eig, tolerance });
    }
    Ok(())
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub(crate) fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `Σ_g w_g v_g` for equally sized vectors.
pub(crate) fn weighted_sum(vectors: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let dim = vectors.first().map_or(0, DVector::len);
    let mut out = DVector::zeros(dim);
    for (v, &w) in vectors.iter().zip(weights) {
        out.axpy(w, v, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn gram_identity_scaled() {
        let g = gram(&DMatrix::identity(2, 2), true);
        assert_eq!(*g, DMatrix::identity(2, 2) * 0.5);
    }

    #[test]
    fn gram_three_rows() {
        let x = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let g = gram(&x, true);
        let expected = dmatrix![2.0 / 3.0, 1.0 / 3.0; 1.0 / 3.0, 2.0 / 3.0];
        assert_abs_diff_eq!(*g, expected, epsilon = 1e-15);
    }

    #[test]
    fn gram_single_row_outer_product() {
        let (a, b) = (1.5, -2.0);
        let g = gram(&dmatrix![a, b], false);
        assert_eq!(*g, dmatrix![a * a, a * b; a * b, b * b]);
    }

    #[test]
    fn sigma_norm_examples() {
        let s = dmatrix![2.0, 1.0; 1.0, 2.0];
        assert_eq!(sigma_norm_sq(&DVector::zeros(2), &s).unwrap(), 0.0);
        assert_eq!(
            sigma_norm_sq(&DVector::from_vec(vec![1.0, 0.0]), &DMatrix::identity(2, 2)).unwrap(),
            1.0
        );
        assert_eq!(sigma_norm_sq(&DVector::from_vec(vec![1.0, 1.0]), &s).unwrap(), 6.0);
        assert!(matches!(
            sigma_norm_sq(&DVector::zeros(3), &s),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn project_simplex_examples() {
        assert_eq!(project_simplex(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let w = project_simplex(&[0.6, 0.8]).unwrap();
        assert_abs_diff_eq!(w[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.6, epsilon = 1e-15);
        for c in [-3.0, 0.0, 0.25, 7.0] {
            let w = project_simplex(&[c, c, c]).unwrap();
            for wi in w {
                assert_abs_diff_eq!(wi, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
        assert!(project_simplex(&[]).is_err());
    }

    #[test]
    fn psd_check_rejects_negative_definite() {
        assert!(check_psd(&dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
        assert!(check_psd(&dmatrix![1.0, 2.0; 0.0, 1.0]).is_err());
        assert!(check_psd(&dmatrix![1.0, 1.0; 1.0, 1.0]).is_ok());
    }

    fn random_psd(p: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let mut s = &a * a.transpose();
        // exact symmetry
        for j in 0..p {
            for i in (j + 1)..p {
                s[(i, j)] = s[(j, i)];
            }
        }
        s
    }

    #[test]
    fn sigma_norm_never_negative_fuzz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for case in 0..1000 {
            let p = 1 + case % 6;
            // rank-deficient half the time
            let s = if case % 2 == 0 {
                random_psd(p, case as u64)
            } else {
                let u = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
                &u * u.transpose()
            };
            let v = DVector::from_fn(p, |_, _| rng.random_range(-10.0..10.0));
            assert!(sigma_norm_sq(&v, &s).unwrap() >= 0.0);
        }
    }

    #[test]
    fn projection_is_optimal_against_random_feasible_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = project_simplex(&v).unwrap();
        let dist = |a: &[f64]| a.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let d_proj = dist(&w);
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..5).map(|_| -rng.random::<f64>().ln()).collect();
            let s: f64 = raw.iter().sum();
            let feasible: Vec<f64> = raw.iter().map(|x| x / s).collect();
            assert!(d_proj <= dist(&feasible) + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn gram_is_exactly_symmetric(rows in 1usize..8, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-5.0..5.0));
            let g = gram(&x, seed % 2 == 0);
            prop_assert_eq!(g.matrix().clone(), g.transpose());
        }

        #[test]
        fn projection_lands_in_simplex(v in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let w = project_simplex(&v).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }
}
