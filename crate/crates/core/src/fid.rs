//! Gaussian summaries of feature sets and the Fréchet distance between them.
//!
//! For summaries `(mu_s, cov_s)` and `(mu_t, cov_t)`:
//!
//! ```text
//! FID = |mu_s - mu_t|^2 + Tr(cov_s) + Tr(cov_t) - 2 Tr((cov_s cov_t)^(1/2))
//! ```
//!
//! The cross term is computed through a symmetric matrix whose eigenvalues
//! are those of `cov_s cov_t`, so only symmetric eigensolvers are needed.
//! When a summary comes from fewer rows than it has dimensions, the centred
//! rows are kept as a low-rank factor and the cross term is taken from a
//! small Gram matrix instead of a `d x d` one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Relative symmetry tolerance for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Allowed negative eigenvalue, relative to `trace / d`.
pub const PSD_TOL: f64 = 1e-6;
/// Regularization scale relative to the mean diagonal of the pair.
pub const REGULARIZATION: f64 = 1e-6;
/// A raw FID below `-NEGATIVE_TOL * (1 + scale)` counts as a numerical failure.
const NEGATIVE_TOL: f64 = 1e-8;

const EIGEN_MAX_ITER: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FidError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite input value")]
    NonFinite,
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailed,
}

/// Mean, unbiased covariance and sample count of a feature set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    count: usize,
    /// Centred rows scaled by `1/sqrt(n-1)`, so that `cov = factorᵀ factor`.
    /// Present only when `n < d`.
    factor: Option<DMatrix<f64>>,
}

impl GaussianStats {
    /// Wraps an externally supplied mean and covariance after validating
    /// symmetry and positive semi-definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self, FidError> {
        if count < 2 {
            return Err(FidError::TooFewSamples(count));
        }
        if cov.nrows() != cov.ncols() {
            return Err(FidError::DimensionMismatch {
                left: cov.nrows(),
                right: cov.ncols(),
            });
        }
        if mean.len() != cov.nrows() {
            return Err(FidError::DimensionMismatch {
                left: mean.len(),
                right: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(FidError::NonFinite);
        }
        check_symmetric(&cov)?;
        let d = cov.nrows();
        let eig = symmetric_eigen(cov.clone())?;
        let min = eig.eigenvalues.min();
        let floor = -PSD_TOL * (cov.trace().abs() / d as f64);
        if min < floor {
            return Err(FidError::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(Self {
            mean,
            cov,
            count,
            factor: None,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Whether the low-rank factor was retained.
    pub fn is_low_rank(&self) -> bool {
        self.factor.is_some()
    }
}

/// Summarizes an `n x d` sample matrix (one row per sample).
pub fn summarize(rows: &DMatrix<f64>) -> Result<GaussianStats, FidError> {
    let (n, d) = rows.shape();
    if n < 2 {
        return Err(FidError::TooFewSamples(n));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(FidError::NonFinite);
    }
    let mut mean = DVector::zeros(d);
    for j in 0..d {
        mean[j] = rows.column(j).iter().sum::<f64>() / n as f64;
    }
    let mut centred = rows.clone();
    for j in 0..d {
        let m = mean[j];
        centred.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    centred /= ((n - 1) as f64).sqrt();
    let mut cov = centred.tr_mul(&centred);
    symmetrize(&mut cov);
    let factor = (n < d).then_some(centred);
    Ok(GaussianStats {
        mean,
        cov,
        count: n,
        factor,
    })
}

/// Summarizes `f32` rows taken from a row-major buffer of width `dim`.
pub fn summarize_rows<'a, I>(rows: I, dim: usize) -> Result<GaussianStats, FidError>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let rows: Vec<&[f32]> = rows.into_iter().collect();
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(FidError::DimensionMismatch {
                left: row.len(),
                right: dim,
            });
        }
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v as f64;
        }
    }
    summarize(&m)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), FidError> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(FidError::Asymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, FidError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FidError::NonFinite);
    }
    SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITER).ok_or(FidError::EigenFailed)
}

/// Sum of square roots of the eigenvalues of a symmetric matrix, negative
/// eigenvalues clamped to zero.
fn trace_sqrt_symmetric(mut m: DMatrix<f64>) -> Result<f64, FidError> {
    symmetrize(&mut m);
    let eig = symmetric_eigen(m)?;
    Ok(eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum())
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>, FidError> {
    let eig = symmetric_eigen(a.clone())?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    let mut out = scaled * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// `Tr((a b)^(1/2))` for symmetric PSD `a` and `b`, computed from the
/// eigenvalues of `a^(1/2) b a^(1/2)`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, FidError> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(FidError::DimensionMismatch {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    check_symmetric(a)?;
    check_symmetric(b)?;
    let root = psd_sqrt(a)?;
    let sandwich = &root * b * &root;
    trace_sqrt_symmetric(sandwich)
}

/// Cross term `Tr((cov_s cov_t)^(1/2))`, using a low-rank factor when one side
/// has one.
fn cross_term(s: &GaussianStats, t: &GaussianStats) -> Result<f64, FidError> {
    match (&s.factor, &t.factor) {
        (Some(fs), Some(ft)) => {
            // Eigenvalues of cov_s cov_t are the squared singular values of fs ftᵀ.
            let m = fs * ft.transpose();
            let gram = if m.nrows() <= m.ncols() {
                &m * m.transpose()
            } else {
                m.tr_mul(&m)
            };
            trace_sqrt_symmetric(gram)
        }
        (Some(f), None) => trace_sqrt_symmetric(f * &t.cov * f.transpose()),
        (None, Some(f)) => trace_sqrt_symmetric(f * &s.cov * f.transpose()),
        (None, None) => trace_sqrt_product(&s.cov, &t.cov),
    }
}

/// Fréchet distance between two Gaussian summaries.
///
/// The result is clamped at zero. If the direct computation is non-finite or
/// clearly negative, it is redone with `eps * I` added to both covariances in
/// the cross term, `eps` being `1e-6` times the mean diagonal of the pair.
pub fn fid(s: &GaussianStats, t: &GaussianStats) -> Result<f64, FidError> {
    if s.dim() != t.dim() {
        return Err(FidError::DimensionMismatch {
            left: s.dim(),
            right: t.dim(),
        });
    }
    let d = s.dim();
    let mean_term = (&s.mean - &t.mean).norm_squared();
    let (tr_s, tr_t) = (s.cov.trace(), t.cov.trace());
    let base = mean_term + tr_s + tr_t;
    let tol = NEGATIVE_TOL * (1.0 + base.abs());

    if let Ok(cross) = cross_term(s, t) {
        let value = base - 2.0 * cross;
        if value.is_finite() && value >= -tol {
            return Ok(value.max(0.0));
        }
    }

    let eps = REGULARIZATION * (tr_s + tr_t) / (2 * d) as f64;
    let eps = if eps > 0.0 { eps } else { REGULARIZATION };
    let shift = DMatrix::<f64>::identity(d, d) * eps;
    let cross = trace_sqrt_product(&(&s.cov + &shift), &(&t.cov + &shift))?;
    let value = base - 2.0 * cross;
    if !value.is_finite() {
        return Err(FidError::NonFinite);
    }
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn stats(mean: &[f64], cov: DMatrix<f64>) -> GaussianStats {
        GaussianStats::new(DVector::from_column_slice(mean), cov, 10).unwrap()
    }

    #[test]
    fn two_point_covariance() {
        let s = summarize(&DMatrix::from_row_slice(2, 2, &[0., 0., 2., 2.])).unwrap();
        assert_eq!(s.mean().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.cov().as_slice(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_variance_is_accepted() {
        let s = summarize(&DMatrix::from_row_slice(3, 1, &[3., 3., 3.])).unwrap();
        assert_eq!(s.mean()[0], 3.0);
        assert_eq!(s.cov()[(0, 0)], 0.0);
    }

    #[test]
    fn summarize_rejects_single_row_and_nan() {
        assert_eq!(
            summarize(&DMatrix::from_row_slice(1, 2, &[0., 0.])).unwrap_err(),
            FidError::TooFewSamples(1)
        );
        assert_eq!(
            summarize(&DMatrix::from_row_slice(2, 1, &[0., f64::NAN])).unwrap_err(),
            FidError::NonFinite
        );
    }

    #[test]
    fn monte_carlo_covariance_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = summarize(&gauss(&mut rng, 1000, 2)).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((s.cov() - eye).abs().max() < 0.15);
    }

    #[test]
    fn trace_sqrt_identity_and_diagonal() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((trace_sqrt_product(&eye, &eye).unwrap() - 3.0).abs() < 1e-12);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let b = DMatrix::<f64>::identity(2, 2);
        assert!((trace_sqrt_product(&a, &b).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn trace_sqrt_errors() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            trace_sqrt_product(&a, &b),
            Err(FidError::DimensionMismatch { .. })
        ));
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            trace_sqrt_product(&skew, &a),
            Err(FidError::Asymmetric { .. })
        ));
    }

    #[test]
    fn one_dimensional_closed_form() {
        let s = stats(&[1.0], DMatrix::from_element(1, 1, 4.0));
        let t = stats(&[0.0], DMatrix::from_element(1, 1, 1.0));
        assert!((fid(&s, &t).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_mean_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gauss(&mut rng, 4, 4);
        let cov = &g * g.transpose() + DMatrix::identity(4, 4);
        let s = stats(&[0.0; 4], cov.clone());
        assert!(fid(&s, &s).unwrap() <= 1e-8);
        let t = stats(&[1.0, -2.0, 0.5, 0.0], cov);
        let v = fid(&s, &t).unwrap();
        assert!((v - 5.25).abs() / 5.25 < 1e-6, "{v}");
    }

    #[test]
    fn non_psd_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianStats::new(DVector::zeros(2), cov, 5),
            Err(FidError::NotPsd { .. })
        ));
    }

    #[test]
    fn fid_dimension_mismatch() {
        let s = stats(&[0.0], DMatrix::identity(1, 1));
        let t = stats(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(
            fid(&s, &t),
            Err(FidError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn low_rank_routes_match_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (ns, nt) in [(4usize, 30usize), (30, 5), (3, 6), (40, 50)] {
            let a = gauss(&mut rng, ns, 12);
            let b = gauss(&mut rng, nt, 12) * 1.7;
            let (sa, sb) = (summarize(&a).unwrap(), summarize(&b).unwrap());
            let fast = fid(&sa, &sb).unwrap();
            let dense_a = GaussianStats { factor: None, ..sa.clone() };
            let dense_b = GaussianStats { factor: None, ..sb.clone() };
            let mean_term = (sa.mean() - sb.mean()).norm_squared();
            let cross = trace_sqrt_product(dense_a.cov(), dense_b.cov()).unwrap();
            let dense = mean_term + sa.cov().trace() + sb.cov().trace() - 2.0 * cross;
            assert!(
                (fast - dense).abs() <= 1e-7 * dense.abs().max(1.0),
                "{ns}x{nt}: {fast} vs {dense}"
            );
        }
    }

    #[test]
    fn self_fid_of_low_rank_summary_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = summarize(&gauss(&mut rng, 10, 40)).unwrap();
        assert!(s.is_low_rank());
        assert!(fid(&s, &s).unwrap() <= 1e-8);
    }

    #[test]
    fn separated_gaussians_have_positive_fid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gauss(&mut rng, 200, 3);
        let b = gauss(&mut rng, 200, 3).add_scalar(5.0);
        let v = fid(&summarize(&a).unwrap(), &summarize(&b).unwrap()).unwrap();
        assert!(v >= 1e-3);
    }
}
