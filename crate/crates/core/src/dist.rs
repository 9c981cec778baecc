//! Gaussian numerical primitives.
//!
//! Univariate normal pdf/cdf/quantile, a strict Cholesky factorization that
//! reports the failing pivot, multivariate normal log-densities and the
//! conditional distribution of one coordinate given the others.
//!
//! Nothing here regularizes a near-singular covariance; callers decide how to
//! treat a `Singular` error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, `Φ(x) = erfc(-x/√2)/2`.
///
/// `erfc` keeps full relative precision into the far tails, so `Φ(-x)` does
/// not lose digits to `1 - Φ(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Asymptotic series; Φ(x) is below 1e-197 here.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `φ(x)/Φ(x)`, stable for very negative `x`.
pub fn inv_mills(x: f64) -> f64 {
    if x > -30.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        let x2 = x * x;
        -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    }
}

/// `(ln Φ(x), φ(x)/Φ(x))` with a single cdf evaluation.
pub fn log_norm_cdf_and_mills(x: f64) -> (f64, f64) {
    if x > -30.0 {
        let c = norm_cdf(x);
        (c.ln(), norm_pdf(x) / c)
    } else {
        (log_norm_cdf(x), inv_mills(x))
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires 0 < p < 1, got {p}"
        )));
    }
    let mut x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // One Newton step against the cdf tightens the inverse to a few ulps.
    let dens = norm_pdf(x);
    if dens > 0.0 {
        x -= (norm_cdf(x) - p) / dens;
    }
    Ok(x)
}

/// Lower Cholesky factor `L` with `L Lᵀ = a`.
///
/// Fails with [`Error::Singular`] on the first pivot that is not strictly
/// positive (or not finite).
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Domain(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// A validated symmetric positive semi-definite covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::Domain(format!(
                "covariance must be square and nonempty, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariance has non-finite entries".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        check_psd(&entries)?;
        Ok(Self { entries })
    }

    pub fn from_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::Domain(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                rows.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, rows))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        cholesky(&self.entries)
    }
}

/// Semi-definite check on the correlation scale: every Cholesky pivot must be
/// at least `-1e-10`; pivots within that tolerance of zero are treated as exact
/// rank deficiency.
fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    for (i, &di) in d.iter().enumerate() {
        if di < 0.0 {
            return Err(Error::Singular { pivot: i, value: di });
        }
    }
    let mut r = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let s = (d[i] * d[j]).sqrt();
            r[(i, j)] = if s > 0.0 { a[(i, j)] / s } else { 0.0 };
        }
        if d[i] == 0.0 && (0..n).any(|j| a[(i, j)] != 0.0) {
            return Err(Error::Singular { pivot: i, value: 0.0 });
        }
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut p = r[(j, j)];
        for k in 0..j {
            p -= l[(j, k)] * l[(j, k)];
        }
        if p < -1e-10 {
            return Err(Error::Singular { pivot: j, value: p });
        }
        if p <= 1e-12 {
            // Rank-deficient direction: the remaining column must vanish too.
            for i in (j + 1)..n {
                let mut s = r[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-6 {
                    return Err(Error::Singular { pivot: j, value: p });
                }
            }
            continue;
        }
        let pj = p.sqrt();
        l[(j, j)] = pj;
        for i in (j + 1)..n {
            let mut s = r[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pj;
        }
    }
    Ok(())
}

/// Multivariate normal log-density evaluated through a Cholesky factor.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &CovMatrix) -> Result<f64> {
    GaussianDensity::new(mean, cov)?.logpdf(x)
}

/// A multivariate normal with its factorization cached, for repeated
/// evaluation at many points.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: &[f64], cov: &CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Domain(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        let chol = cov.cholesky()?;
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + log_det);
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            chol,
            log_norm,
        })
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        let p = self.mean.len();
        if x.len() != p {
            return Err(Error::Domain(format!(
                "point has length {} but density has dimension {p}",
                x.len()
            )));
        }
        // Forward substitution L z = x - mean.
        let mut z = vec![0.0; p];
        for i in 0..p {
            let mut s = x[i] - self.mean[i];
            for (k, zk) in z.iter().enumerate().take(i) {
                s -= self.chol[(i, k)] * zk;
            }
            z[i] = s / self.chol[(i, i)];
        }
        Ok(self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>())
    }
}

/// Distribution of one Gaussian coordinate given the remaining ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGaussian {
    pub mean: f64,
    pub variance: f64,
}

/// Conditions coordinate `target` on the observed values of all other
/// coordinates (`observed` lists them in index order, skipping `target`).
pub fn conditional_gaussian(
    full_mean: &[f64],
    full_cov: &CovMatrix,
    target: usize,
    observed: &[f64],
) -> Result<ConditionalGaussian> {
    let p = full_cov.dim();
    if full_mean.len() != p || target >= p || observed.len() + 1 != p {
        return Err(Error::Domain(format!(
            "conditional_gaussian: dimension mismatch (mean {}, cov {p}, target {target}, observed {})",
            full_mean.len(),
            observed.len()
        )));
    }
    let v = full_cov.matrix();
    let rest: Vec<usize> = (0..p).filter(|&i| i != target).collect();
    let m = rest.len();
    if m == 0 {
        return Ok(ConditionalGaussian {
            mean: full_mean[target],
            variance: v[(target, target)],
        });
    }
    let block = DMatrix::from_fn(m, m, |i, j| v[(rest[i], rest[j])]);
    let chol = cholesky(&block)?;
    let cross = DVector::from_fn(m, |i, _| v[(target, rest[i])]);
    let resid = DVector::from_fn(m, |i, _| observed[i] - full_mean[rest[i]]);
    let coef = cholesky_solve(&chol, &cross);
    let mean = full_mean[target] + coef.dot(&resid);
    let variance = (v[(target, target)] - coef.dot(&cross)).max(0.0);
    Ok(ConditionalGaussian { mean, variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pdf_values() {
        assert_relative_eq!(norm_pdf(0.0), 0.398_942_280_4, epsilon = 1e-10);
        assert_relative_eq!(norm_pdf(1.0), 0.241_970_724_5, epsilon = 1e-10);
        assert_eq!(norm_pdf(1.7), norm_pdf(-1.7));
    }

    #[test]
    fn cdf_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_relative_eq!(norm_cdf(1.959_964), 0.975, epsilon = 1e-7);
        assert!(norm_cdf(-40.0) < 1e-300);
        for &x in &[0.3, 1.1, 2.5, 5.0, 7.9] {
            assert_relative_eq!(norm_cdf(x) + norm_cdf(-x), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cdf_monotone_on_grid() {
        let mut prev = 0.0;
        for i in 0..=4000 {
            let x = -10.0 + i as f64 * 0.005;
            let c = norm_cdf(x);
            assert!(c >= prev, "cdf decreased at {x}");
            prev = c;
        }
    }

    #[test]
    fn log_cdf_matches_in_overlap_and_is_finite_in_tail() {
        for &x in &[-29.0, -20.0, -5.0, 0.0, 3.0] {
            assert_relative_eq!(log_norm_cdf(x), norm_cdf(x).ln(), max_relative = 1e-12);
        }
        let a = log_norm_cdf(-30.0 + 1e-9);
        let b = log_norm_cdf(-30.0 - 1e-9);
        assert_relative_eq!(a, b, max_relative = 1e-6);
        assert!(log_norm_cdf(-200.0).is_finite());
        assert_relative_eq!(inv_mills(-29.9), inv_mills(-30.1), max_relative = 1e-2);
        for &x in &[-40.0, -29.0, -1.5, 0.0, 2.0, 9.0] {
            let (l, m) = log_norm_cdf_and_mills(x);
            assert_relative_eq!(l, log_norm_cdf(x), max_relative = 1e-14);
            assert_relative_eq!(m, inv_mills(x), max_relative = 1e-14);
        }
    }

    #[test]
    fn quantile_values() {
        assert_eq!(norm_quantile(0.5).unwrap(), 0.0);
        assert_relative_eq!(norm_quantile(0.975).unwrap(), 1.959_964, epsilon = 1e-6);
        assert_relative_eq!(norm_quantile(0.15).unwrap(), -1.036_433, epsilon = 1e-6);
        assert!(norm_quantile(0.0).is_err());
        assert!(norm_quantile(1.0).is_err());
        assert!(norm_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let q = norm_quantile(p).unwrap();
            assert!((norm_cdf(q) - p).abs() <= 1e-10, "p={p}");
        }
        for &p in &[1e-12, 1e-8, 1.0 - 1e-9] {
            let q = norm_quantile(p).unwrap();
            assert!((norm_cdf(q) - p).abs() <= 1e-10 * p.max(1e-3));
        }
    }

    #[test]
    fn mvn_standard_values() {
        let c1 = CovMatrix::identity(1);
        assert_relative_eq!(mvn_logpdf(&[0.0], &[0.0], &c1).unwrap(), -0.918_938_5, epsilon = 1e-7);
        let c2 = CovMatrix::identity(2);
        assert_relative_eq!(
            mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &c2).unwrap(),
            -1.837_877_1,
            epsilon = 1e-7
        );
    }

    #[test]
    fn mvn_matches_explicit_two_by_two_inverse() {
        let (a, b, d) = (1.0, 0.5, 1.0);
        let cov = CovMatrix::from_rows(2, &[a, b, b, d]).unwrap();
        let det = a * d - b * b;
        let (x0, x1) = (1.0, 1.0);
        let quad = (d * x0 * x0 - 2.0 * b * x0 * x1 + a * x1 * x1) / det;
        let oracle = -LN_2PI - 0.5 * det.ln() - 0.5 * quad;
        assert_relative_eq!(
            mvn_logpdf(&[x0, x1], &[0.0, 0.0], &cov).unwrap(),
            oracle,
            epsilon = 1e-10
        );
    }

    #[test]
    fn mvn_reports_offending_pivot() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        // PSD but singular: accepted as a covariance, rejected by the density.
        let cov = CovMatrix::new(m).unwrap();
        match mvn_logpdf(&[0.0; 3], &[0.0; 3], &cov) {
            Err(Error::Singular { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn covmatrix_rejects_asymmetric_and_indefinite() {
        assert!(CovMatrix::from_rows(2, &[1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(CovMatrix::from_rows(2, &[1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(CovMatrix::from_rows(2, &[1.0, 1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn conditional_of_diagonal_is_marginal() {
        let cov = CovMatrix::from_rows(3, &[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 4.0]).unwrap();
        let c = conditional_gaussian(&[1.0, 2.0, 3.0], &cov, 1, &[5.0, -7.0]).unwrap();
        assert_relative_eq!(c.mean, 2.0);
        assert_relative_eq!(c.variance, 3.0);
    }

    #[test]
    fn conditional_bivariate_textbook() {
        let rho = 0.6;
        let cov = CovMatrix::from_rows(2, &[1.0, rho, rho, 1.0]).unwrap();
        let (m1, m2, y) = (0.3, -0.2, 1.4);
        let c = conditional_gaussian(&[m1, m2], &cov, 0, &[y]).unwrap();
        assert_relative_eq!(c.mean, m1 + rho * (y - m2), epsilon = 1e-14);
        assert_relative_eq!(c.variance, 1.0 - rho * rho, epsilon = 1e-14);
    }

    #[test]
    fn conditional_bivariate_against_numerical_integration() {
        // E[X | Y=y] and Var[X | Y=y] by quadrature of the joint density in x.
        let rho = -0.45;
        let cov = CovMatrix::from_rows(2, &[1.0, rho, rho, 1.0]).unwrap();
        let (m1, m2, y) = (0.5, 1.0, 0.2);
        let dens = GaussianDensity::new(&[m1, m2], &cov).unwrap();
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let h = 1e-3;
        let mut x = m1 - 10.0;
        while x <= m1 + 10.0 {
            let w = dens.logpdf(&[x, y]).unwrap().exp();
            z += w;
            s1 += w * x;
            s2 += w * x * x;
            x += h;
        }
        let mean = s1 / z;
        let var = s2 / z - mean * mean;
        let c = conditional_gaussian(&[m1, m2], &cov, 0, &[y]).unwrap();
        assert_relative_eq!(c.mean, mean, epsilon = 1e-8);
        assert_relative_eq!(c.variance, var, epsilon = 1e-8);
    }

    #[test]
    fn conditional_sem_block_against_dense_solve() {
        // diag(θ) + λλᵀ with λ = (0.5, 0.7, 0.6), θ = 1 - λ².
        let lam = [0.5, 0.7, 0.6];
        let mut rows = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rows[i * 3 + j] = lam[i] * lam[j] + if i == j { 1.0 - lam[i] * lam[i] } else { 0.0 };
            }
        }
        let cov = CovMatrix::from_rows(3, &rows).unwrap();
        let c = conditional_gaussian(&[0.1, 0.2, 0.3], &cov, 0, &[1.0, -0.5]).unwrap();
        let v = cov.matrix();
        let block = v.view((1, 1), (2, 2)).into_owned();
        let inv = block.try_inverse().unwrap();
        let cross = v.view((0, 1), (1, 2)).into_owned();
        let coef = &cross * &inv;
        let mean = 0.1 + coef[(0, 0)] * (1.0 - 0.2) + coef[(0, 1)] * (-0.5 - 0.3);
        let var = v[(0, 0)] - (&coef * cross.transpose())[(0, 0)];
        assert_relative_eq!(c.mean, mean, epsilon = 1e-10);
        assert_relative_eq!(c.variance, var, epsilon = 1e-10);
    }

    #[test]
    fn singular_observed_block_is_an_error() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 0.5, 1.0, 1.0]);
        let cov = CovMatrix::new(m).unwrap();
        assert!(matches!(
            conditional_gaussian(&[0.0; 3], &cov, 0, &[0.0, 0.0]),
            Err(Error::Singular { .. })
        ));
    }
}
