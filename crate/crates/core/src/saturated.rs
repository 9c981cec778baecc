//! The standard estimator: maximum likelihood under the saturated joint model,
//! i.e. arm-specific means with a common unrestricted covariance. For a
//! categorical primary the likelihood used for BIC is the general location
//! model: multinomial primary given arm, Gaussian secondaries whose means shift
//! additively with arm and with the observed primary level.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{arm_moments, arm_split, sorted_sum, EndpointKind, Estimand, EstimateResult, Flag, Method, TrialDataset};
use crate::dist::{cholesky, cholesky_solve, CovMatrix, LN_2PI};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturatedFit {
    /// Arm-0 means.
    pub alpha: Vec<f64>,
    /// Arm-1 minus arm-0 means.
    pub beta: Vec<f64>,
    /// Pooled within-arm covariance with denominator `n`.
    pub sigma: CovMatrix,
    pub loglik: f64,
    pub n_params: usize,
}

/// Parameter count of the saturated model.
pub fn saturated_param_count(p: usize, primary: EndpointKind) -> usize {
    match primary.levels() {
        None => 2 * p + p * (p + 1) / 2,
        Some(k) => 2 * (k - 1) + (p - 1) * (k + 1) + (p - 1) * p / 2,
    }
}

pub fn fit_saturated(ds: &TrialDataset) -> Result<SaturatedFit> {
    let p = ds.n_endpoints();
    let n = ds.n();
    let (means, [s0, s1]) = arm_moments(ds);
    let scatter = s0 + s1;
    let sigma_m = scatter / n as f64;
    let alpha = means[0].clone();
    let beta: Vec<f64> = means[1].iter().zip(&means[0]).map(|(a, b)| a - b).collect();

    let primary = ds.primary_kind();
    let loglik = match primary.levels() {
        None => {
            let chol = cholesky(&sigma_m)?;
            let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            -0.5 * n as f64 * (p as f64 * LN_2PI + log_det + p as f64)
        }
        Some(k) => general_location_loglik(ds, k)?,
    };
    let sigma = CovMatrix::new(sigma_m)
        .map_err(|_| Error::Numerical("pooled covariance is not positive semi-definite".into()))?;
    Ok(SaturatedFit {
        alpha,
        beta,
        sigma,
        loglik,
        n_params: saturated_param_count(p, primary),
    })
}

/// Maximized log-likelihood of the general location model for a categorical
/// primary with `k` levels.
fn general_location_loglik(ds: &TrialDataset, k: usize) -> Result<f64> {
    let n = ds.n();
    let p = ds.n_endpoints();
    let mut cell = vec![[0usize; 2]; k];
    for i in 0..n {
        cell[ds.value(i, 0) as usize][ds.arm(i) as usize] += 1;
    }
    let (n0, n1) = ds.arm_counts();
    let arm_n = [n0 as f64, n1 as f64];
    let mut ll = 0.0;
    for c in &cell {
        for a in 0..2 {
            if c[a] > 0 {
                ll += c[a] as f64 * (c[a] as f64 / arm_n[a]).ln();
            }
        }
    }

    // Least squares of the secondaries on intercept, arm and one indicator
    // per observed non-reference level, through normal equations assembled
    // from order-independent sums.
    let dummies: Vec<usize> = (1..k).filter(|&l| cell[l][0] + cell[l][1] > 0).collect();
    let q = 2 + dummies.len();
    let design = |i: usize, j: usize| match j {
        0 => 1.0,
        1 => ds.arm(i) as f64,
        _ => (ds.value(i, 0) as usize == dummies[j - 2]) as u8 as f64,
    };
    let m = p - 1;
    // Centre the responses so the cross-products stay well scaled.
    let mut buf = Vec::with_capacity(n);
    let centre: Vec<f64> = (0..m)
        .map(|j| {
            buf.clear();
            buf.extend((0..n).map(|i| ds.value(i, j + 1)));
            sorted_sum(&mut buf) / n as f64
        })
        .collect();
    let y = |i: usize, j: usize| ds.value(i, j + 1) - centre[j];
    let mut sum = |f: &dyn Fn(usize) -> f64| {
        buf.clear();
        buf.extend((0..n).map(f));
        sorted_sum(&mut buf)
    };
    let xtx = DMatrix::from_fn(q, q, |r, c| sum(&|i| design(i, r) * design(i, c)));
    let xty = DMatrix::from_fn(q, m, |r, c| sum(&|i| design(i, r) * y(i, c)));
    let yty = DMatrix::from_fn(m, m, |r, c| sum(&|i| y(i, r) * y(i, c)));
    let lx = cholesky(&xtx)?;
    let coef = DMatrix::from_columns(
        &(0..m)
            .map(|c| cholesky_solve(&lx, &xty.column(c).into_owned()))
            .collect::<Vec<_>>(),
    );
    let rss = &yty - xty.transpose() * &coef;
    let s = DMatrix::from_fn(m, m, |r, c| 0.5 * (rss[(r, c)] + rss[(c, r)]) / n as f64);
    let chol = cholesky(&s)?;
    let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    ll += -0.5 * n as f64 * (m as f64 * LN_2PI + log_det + m as f64);
    Ok(ll)
}

/// Difference in arm means of the primary with the unpooled two-sample SE.
/// A binary primary uses the plug-in Bernoulli variances instead.
pub fn ate_saturated(fit: &SaturatedFit, ds: &TrialDataset) -> Result<EstimateResult> {
    if ds.primary_kind() == EndpointKind::Binary {
        return ate_saturated_binary(ds);
    }
    let split = arm_split(ds)?;
    let se = (split.cov1[(0, 0)] / split.n1 as f64 + split.cov0[(0, 0)] / split.n0 as f64).sqrt();
    Ok(EstimateResult::wald(
        Method::Saturated,
        Estimand::Ate,
        fit.beta[0],
        se,
    ))
}

/// Difference in sample proportions for a binary primary.
pub fn ate_saturated_binary(ds: &TrialDataset) -> Result<EstimateResult> {
    if ds.primary_kind() != EndpointKind::Binary {
        return Err(Error::Domain(
            "difference in proportions needs a binary primary endpoint".into(),
        ));
    }
    let mut succ = [0.0f64; 2];
    let mut tot = [0.0f64; 2];
    for i in 0..ds.n() {
        let a = ds.arm(i) as usize;
        succ[a] += ds.value(i, 0);
        tot[a] += 1.0;
    }
    let p0 = succ[0] / tot[0];
    let p1 = succ[1] / tot[1];
    let se = (p1 * (1.0 - p1) / tot[1] + p0 * (1.0 - p0) / tot[0]).sqrt();
    let degenerate = [p0, p1].iter().any(|&q| q == 0.0 || q == 1.0);
    let mut r = EstimateResult::wald(Method::Saturated, Estimand::Ate, p1 - p0, se);
    if degenerate {
        r.flags.push(Flag::DegenerateArm);
    }
    Ok(r)
}

pub fn bic_saturated(fit: &SaturatedFit, n: usize) -> f64 {
    -2.0 * fit.loglik + fit.n_params as f64 * (n as f64).ln()
}

/// Saturated-model predictions of the primary per arm (arm means).
#[cfg(test)]
pub(crate) fn primary_arm_means(ds: &TrialDataset) -> [f64; 2] {
    let mut s = [0.0; 2];
    let mut c = [0.0; 2];
    for i in 0..ds.n() {
        let a = ds.arm(i) as usize;
        s[a] += ds.value(i, 0);
        c[a] += 1.0;
    }
    [s[0] / c[0], s[1] / c[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EndpointSpec;
    use crate::dist::mvn_logpdf;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn specs(p: usize) -> Vec<EndpointSpec> {
        (0..p).map(|j| EndpointSpec::continuous(format!("y{}", j + 1))).collect()
    }

    fn random_dataset(n: usize, seed: u64) -> TrialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arm: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let values: Vec<f64> = (0..n * 3).map(|_| rng.gen::<f64>() * 4.0 - 1.0).collect();
        TrialDataset::new(arm, values, specs(3)).unwrap()
    }

    #[test]
    fn shift_gives_unit_effects() {
        let mut values = vec![0.0; 12];
        values.extend(vec![1.0; 12]);
        let arm = [0, 0, 0, 0, 1, 1, 1, 1].to_vec();
        // constant arms are degenerate for the Gaussian likelihood
        let ds = TrialDataset::new(arm, values, specs(3)).unwrap();
        assert!(matches!(fit_saturated(&ds), Err(Error::Singular { .. })));

        let ds = random_dataset(40, 1);
        let mut shifted = ds.values().to_vec();
        for i in 0..ds.n() {
            if ds.arm(i) == 1 {
                for j in 0..3 {
                    shifted[i * 3 + j] = ds.value(i - 1, j) + 1.0;
                }
            }
        }
        let ds2 = TrialDataset::new(ds.arms().to_vec(), shifted, specs(3)).unwrap();
        let fit = fit_saturated(&ds2).unwrap();
        for b in fit.beta {
            assert_relative_eq!(b, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn loglik_matches_direct_density_sum() {
        let ds = random_dataset(50, 7);
        let fit = fit_saturated(&ds).unwrap();
        let mut ll = 0.0;
        for i in 0..ds.n() {
            let mean: Vec<f64> = (0..3)
                .map(|j| fit.alpha[j] + fit.beta[j] * ds.arm(i) as f64)
                .collect();
            ll += mvn_logpdf(ds.row(i), &mean, &fit.sigma).unwrap();
        }
        assert_relative_eq!(fit.loglik, ll, epsilon = 1e-8);
        assert_eq!(fit.n_params, 12);
    }

    #[test]
    fn se_for_unit_variances() {
        // Two-point arms with unit unbiased variance: SE = sqrt(2/50).
        let n = 100;
        let arm: Vec<u8> = (0..n).map(|i| (i >= 50) as u8).collect();
        let mut values = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let v = s * (49.0f64 / 50.0).sqrt();
            values.extend_from_slice(&[v, (i % 5) as f64, (i % 7) as f64]);
        }
        let ds = TrialDataset::new(arm, values, specs(3)).unwrap();
        let fit = fit_saturated(&ds).unwrap();
        let r = ate_saturated(&fit, &ds).unwrap();
        assert_relative_eq!(r.std_error, 0.2, epsilon = 1e-12);
        assert_relative_eq!(r.estimate, 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.ci_low, -r.ci_high, epsilon = 1e-15);
    }

    fn binary_dataset(p0: f64, p1: f64, per_arm: usize) -> TrialDataset {
        let mut arm = Vec::new();
        let mut values = Vec::new();
        for (a, p) in [(0u8, p0), (1u8, p1)] {
            let k = (p * per_arm as f64).round() as usize;
            for i in 0..per_arm {
                arm.push(a);
                values.extend_from_slice(&[(i < k) as u8 as f64, i as f64 * 0.01, (i % 3) as f64]);
            }
        }
        let specs = vec![
            EndpointSpec::new("y1", EndpointKind::Binary),
            EndpointSpec::continuous("y2"),
            EndpointSpec::continuous("y3"),
        ];
        TrialDataset::new(arm, values, specs).unwrap()
    }

    #[test]
    fn difference_in_proportions() {
        let r = ate_saturated_binary(&binary_dataset(0.2, 0.2, 50)).unwrap();
        assert_eq!(r.estimate, 0.0);
        let r = ate_saturated_binary(&binary_dataset(0.152, 0.248, 125)).unwrap();
        // 19/125 and 31/125
        let (p0, p1) = (19.0 / 125.0, 31.0 / 125.0);
        assert_relative_eq!(r.estimate, p1 - p0, epsilon = 1e-15);
        let r = ate_saturated_binary(&binary_dataset(0.0, 1.0, 10)).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.std_error, 0.0);
        assert!(r.flags.contains(&Flag::DegenerateArm));
    }

    #[test]
    fn plug_in_se_for_design_rates() {
        let r = ate_saturated_binary(&binary_dataset(0.15, 0.25, 200)).unwrap();
        assert_relative_eq!(r.estimate, 0.10, epsilon = 1e-15);
        assert_relative_eq!(r.std_error, (0.1275f64 / 200.0 + 0.1875 / 200.0).sqrt(), epsilon = 1e-15);
        // 125 per arm
        let se: f64 = (0.1275f64 / 125.0 + 0.1875 / 125.0).sqrt();
        assert_relative_eq!(se, 0.050200, epsilon = 1e-6);
    }

    #[test]
    fn bic_arithmetic() {
        let ds = random_dataset(30, 3);
        let mut fit = fit_saturated(&ds).unwrap();
        let stored = fit.loglik;
        assert_relative_eq!(
            bic_saturated(&fit, 30),
            -2.0 * stored + 12.0 * 30f64.ln(),
            epsilon = 1e-10
        );
        fit.loglik = 0.0;
        assert_relative_eq!(bic_saturated(&fit, 1), 0.0);
        let b1 = bic_saturated(&fit, 100);
        let b2 = bic_saturated(&fit, 200);
        assert_relative_eq!(b2 - b1, 12.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn binary_param_count() {
        assert_eq!(saturated_param_count(3, EndpointKind::Binary), 11);
        assert_eq!(saturated_param_count(3, EndpointKind::Continuous), 12);
        let fit = fit_saturated(&binary_dataset(0.3, 0.5, 40)).unwrap();
        assert_eq!(fit.n_params, 11);
        assert!(fit.loglik.is_finite());
    }
}
