//! One-factor structural equation model for a primary and secondary
//! endpoints.
//!
//! Every endpoint loads on a single latent variable `η ~ N(γA, 1)` and
//! treatment acts only through `η`:
//!
//! ```text
//! Y | η  ~ N(ν + λη, diag(θ))        ⇒   Y | A ~ N(ν + γλA, diag(θ) + λλᵀ)
//! ```
//!
//! A binary or ordinal primary is the thresholded version of a latent
//! Gaussian `Y₁*` with residual variance fixed at 1 and first cut at 0.

mod estimands;
mod fit;
mod likelihood;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{EndpointKind, TrialDataset};
use crate::dist::CovMatrix;
use crate::error::{Error, Result};

pub use estimands::{
    ate_sem, ate_sem_binary, ate_sem_continuous, ate_sem_ordinal, concordance, delta_variance,
    level_probabilities, predicted_primary_mean, probit_coefficient,
};
pub use fit::{fit_sem, FitOptions, SemFit, WarmStart};
pub(crate) use fit::{fit_prepared, Prepared};
pub use likelihood::{sem_loglik, sem_loglik_gradient};
pub(crate) use likelihood::{Moments, Suff};

/// Lower bound on residual variances (Heywood handling).
pub const THETA_FLOOR: f64 = 1e-6;

/// Shape of the free-parameter vector for a given endpoint configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemLayout {
    pub p: usize,
    /// Level count of a categorical primary; `None` for all-continuous data.
    pub levels: Option<usize>,
}

impl SemLayout {
    pub fn for_dataset(ds: &TrialDataset) -> Self {
        Self {
            p: ds.n_endpoints(),
            levels: ds.primary_kind().levels(),
        }
    }

    pub fn continuous(p: usize) -> Self {
        Self { p, levels: None }
    }

    pub fn is_categorical(&self) -> bool {
        self.levels.is_some()
    }

    /// Index of the first endpoint with a free residual variance.
    pub fn first_continuous(&self) -> usize {
        usize::from(self.is_categorical())
    }

    pub fn n_theta(&self) -> usize {
        self.p - self.first_continuous()
    }

    pub fn n_thresholds(&self) -> usize {
        self.levels.map_or(0, |k| k - 2)
    }

    /// Number of free parameters: `3P + 1` when all endpoints are continuous.
    pub fn n_free(&self) -> usize {
        2 * self.p + 1 + self.n_theta() + self.n_thresholds()
    }

    pub fn nu(&self, j: usize) -> usize {
        j
    }

    pub fn lambda(&self, j: usize) -> usize {
        self.p + j
    }

    pub fn gamma(&self) -> usize {
        2 * self.p
    }

    /// Free-vector index of `θ_j`; `None` for a fixed latent residual.
    pub fn theta(&self, j: usize) -> Option<usize> {
        let f = self.first_continuous();
        (j >= f).then(|| 2 * self.p + 1 + (j - f))
    }

    pub fn threshold(&self, k: usize) -> usize {
        2 * self.p + 1 + self.n_theta() + k
    }

    /// Human-readable parameter names in free-vector order.
    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.n_free());
        v.extend((1..=self.p).map(|j| format!("nu{j}")));
        v.extend((1..=self.p).map(|j| format!("lambda{j}")));
        v.push("gamma".into());
        v.extend((self.first_continuous() + 1..=self.p).map(|j| format!("theta{j}")));
        v.extend((1..=self.n_thresholds()).map(|k| format!("a{k}")));
        v
    }
}

/// SEM parameters on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemParams {
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: f64,
    /// Residual variances; the entry of a categorical primary is fixed at 1.
    pub theta: Vec<f64>,
    /// Free cutpoints `a₁ < … < a_{K-2}` of an ordinal primary (the cut
    /// between levels 0 and 1 is fixed at 0).
    pub thresholds: Vec<f64>,
    pub layout: SemLayout,
}

impl SemParams {
    pub fn new(
        layout: SemLayout,
        nu: Vec<f64>,
        lambda: Vec<f64>,
        gamma: f64,
        theta: Vec<f64>,
        thresholds: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            nu,
            lambda,
            gamma,
            theta,
            thresholds,
            layout,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        if self.nu.len() != l.p || self.lambda.len() != l.p || self.theta.len() != l.p {
            return Err(Error::Domain("SEM parameter vectors must have length P".into()));
        }
        if self.thresholds.len() != l.n_thresholds() {
            return Err(Error::Domain(format!(
                "expected {} free thresholds, got {}",
                l.n_thresholds(),
                self.thresholds.len()
            )));
        }
        for j in 0..l.p {
            if l.theta(j).is_some() && !(self.theta[j] > 0.0) {
                return Err(Error::Domain(format!("theta{} must be positive", j + 1)));
            }
            if l.theta(j).is_none() && self.theta[j] != 1.0 {
                return Err(Error::Domain(
                    "latent residual variance of a categorical endpoint is fixed at 1".into(),
                ));
            }
        }
        let cuts = self.cutpoints();
        if cuts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("thresholds must be strictly increasing from 0".into()));
        }
        Ok(())
    }

    /// Cutpoints of the categorical primary, starting with the fixed 0.
    pub fn cutpoints(&self) -> Vec<f64> {
        if self.layout.is_categorical() {
            std::iter::once(0.0).chain(self.thresholds.iter().copied()).collect()
        } else {
            Vec::new()
        }
    }

    pub fn to_free(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut v = Vec::with_capacity(l.n_free());
        v.extend_from_slice(&self.nu);
        v.extend_from_slice(&self.lambda);
        v.push(self.gamma);
        v.extend_from_slice(&self.theta[l.first_continuous()..]);
        v.extend_from_slice(&self.thresholds);
        v
    }

    pub fn from_free(layout: SemLayout, v: &[f64]) -> Self {
        let p = layout.p;
        let f = layout.first_continuous();
        let mut theta = vec![1.0; p];
        theta[f..].copy_from_slice(&v[2 * p + 1..2 * p + 1 + layout.n_theta()]);
        Self {
            nu: v[..p].to_vec(),
            lambda: v[p..2 * p].to_vec(),
            gamma: v[2 * p],
            theta,
            thresholds: v[2 * p + 1 + layout.n_theta()..].to_vec(),
            layout,
        }
    }

    /// Unconstrained coordinates: `ln(θ - floor)` and log cut increments.
    pub(crate) fn to_unconstrained(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut v = Vec::with_capacity(l.n_free());
        v.extend_from_slice(&self.nu);
        v.extend_from_slice(&self.lambda);
        v.push(self.gamma);
        v.extend(
            self.theta[l.first_continuous()..]
                .iter()
                .map(|t| (t - THETA_FLOOR).max(1e-300).ln()),
        );
        let mut prev = 0.0;
        for &t in &self.thresholds {
            v.push((t - prev).max(1e-300).ln());
            prev = t;
        }
        v
    }

    pub(crate) fn from_unconstrained(layout: SemLayout, u: &[f64]) -> Self {
        let p = layout.p;
        let nt = layout.n_theta();
        let mut v = u.to_vec();
        for x in &mut v[2 * p + 1..2 * p + 1 + nt] {
            *x = THETA_FLOOR + x.exp();
        }
        let mut acc = 0.0;
        for x in &mut v[2 * p + 1 + nt..] {
            acc += x.exp();
            *x = acc;
        }
        Self::from_free(layout, &v)
    }

    /// Joint sign flip `(γ, λ) → (−γ, −λ)`; leaves the likelihood unchanged.
    pub fn flipped(&self) -> Self {
        let mut s = self.clone();
        s.gamma = -s.gamma;
        s.lambda.iter_mut().for_each(|v| *v = -*v);
        s
    }

    /// Applies the sign convention `λ ≥ 0` on the first continuous endpoint.
    pub fn canonical(&self) -> Self {
        if self.lambda[self.layout.first_continuous()] < 0.0 {
            self.flipped()
        } else {
            self.clone()
        }
    }

    /// `(ν + γλ·arm, diag(θ) + λλᵀ)`; a categorical primary is on its
    /// latent scale with unit residual variance.
    pub fn implied_moments(&self, arm: u8) -> (Vec<f64>, CovMatrix) {
        implied_moments(self, arm)
    }
}

/// Observed-data mean and covariance given the arm.
pub fn implied_moments(params: &SemParams, arm: u8) -> (Vec<f64>, CovMatrix) {
    let p = params.layout.p;
    let a = arm as f64;
    let mean = (0..p)
        .map(|j| params.nu[j] + params.gamma * params.lambda[j] * a)
        .collect();
    let m = DMatrix::from_fn(p, p, |i, j| {
        params.lambda[i] * params.lambda[j] + if i == j { params.theta[i] } else { 0.0 }
    });
    // diag(θ) + λλᵀ is PSD by construction whenever θ > 0.
    let cov = CovMatrix::new(m).unwrap_or_else(|_| CovMatrix::identity(p));
    (mean, cov)
}

/// `-2 ln L + k ln n`.
pub fn bic_sem(fit: &SemFit, n: usize) -> f64 {
    fit.bic(n)
}

/// Parameter count used by BIC.
pub fn sem_param_count(p: usize, primary: EndpointKind) -> usize {
    SemLayout {
        p,
        levels: primary.levels(),
    }
    .n_free()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sim_a_params() -> SemParams {
        let lambda = vec![0.5, 0.7, 0.6];
        let theta = lambda.iter().map(|l| 1.0 - l * l).collect();
        SemParams::new(SemLayout::continuous(3), vec![0.0; 3], lambda, 0.5, theta, vec![]).unwrap()
    }

    #[test]
    fn moments_of_sim_a_design() {
        let s = sim_a_params();
        let (m0, c) = s.implied_moments(0);
        let (m1, _) = s.implied_moments(1);
        assert_relative_eq!(c.get(0, 1), 0.35, epsilon = 1e-15);
        let diff: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        for (d, e) in diff.iter().zip([0.25, 0.35, 0.30]) {
            assert_relative_eq!(*d, e, epsilon = 1e-15);
        }
        for j in 0..3 {
            assert_relative_eq!(c.get(j, j), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn no_factor_and_null_effect() {
        let mut s = sim_a_params();
        s.lambda = vec![0.0; 3];
        let (m0, c) = s.implied_moments(0);
        let (m1, _) = s.implied_moments(1);
        assert_eq!(m0, m1);
        assert_eq!(c.get(0, 1), 0.0);
        assert_relative_eq!(c.get(1, 1), 0.51);
        let mut s = sim_a_params();
        s.gamma = 0.0;
        assert_eq!(s.implied_moments(0).0, s.implied_moments(1).0);
    }

    #[test]
    fn free_vector_round_trips() {
        let layout = SemLayout {
            p: 4,
            levels: Some(4),
        };
        assert_eq!(layout.n_free(), 2 * 4 + 1 + 3 + 2);
        assert_eq!(layout.names().len(), layout.n_free());
        let s = SemParams::new(
            layout,
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.9, -0.3, 0.5, 0.6],
            -0.2,
            vec![1.0, 0.5, 0.6, 0.7],
            vec![0.8, 1.9],
        )
        .unwrap();
        let back = SemParams::from_free(layout, &s.to_free());
        assert_eq!(back, s);
        let back = SemParams::from_unconstrained(layout, &s.to_unconstrained());
        for (a, b) in back.to_free().iter().zip(s.to_free()) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert_eq!(s.cutpoints(), vec![0.0, 0.8, 1.9]);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(sem_param_count(3, EndpointKind::Continuous), 10);
        assert_eq!(sem_param_count(5, EndpointKind::Continuous), 16);
        assert_eq!(sem_param_count(3, EndpointKind::Binary), 9);
        assert_eq!(sem_param_count(3, EndpointKind::Ordinal { levels: 4 }), 11);
    }

    #[test]
    fn validation() {
        let l = SemLayout::continuous(3);
        assert!(SemParams::new(l, vec![0.0; 3], vec![0.0; 3], 0.0, vec![1.0, 0.0, 1.0], vec![]).is_err());
        let l = SemLayout {
            p: 3,
            levels: Some(4),
        };
        assert!(SemParams::new(l, vec![0.0; 3], vec![0.0; 3], 0.0, vec![1.0; 3], vec![0.5, 0.4]).is_err());
        assert!(SemParams::new(l, vec![0.0; 3], vec![0.0; 3], 0.0, vec![2.0, 1.0, 1.0], vec![0.4, 0.5]).is_err());
    }

    #[test]
    fn canonical_sign() {
        let s = sim_a_params().flipped();
        assert!(s.lambda[0] < 0.0);
        let c = s.canonical();
        assert!(c.lambda[0] > 0.0);
        assert_eq!(c.gamma * c.lambda[0], s.gamma * s.lambda[0]);
    }
}
