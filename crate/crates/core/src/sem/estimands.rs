//! Treatment-effect estimands implied by a fitted SEM, with delta-method
//! standard errors.

use nalgebra::DMatrix;

use crate::data::{Estimand, EstimateResult, Flag, Method};
use crate::dist::{norm_cdf, norm_pdf};
use crate::error::{Error, Result};

use super::{SemFit, SemParams};

/// `gᵀ C g`.
pub fn delta_variance(grad: &[f64], cov: &DMatrix<f64>) -> f64 {
    let k = grad.len();
    let mut v = 0.0;
    for r in 0..k {
        for c in 0..k {
            v += grad[r] * cov[(r, c)] * grad[c];
        }
    }
    v
}

fn finish(fit: &SemFit, estimand: Estimand, estimate: f64, var: Option<f64>) -> EstimateResult {
    let se = var.map_or(f64::NAN, |v| v.max(0.0).sqrt());
    let r = EstimateResult::wald(Method::Sem, estimand, estimate, se);
    if fit.boundary {
        r.with_flags([Flag::Boundary])
    } else {
        r
    }
}

/// Delta-method variance for a gradient over the given free-parameter indices.
fn sparse_variance(fit: &SemFit, idx: &[usize], grad: &[f64]) -> Option<f64> {
    fit.has_cov().then(|| delta_variance(grad, &fit.cov_of(idx)))
}

/// Numerical gradient of `f` over the free parameters listed in `idx`.
fn numeric_grad(params: &SemParams, idx: &[usize], f: impl Fn(&SemParams) -> f64) -> Vec<f64> {
    let x0 = params.to_free();
    idx.iter()
        .map(|&i| {
            let h = 1e-6 * x0[i].abs().max(1.0);
            let mut x = x0.clone();
            x[i] = x0[i] + h;
            let fp = f(&SemParams::from_free(params.layout, &x));
            x[i] = x0[i] - h;
            let fm = f(&SemParams::from_free(params.layout, &x));
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn require_categorical(p: &SemParams, what: &str) -> Result<()> {
    if p.layout.is_categorical() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} requires a binary or ordinal primary endpoint")))
    }
}

/// Probabilities of each primary level in one arm, from the marginal latent
/// distribution `N(ν₁ + γλ₁a, 1 + λ₁²)`.
pub fn level_probabilities(p: &SemParams, arm: u8) -> Vec<f64> {
    let sd = (1.0 + p.lambda[0] * p.lambda[0]).sqrt();
    let m = p.nu[0] + p.gamma * p.lambda[0] * arm as f64;
    let cuts = p.cutpoints();
    let cdf: Vec<f64> = cuts.iter().map(|c| norm_cdf((c - m) / sd)).collect();
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0.0;
    for c in cdf {
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    out
}

/// Model-implied mean of the primary endpoint in one arm: `ν₁ + γλ₁a` for a
/// continuous primary, the success probability for a binary one, and the
/// expected level code for an ordinal one.
pub fn predicted_primary_mean(p: &SemParams, arm: u8) -> f64 {
    match p.layout.levels {
        None => p.nu[0] + p.gamma * p.lambda[0] * arm as f64,
        Some(2) => {
            let sd = (1.0 + p.lambda[0] * p.lambda[0]).sqrt();
            norm_cdf((p.nu[0] + p.gamma * p.lambda[0] * arm as f64) / sd)
        }
        Some(_) => level_probabilities(p, arm)
            .iter()
            .enumerate()
            .map(|(k, q)| k as f64 * q)
            .sum(),
    }
}

/// `γ̂λ̂₁` with variance `(λ̂₁, γ̂) Cov(γ̂, λ̂₁) (λ̂₁, γ̂)ᵀ`.
pub fn ate_sem_continuous(fit: &SemFit) -> Result<EstimateResult> {
    let p = &fit.params;
    if p.layout.is_categorical() {
        return Err(Error::Domain("continuous ATE requires a continuous primary endpoint".into()));
    }
    let l = p.layout;
    let est = p.gamma * p.lambda[0];
    let var = sparse_variance(fit, &[l.gamma(), l.lambda(0)], &[p.lambda[0], p.gamma]);
    Ok(finish(fit, Estimand::Ate, est, var))
}

/// Difference in success probabilities,
/// `Φ((ν₁+γλ₁)/√(1+λ₁²)) − Φ(ν₁/√(1+λ₁²))`.
pub fn ate_sem_binary(fit: &SemFit) -> Result<EstimateResult> {
    let p = &fit.params;
    if p.layout.levels != Some(2) {
        return Err(Error::Domain("binary ATE requires a binary primary endpoint".into()));
    }
    let l = p.layout;
    let (g, nu, lam) = (p.gamma, p.nu[0], p.lambda[0]);
    let s = (1.0 + lam * lam).sqrt();
    let z1 = (nu + g * lam) / s;
    let z0 = nu / s;
    let est = norm_cdf(z1) - norm_cdf(z0);
    let s3 = s * s * s;
    let jac = [
        norm_pdf(z1) * lam / s,
        (norm_pdf(z1) - norm_pdf(z0)) / s,
        norm_pdf(z1) * (g / s - (nu + g * lam) * lam / s3) + norm_pdf(z0) * nu * lam / s3,
    ];
    let var = sparse_variance(fit, &[l.gamma(), l.nu(0), l.lambda(0)], &jac);
    Ok(finish(fit, Estimand::Ate, est, var))
}

/// Difference in expected level codes of an ordinal primary.
pub fn ate_sem_ordinal(fit: &SemFit) -> Result<EstimateResult> {
    let p = &fit.params;
    if !matches!(p.layout.levels, Some(k) if k > 2) {
        return Err(Error::Domain("ordinal ATE requires an ordinal primary endpoint".into()));
    }
    let f = |q: &SemParams| predicted_primary_mean(q, 1) - predicted_primary_mean(q, 0);
    let idx = latent_index(p);
    let var = fit.has_cov().then(|| delta_variance(&numeric_grad(p, &idx, f), &fit.cov_of(&idx)));
    Ok(finish(fit, Estimand::Ate, f(p), var))
}

/// ATE on the scale of the primary endpoint.
pub fn ate_sem(fit: &SemFit) -> Result<EstimateResult> {
    match fit.params.layout.levels {
        None => ate_sem_continuous(fit),
        Some(2) => ate_sem_binary(fit),
        Some(_) => ate_sem_ordinal(fit),
    }
}

/// Free parameters the primary's marginal distribution depends on.
fn latent_index(p: &SemParams) -> Vec<usize> {
    let l = p.layout;
    let mut idx = vec![l.nu(0), l.lambda(0), l.gamma()];
    idx.extend((0..l.n_thresholds()).map(|k| l.threshold(k)));
    idx
}

/// `γ̂λ̂₁/√(1+λ̂₁²)`: the arm shift of `Y₁*` in units of its conditional SD.
pub fn probit_coefficient(fit: &SemFit) -> Result<EstimateResult> {
    let p = &fit.params;
    require_categorical(p, "the probit coefficient")?;
    let l = p.layout;
    let (g, lam) = (p.gamma, p.lambda[0]);
    let s = (1.0 + lam * lam).sqrt();
    let est = g * lam / s;
    let var = sparse_variance(fit, &[l.gamma(), l.lambda(0)], &[lam / s, g / (s * s * s)]);
    Ok(finish(fit, Estimand::ProbitCoefficient, est, var))
}

fn concordance_value(p: &SemParams) -> f64 {
    let p1 = level_probabilities(p, 1);
    let p0 = level_probabilities(p, 0);
    let mut below = 0.0;
    let mut c = 0.0;
    for k in 0..p1.len() {
        c += p1[k] * (below + 0.5 * p0[k]);
        below += p0[k];
    }
    c
}

/// `Pr(Y₁ > Y₀) + ½ Pr(Y₁ = Y₀)` for independent draws from the two arms.
pub fn concordance(fit: &SemFit) -> Result<EstimateResult> {
    let p = &fit.params;
    require_categorical(p, "the concordance probability")?;
    let idx = latent_index(p);
    let var = fit
        .has_cov()
        .then(|| delta_variance(&numeric_grad(p, &idx, concordance_value), &fit.cov_of(&idx)));
    Ok(finish(fit, Estimand::Concordance, concordance_value(p), var))
}
