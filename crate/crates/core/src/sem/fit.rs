//! Maximum-likelihood fitting.
//!
//! Continuous columns are standardized before optimizing and the estimates
//! mapped back afterwards. For all-continuous data `ν` and `γ` are profiled
//! out in closed form, leaving a search over `(λ, ln θ)` only.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};

use crate::data::TrialDataset;
use crate::dist::{cholesky, norm_quantile};
use crate::error::{Error, Result};
use crate::optim::{minimize_from, BfgsOptions, BfgsResult};
use crate::rng::{stream, tag};

use super::likelihood::{gaussian_kernel, Evaluator, GradSlices, Suff};
use super::{SemLayout, SemParams, THETA_FLOOR};

const JITTER_SD: f64 = 0.3;
const HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_evals: usize,
    /// Max-norm gradient tolerance for the per-subject objective on the
    /// standardized scale.
    pub grad_tol: f64,
    /// Jittered starts tried when the deterministic start fails or lands on
    /// the boundary.
    pub restarts: usize,
    pub seed: u64,
    /// Skip the observed information when only the point estimate is needed.
    pub compute_cov: bool,
    /// Optional start tried before the deterministic one.
    pub start: Option<WarmStart>,
}

/// A starting point for [`fit_sem`], typically a fit to similar data.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub params: SemParams,
    /// Optimizer curvature from the fit that produced `params`.
    metric: Option<Vec<f64>>,
}

impl From<SemParams> for WarmStart {
    fn from(params: SemParams) -> Self {
        Self {
            params,
            metric: None,
        }
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_evals: 5000,
            grad_tol: 1e-6,
            restarts: 4,
            seed: 0,
            compute_cov: true,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemFit {
    pub params: SemParams,
    pub loglik: f64,
    /// Inverse observed information over the free parameters in the order of
    /// [`SemLayout::names`]. Rows and columns of boundary variances are zero.
    /// Empty when the fit was run without covariance.
    pub param_cov: DMatrix<f64>,
    pub n_params: usize,
    pub converged: bool,
    /// Some residual variance sits at the lower bound.
    pub boundary: bool,
    /// The observed information was not positive definite and was inverted
    /// by pseudo-inverse.
    pub cov_fallback: bool,
    pub n_evals: usize,
    /// Log-likelihood after each accepted optimizer step of the winning start.
    pub trace: Vec<f64>,
    pub(crate) metric: Vec<f64>,
}

impl SemFit {
    /// Sampling covariance of the named free parameters.
    pub fn cov_of(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.param_cov[(idx[r], idx[c])])
    }

    pub fn has_cov(&self) -> bool {
        self.param_cov.nrows() == self.params.layout.n_free()
    }

    /// Start for refitting perturbed versions of the same data.
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            params: self.params.clone(),
            metric: (!self.metric.is_empty()).then(|| self.metric.clone()),
        }
    }

    /// `-2 ln L + k ln n`.
    pub fn bic(&self, n: usize) -> f64 {
        -2.0 * self.loglik + self.n_params as f64 * (n as f64).ln()
    }
}

/// Dataset summaries on the standardized scale, reusable across fits.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    layout: SemLayout,
    shift: Vec<f64>,
    scale: Vec<f64>,
    ev: Evaluator,
    /// Primary-level proportions and within-arm mean normal scores.
    cat_start: Option<CatStart>,
}

#[derive(Debug, Clone)]
struct CatStart {
    /// Normal-score cutpoints `Φ⁻¹` of cumulative level proportions.
    kappa: Vec<f64>,
    /// Summaries of (normal score, secondaries).
    stats: Suff,
}

impl Prepared {
    pub fn new(ds: &TrialDataset) -> Self {
        let rows: Vec<usize> = (0..ds.n()).collect();
        Self::from_rows(ds, &rows)
    }

    /// Summaries of the subjects in `rows`; repeated indices count repeatedly.
    pub fn from_rows(ds: &TrialDataset, rows: &[usize]) -> Self {
        let layout = SemLayout::for_dataset(ds);
        let p = layout.p;
        let f = layout.first_continuous();
        let n = rows.len() as f64;
        let cols: Vec<usize> = (f..p).collect();
        let raw = Suff::from_rows(ds, rows, &cols);
        if !layout.is_categorical() {
            return Self::from_suff(layout, raw);
        }
        let (mean, var) = raw.marginal();
        let mut shift = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for (k, j) in cols.iter().enumerate() {
            shift[*j] = mean[k];
            if var[k] > 0.0 {
                scale[*j] = var[k].sqrt();
            }
        }
        let stats = raw.standardized(&shift[f..], &scale[f..]);
        let ev = Evaluator::new(ds, rows, stats, &shift, &scale);
        let cat_start = layout.levels.map(|k| {
            let mut counts = vec![0.0; k];
            for &i in rows {
                counts[ds.value(i, 0) as usize] += 1.0;
            }
            // Cumulative proportions, clipped away from 0 and 1 for empty levels.
            let mut acc = 0.0;
            let kappa: Vec<f64> = counts[..k - 1]
                .iter()
                .map(|c| {
                    acc += c;
                    norm_quantile((acc / n).clamp(0.5 / n, 1.0 - 0.5 / n)).unwrap_or(0.0)
                })
                .collect();
            let score: Vec<f64> = (0..k)
                .map(|lev| {
                    let lo = if lev == 0 { f64::NEG_INFINITY } else { kappa[lev - 1] };
                    let hi = kappa.get(lev).copied().unwrap_or(f64::INFINITY);
                    truncated_mean(lo, hi)
                })
                .collect();
            let stats = Suff::from_fn(ds, rows, p, |row, j| {
                if j == 0 {
                    score[row[0] as usize]
                } else {
                    (row[j] - shift[j]) / scale[j]
                }
            });
            CatStart { kappa, stats }
        });
        Self {
            layout,
            shift,
            scale,
            ev,
            cat_start,
        }
    }

    /// All-continuous data given by raw (unstandardized) summaries.
    pub fn from_suff(layout: SemLayout, raw: Suff) -> Self {
        let (shift, var) = raw.marginal();
        let scale: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        let stats = raw.standardized(&shift, &scale);
        Self {
            layout,
            shift,
            scale,
            ev: Evaluator::from_stats(layout, stats),
            cat_start: None,
        }
    }

    pub fn n(&self) -> f64 {
        self.ev.n()
    }

    fn to_std(&self, s: &SemParams) -> SemParams {
        let mut t = s.clone();
        for j in 0..self.layout.p {
            t.nu[j] = (s.nu[j] - self.shift[j]) / self.scale[j];
            t.lambda[j] = s.lambda[j] / self.scale[j];
            if self.layout.theta(j).is_some() {
                t.theta[j] = s.theta[j] / (self.scale[j] * self.scale[j]);
            }
        }
        t
    }

    fn from_std(&self, s: &SemParams) -> SemParams {
        let mut t = s.clone();
        for j in 0..self.layout.p {
            t.nu[j] = self.shift[j] + self.scale[j] * s.nu[j];
            t.lambda[j] = s.lambda[j] * self.scale[j];
            if self.layout.theta(j).is_some() {
                t.theta[j] = s.theta[j] * self.scale[j] * self.scale[j];
            }
        }
        t
    }

    /// Scale factors from standardized to natural free parameters.
    fn free_scale(&self) -> Vec<f64> {
        let l = self.layout;
        let mut v = vec![1.0; l.n_free()];
        for j in 0..l.p {
            v[l.nu(j)] = self.scale[j];
            v[l.lambda(j)] = self.scale[j];
            if let Some(t) = l.theta(j) {
                v[t] = self.scale[j] * self.scale[j];
            }
        }
        v
    }

    /// `-ℓ/n` over unconstrained coordinates.
    fn objective(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let s = SemParams::from_unconstrained(l, u);
        let ll = self.ev.loglik(&s, Some(grad));
        if !ll.is_finite() {
            return f64::INFINITY;
        }
        let n = self.n();
        for j in l.first_continuous()..l.p {
            let t = l.theta(j).unwrap();
            grad[t] *= u[t].exp();
        }
        let nt = l.n_thresholds();
        let mut tail = 0.0;
        for k in (0..nt).rev() {
            let i = l.threshold(k);
            tail += grad[i];
            grad[i] = tail * u[i].exp();
        }
        grad.iter_mut().for_each(|g| *g = -*g / n);
        -ll / n
    }

    /// `(ν̂, γ̂)` maximizing the likelihood for fixed `(λ, θ)`.
    /// Closed-form `(ν̂, γ̂)` given `(λ, θ)`, written into `nu`.
    fn profile_into(&self, lambda: &[f64], theta: &[f64], nu: &mut [f64]) -> f64 {
        let st = &self.ev.stats;
        let mut q = 0.0;
        let mut bd = 0.0;
        for j in 0..lambda.len() {
            let b = lambda[j] / theta[j];
            q += b * lambda[j];
            bd += b * (st.mean1[j] - st.mean0[j]);
        }
        let gamma = if q > 1e-300 { bd / q } else { 0.0 };
        let n = st.n();
        for j in 0..lambda.len() {
            nu[j] = (st.n0 * st.mean0[j] + st.n1 * (st.mean1[j] - gamma * lambda[j])) / n;
        }
        gamma
    }

    fn profile(&self, lambda: &[f64], theta: &[f64]) -> (Vec<f64>, f64) {
        let mut nu = vec![0.0; lambda.len()];
        let gamma = self.profile_into(lambda, theta, &mut nu);
        (nu, gamma)
    }

    /// Profiled `-ℓ/n` over `(λ, ln(θ - floor))`, continuous data only.
    /// `ws` holds at least `9p` values of scratch.
    fn profiled_objective(&self, z: &[f64], grad: &mut [f64], ws: &mut [f64]) -> f64 {
        let p = self.layout.p;
        let lambda = &z[..p];
        let (theta, rest) = ws.split_at_mut(p);
        let (nu, rest) = rest.split_at_mut(p);
        let (g_nu, rest) = rest.split_at_mut(p);
        let (g_lambda, rest) = rest.split_at_mut(p);
        let (g_theta, rest) = rest.split_at_mut(p);
        for j in 0..p {
            theta[j] = THETA_FLOOR + z[p + j].exp();
        }
        let gamma = self.profile_into(lambda, theta, nu);
        let mut g_gamma = 0.0;
        let out = GradSlices {
            nu: g_nu,
            lambda: g_lambda,
            gamma: &mut g_gamma,
            theta: g_theta,
        };
        let ll = gaussian_kernel(&self.ev.stats, nu, lambda, gamma, theta, rest, Some(out));
        if !ll.is_finite() {
            return f64::INFINITY;
        }
        let n = self.n();
        for j in 0..p {
            grad[j] = -g_lambda[j] / n;
            grad[p + j] = -g_theta[j] * z[p + j].exp() / n;
        }
        -ll / n
    }

    fn profiled_to_params(&self, z: &[f64]) -> SemParams {
        let p = self.layout.p;
        let lambda = z[..p].to_vec();
        let theta: Vec<f64> = z[p..].iter().map(|u| THETA_FLOOR + u.exp()).collect();
        let (nu, gamma) = self.profile(&lambda, &theta);
        SemParams {
            nu,
            lambda,
            gamma,
            theta,
            thresholds: vec![],
            layout: self.layout,
        }
    }

    /// Deterministic start on the standardized scale from the leading
    /// principal component of the pooled within-arm covariance.
    fn pca_start(&self) -> SemParams {
        let st = self.cat_start.as_ref().map_or(&self.ev.stats, |c| &c.stats);
        let p = self.layout.p;
        let cov = st.cov_matrix();
        let eig = SymmetricEigen::new(cov.clone());
        let lead = eig.eigenvalues.imax();
        let ev = eig.eigenvalues[lead].max(0.0);
        let mut lambda: Vec<f64> = (0..p).map(|j| eig.eigenvectors[(j, lead)] * ev.sqrt()).collect();
        if lambda[self.layout.first_continuous()] < 0.0 {
            lambda.iter_mut().for_each(|v| *v = -*v);
        }
        let mut theta: Vec<f64> = (0..p).map(|j| (cov[(j, j)] - lambda[j] * lambda[j]).max(0.05)).collect();
        let d: Vec<f64> = (0..p).map(|j| st.mean1[j] - st.mean0[j]).collect();
        let ll: f64 = lambda.iter().map(|v| v * v).sum();
        let mut gamma = if ll > 0.0 {
            lambda.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / ll
        } else {
            0.0
        };
        let mut nu = st.mean0.clone();
        let mut thresholds = vec![];
        if let Some(cs) = &self.cat_start {
            // Rescale the normal score so its residual variance is 1 and
            // shift it so the first cut sits at 0.
            let c = 1.0 / theta[0].sqrt();
            lambda[0] *= c;
            nu[0] = c * (nu[0] - cs.kappa[0]);
            thresholds = cs.kappa[1..].iter().map(|k| c * (k - cs.kappa[0])).collect();
            theta[0] = 1.0;
            // Guard against empty levels collapsing the cut increments.
            let mut prev = 0.0;
            for t in thresholds.iter_mut() {
                *t = t.max(prev + 1e-3);
                prev = *t;
            }
        } else if ll == 0.0 {
            gamma = 0.0;
        }
        SemParams {
            nu,
            lambda,
            gamma,
            theta,
            thresholds,
            layout: self.layout,
        }
    }

    /// Runs BFGS from a standardized start. Returns the standardized
    /// estimate and the optimizer result.
    fn run(&self, start: &SemParams, metric: Option<&[f64]>, opts: &FitOptions) -> (SemParams, BfgsResult) {
        let bopts = BfgsOptions {
            max_evals: opts.max_evals,
            grad_tol: opts.grad_tol,
        };
        if self.layout.is_categorical() {
            let u = start.to_unconstrained();
            let r = minimize_from(|u, g| self.objective(u, g), &u, metric, bopts);
            (SemParams::from_unconstrained(self.layout, &r.x), r)
        } else {
            let p = self.layout.p;
            let u = start.to_unconstrained();
            let mut z = start.lambda.clone();
            z.extend_from_slice(&u[2 * p + 1..]);
            let mut ws = vec![0.0; 9 * p];
            let r = minimize_from(|z, g| self.profiled_objective(z, g, &mut ws), &z, metric, bopts);
            (self.profiled_to_params(&r.x), r)
        }
    }

    fn is_boundary(&self, s: &SemParams) -> bool {
        let l = self.layout;
        (l.first_continuous()..l.p).any(|j| s.theta[j] - THETA_FLOOR < THETA_FLOOR)
    }

    fn jitter(&self, base: &SemParams, seed: u64, r: usize) -> SemParams {
        let mut rng = stream(seed, &[tag::JITTER, r as u64]);
        let nd = Normal::new(0.0, JITTER_SD).unwrap();
        let mut u = base.to_unconstrained();
        for v in u.iter_mut() {
            *v += nd.sample(&mut rng);
        }
        SemParams::from_unconstrained(self.layout, &u)
    }
}

/// `E[Z | lo < Z < hi]` for standard normal `Z`.
fn truncated_mean(lo: f64, hi: f64) -> f64 {
    use crate::dist::{norm_cdf, norm_pdf};
    let mass = norm_cdf(hi) - norm_cdf(lo);
    if mass <= 0.0 {
        return if lo.is_finite() { lo } else { hi };
    }
    (norm_pdf(lo) - norm_pdf(hi)) / mass
}

struct Attempt {
    params: SemParams,
    result: BfgsResult,
}

/// Maximum-likelihood fit of the one-factor SEM.
pub fn fit_sem(ds: &TrialDataset, opts: &FitOptions) -> Result<SemFit> {
    fit_prepared(&Prepared::new(ds), opts)
}

pub(crate) fn fit_prepared(prep: &Prepared, opts: &FitOptions) -> Result<SemFit> {
    let mut evals = 0;
    let mut best: Option<Attempt> = None;
    let mut consider = |params: SemParams, result: BfgsResult, evals: &mut usize| -> bool {
        *evals += result.n_evals;
        let ok = result.converged && !prep.is_boundary(&params);
        let better = match &best {
            None => true,
            Some(b) => {
                (result.converged && !b.result.converged)
                    || (result.converged == b.result.converged && result.f < b.result.f)
            }
        };
        if better {
            best = Some(Attempt { params, result });
        }
        ok
    };

    let mut done = false;
    if let Some(ws) = &opts.start {
        if ws.params.layout == prep.layout && ws.params.validate().is_ok() {
            let (s, r) = prep.run(&prep.to_std(&ws.params), ws.metric.as_deref(), opts);
            done = consider(s, r, &mut evals);
        }
    }
    if !done {
        let det = prep.pca_start();
        let (s, r) = prep.run(&det, None, opts);
        done = consider(s, r, &mut evals);
        if !done {
            for r in 0..opts.restarts {
                let (s, res) = prep.run(&prep.jitter(&det, opts.seed, r), None, opts);
                consider(s, res, &mut evals);
            }
        }
    }

    let Attempt { params, result } = best.expect("at least one start is always run");
    let n = prep.n();
    let log_jac: f64 = prep.scale.iter().map(|s| s.ln()).sum();
    let loglik = -result.f * n - n * log_jac;
    let std_params = params.canonical();
    if !result.converged {
        return Err(Error::NonConvergence {
            evals,
            loglik,
            best: Box::new(prep.from_std(&std_params)),
        });
    }
    let boundary = prep.is_boundary(&std_params);
    let (param_cov, cov_fallback) = if opts.compute_cov {
        observed_cov(prep, &std_params)?
    } else {
        (DMatrix::zeros(0, 0), false)
    };
    let trace = result.trace.iter().map(|f| -f * n - n * log_jac).collect();
    Ok(SemFit {
        params: prep.from_std(&std_params),
        loglik,
        param_cov,
        n_params: prep.layout.n_free(),
        converged: true,
        boundary,
        cov_fallback,
        n_evals: evals,
        trace,
        metric: result.inv_hessian,
    })
}

/// Inverse observed information, by central differences of the analytic
/// gradient on the unconstrained scale, mapped to natural coordinates.
fn observed_cov(prep: &Prepared, s: &SemParams) -> Result<(DMatrix<f64>, bool)> {
    let l = prep.layout;
    let k = l.n_free();
    let u0 = s.to_unconstrained();
    let n = prep.n();
    let active: Vec<usize> = (0..k)
        .filter(|&i| {
            !(l.first_continuous()..l.p).any(|j| l.theta(j) == Some(i) && s.theta[j] - THETA_FLOOR < THETA_FLOOR)
        })
        .collect();
    let m = active.len();
    let mut h = DMatrix::zeros(m, m);
    let mut gp = vec![0.0; k];
    let mut gm = vec![0.0; k];
    for (c, &i) in active.iter().enumerate() {
        let mut u = u0.clone();
        u[i] = u0[i] + HESSIAN_STEP;
        let fp = prep.objective(&u, &mut gp);
        u[i] = u0[i] - HESSIAN_STEP;
        let fm = prep.objective(&u, &mut gm);
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::Numerical("objective not finite next to the optimum".into()));
        }
        for (r, &j) in active.iter().enumerate() {
            // Per-subject objective: information is n times its Hessian.
            h[(r, c)] = n * (gp[j] - gm[j]) / (2.0 * HESSIAN_STEP);
        }
    }
    let info = (&h + h.transpose()) * 0.5;
    let (inv, fallback) = match cholesky(&info) {
        Ok(_) => match info.clone().try_inverse() {
            Some(inv) => (inv, false),
            None => (pseudo_inverse(&info), true),
        },
        Err(_) => (pseudo_inverse(&info), true),
    };

    // Jacobian of natural (standardized) coordinates w.r.t. unconstrained.
    let mut jac = DMatrix::zeros(k, m);
    let nt = l.n_thresholds();
    for (c, &i) in active.iter().enumerate() {
        if i < 2 * l.p + 1 {
            jac[(i, c)] = 1.0;
        } else if i < 2 * l.p + 1 + l.n_theta() {
            jac[(i, c)] = u0[i].exp();
        } else {
            let kk = i - l.threshold(0);
            for t in kk..nt {
                jac[(l.threshold(t), c)] = u0[i].exp();
            }
        }
    }
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(prep.free_scale()));
    let j = scale * jac;
    let cov = &j * inv * j.transpose();
    Ok(((&cov + cov.transpose()) * 0.5, fallback))
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let tol = eig.eigenvalues.amax() * 1e-10;
    let d = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EndpointKind, EndpointSpec};
    use crate::sem::{sem_loglik, sem_loglik_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn factor_data(n: usize, kind: EndpointKind, seed: u64) -> TrialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lam = [0.7, 0.6, 0.5, 0.8];
        let mut arm = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            let a = (i % 2) as u8;
            let eta = 0.5 * a as f64 + rng.sample::<f64, _>(StandardNormal);
            arm.push(a);
            for (j, l) in lam.iter().enumerate() {
                let y = 2.0 + j as f64 + l * eta * (1.0 + j as f64) + rng.sample::<f64, _>(StandardNormal) * 0.7;
                vals.push(if j == 0 {
                    match kind {
                        EndpointKind::Continuous => y,
                        EndpointKind::Binary => f64::from(y > 2.3),
                        EndpointKind::Ordinal { .. } => (y > 1.5) as u8 as f64 + (y > 2.5) as u8 as f64,
                    }
                } else {
                    y
                });
            }
        }
        let mut specs = vec![EndpointSpec::new("y1", kind)];
        specs.extend((2..=4).map(|j| EndpointSpec::continuous(format!("y{j}"))));
        TrialDataset::new(arm, vals, specs).unwrap()
    }

    #[test]
    fn fit_reaches_a_stationary_point() {
        for kind in [
            EndpointKind::Continuous,
            EndpointKind::Binary,
            EndpointKind::Ordinal { levels: 3 },
        ] {
            let ds = factor_data(400, kind, 21);
            let fit = fit_sem(&ds, &FitOptions::default()).unwrap();
            assert!(fit.converged);
            assert!(fit.params.lambda[fit.params.layout.first_continuous()] >= 0.0);
            let (ll, g) = sem_loglik_gradient(&fit.params, &ds).unwrap();
            assert!((ll - fit.loglik).abs() < 1e-8 * ll.abs(), "{kind}: {ll} vs {}", fit.loglik);
            assert!((ll - sem_loglik(&fit.params, &ds)).abs() < 1e-7 * ll.abs());
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(gmax < 1e-2, "{kind}: gradient {g:?}");
            assert_eq!(fit.param_cov.nrows(), fit.n_params);
            for i in 0..fit.n_params {
                assert!(fit.param_cov[(i, i)] > 0.0);
            }
        }
    }

    #[test]
    fn profiled_gamma_is_exact() {
        let ds = factor_data(300, EndpointKind::Continuous, 2);
        let fit = fit_sem(&ds, &FitOptions { compute_cov: false, ..Default::default() }).unwrap();
        let (_, g) = sem_loglik_gradient(&fit.params, &ds).unwrap();
        let l = fit.params.layout;
        assert!(g[l.gamma()].abs() < 1e-8 * ds.n() as f64);
        assert!(fit.param_cov.is_empty());
    }

    #[test]
    fn warm_start_reproduces_the_fit() {
        let ds = factor_data(300, EndpointKind::Binary, 8);
        let a = fit_sem(&ds, &FitOptions::default()).unwrap();
        let b = fit_sem(&ds, &FitOptions { start: Some(a.warm_start()), ..Default::default() }).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-6);
        assert!(b.n_evals < a.n_evals.max(10));
    }

    #[test]
    fn trace_is_nondecreasing() {
        let ds = factor_data(200, EndpointKind::Ordinal { levels: 3 }, 4);
        let fit = fit_sem(&ds, &FitOptions::default()).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn truncated_means() {
        assert!((truncated_mean(f64::NEG_INFINITY, f64::INFINITY)).abs() < 1e-15);
        assert!((truncated_mean(0.0, f64::INFINITY) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
