//! SEM log-likelihood.
//!
//! [`sem_loglik`] evaluates the observed-data likelihood subject by subject
//! with the generic Gaussian routines. [`Evaluator`] is the fast path used by
//! the optimizer: continuous endpoints enter only through per-arm means and
//! the pooled within-arm scatter, and the gradient is analytic.

use nalgebra::DMatrix;

use crate::data::TrialDataset;
use crate::dist::{
    conditional_gaussian, log_norm_cdf, log_norm_cdf_and_mills, norm_pdf, CovMatrix, GaussianDensity,
    LN_2PI,
};
use crate::error::{Error, Result};

use super::{implied_moments, SemLayout, SemParams};

/// Observed-data log-likelihood; `-∞` where the implied covariance is not
/// positive definite or a categorical observation has zero probability.
pub fn sem_loglik(params: &SemParams, ds: &TrialDataset) -> f64 {
    if params.validate().is_err() || params.layout != SemLayout::for_dataset(ds) {
        return f64::NEG_INFINITY;
    }
    reference_loglik(params, ds).unwrap_or(f64::NEG_INFINITY)
}

fn reference_loglik(params: &SemParams, ds: &TrialDataset) -> Result<f64> {
    let p = params.layout.p;
    let mut total = 0.0;
    if !params.layout.is_categorical() {
        for arm in 0..2u8 {
            let (mean, cov) = implied_moments(params, arm);
            let dens = GaussianDensity::new(&mean, &cov)?;
            for i in (0..ds.n()).filter(|&i| ds.arm(i) == arm) {
                total += dens.logpdf(ds.row(i))?;
            }
        }
        return Ok(total);
    }

    let cuts = params.cutpoints();
    for arm in 0..2u8 {
        let (mean, cov) = implied_moments(params, arm);
        let sec_cov = CovMatrix::new(cov.matrix().view((1, 1), (p - 1, p - 1)).into_owned())?;
        let sec = GaussianDensity::new(&mean[1..], &sec_cov)?;
        for i in (0..ds.n()).filter(|&i| ds.arm(i) == arm) {
            let row = ds.row(i);
            total += sec.logpdf(&row[1..])?;
            let c = conditional_gaussian(&mean, &cov, 0, &row[1..])?;
            let sd = c.variance.sqrt();
            let level = row[0] as usize;
            let lo = if level == 0 { f64::NEG_INFINITY } else { cuts[level - 1] };
            let hi = cuts.get(level).copied().unwrap_or(f64::INFINITY);
            total += log_interval((lo - c.mean) / sd, (hi - c.mean) / sd);
        }
    }
    Ok(total)
}

/// `ln(Φ(u) − Φ(l))` without cancellation in either tail.
fn log_interval(l: f64, u: f64) -> f64 {
    if l == f64::NEG_INFINITY {
        log_norm_cdf(u)
    } else if u == f64::INFINITY {
        log_norm_cdf(-l)
    } else if l > 0.0 {
        let (a, b) = (log_norm_cdf(-l), log_norm_cdf(-u));
        a + (-(b - a).exp()).ln_1p()
    } else {
        let (a, b) = (log_norm_cdf(u), log_norm_cdf(l));
        a + (-(b - a).exp()).ln_1p()
    }
}

/// Log-likelihood and its gradient with respect to the free parameters in
/// natural coordinates (order given by [`SemLayout`]).
pub fn sem_loglik_gradient(params: &SemParams, ds: &TrialDataset) -> Result<(f64, Vec<f64>)> {
    if params.layout != SemLayout::for_dataset(ds) {
        return Err(Error::Domain("parameter layout does not match the dataset".into()));
    }
    params.validate()?;
    let p = ds.n_endpoints();
    let rows: Vec<usize> = (0..ds.n()).collect();
    let cols: Vec<usize> = (params.layout.first_continuous()..p).collect();
    let stats = Suff::from_rows(ds, &rows, &cols);
    let ev = Evaluator::new(ds, &rows, stats, &vec![0.0; p], &vec![1.0; p]);
    let mut g = vec![0.0; params.layout.n_free()];
    let ll = ev.loglik(params, Some(&mut g));
    Ok((ll, g))
}

/// Per-arm means and pooled within-arm scatter (sum of cross-products,
/// row-major).
#[derive(Debug, Clone)]
pub(crate) struct Suff {
    pub n0: f64,
    pub n1: f64,
    pub mean0: Vec<f64>,
    pub mean1: Vec<f64>,
    pub scatter: Vec<f64>,
}

impl Suff {
    /// Summaries of `cols` over the subjects in `rows` (repeats allowed).
    pub fn from_rows(ds: &TrialDataset, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(ds, rows, cols.len(), |row, c| row[cols[c]])
    }

    /// Summaries of `m` derived columns `val(row, c)`.
    pub fn from_fn(
        ds: &TrialDataset,
        rows: &[usize],
        m: usize,
        val: impl Fn(&[f64], usize) -> f64,
    ) -> Self {
        let mut sums = [vec![0.0; m], vec![0.0; m]];
        let mut counts = [0.0; 2];
        for &i in rows {
            let a = ds.arm(i) as usize;
            let row = ds.row(i);
            counts[a] += 1.0;
            for (c, s) in sums[a].iter_mut().enumerate() {
                *s += val(row, c);
            }
        }
        let mean0: Vec<f64> = sums[0].iter().map(|s| s / counts[0]).collect();
        let mean1: Vec<f64> = sums[1].iter().map(|s| s / counts[1]).collect();
        let mut scatter = vec![0.0; m * m];
        let mut d = vec![0.0; m];
        for &i in rows {
            let mu = if ds.arm(i) == 0 { &mean0 } else { &mean1 };
            let row = ds.row(i);
            for c in 0..m {
                d[c] = val(row, c) - mu[c];
            }
            for r in 0..m {
                for c in 0..=r {
                    scatter[r * m + c] += d[r] * d[c];
                }
            }
        }
        for r in 0..m {
            for c in 0..r {
                scatter[c * m + r] = scatter[r * m + c];
            }
        }
        Self {
            n0: counts[0],
            n1: counts[1],
            mean0,
            mean1,
            scatter,
        }
    }

    pub fn n(&self) -> f64 {
        self.n0 + self.n1
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn s(&self, r: usize, c: usize) -> f64 {
        self.scatter[r * self.dim() + c]
    }

    /// Pooled mean and variance (denominator `n`) of each column.
    pub fn marginal(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let kappa = self.n0 * self.n1 / n;
        (0..self.dim())
            .map(|j| {
                let d = self.mean1[j] - self.mean0[j];
                (
                    (self.n0 * self.mean0[j] + self.n1 * self.mean1[j]) / n,
                    (self.s(j, j) + kappa * d * d) / n,
                )
            })
            .unzip()
    }

    /// The same summaries for `(y - shift)/scale`.
    pub fn standardized(&self, shift: &[f64], scale: &[f64]) -> Self {
        let m = self.dim();
        let mut scatter = self.scatter.clone();
        for r in 0..m {
            for c in 0..m {
                scatter[r * m + c] /= scale[r] * scale[c];
            }
        }
        let tr = |v: &[f64]| (0..m).map(|j| (v[j] - shift[j]) / scale[j]).collect();
        Self {
            n0: self.n0,
            n1: self.n1,
            mean0: tr(&self.mean0),
            mean1: tr(&self.mean1),
            scatter,
        }
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_row_slice(m, m, &self.scatter) / self.n()
    }
}

/// Count, mean and centered scatter of one group of subjects. Groups can
/// be merged and subtracted exactly, which gives cross-validation training
/// sets without another pass over the data.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Moments {
    pub n: f64,
    pub mean: Vec<f64>,
    pub scatter: Vec<f64>,
}

impl Moments {
    pub fn empty(m: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; m],
            scatter: vec![0.0; m * m],
        }
    }

    #[cfg(test)]
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, cols: &[usize]) -> Self {
        let m = cols.len();
        let mut out = Self::empty(m);
        for row in rows.clone() {
            out.n += 1.0;
            for (c, &j) in cols.iter().enumerate() {
                out.mean[c] += row[j];
            }
        }
        if out.n == 0.0 {
            return out;
        }
        out.mean.iter_mut().for_each(|v| *v /= out.n);
        let mut d = vec![0.0; m];
        for row in rows {
            for (c, &j) in cols.iter().enumerate() {
                d[c] = row[j] - out.mean[c];
            }
            for r in 0..m {
                for c in 0..=r {
                    out.scatter[r * m + c] += d[r] * d[c];
                }
            }
        }
        for r in 0..m {
            for c in 0..r {
                out.scatter[c * m + r] = out.scatter[r * m + c];
            }
        }
        out
    }

    /// Moments of `cols` for `k` groups in one pass over `(group, row)`
    /// pairs. Values are accumulated relative to `shift`, which should be a
    /// typical row, to limit cancellation.
    pub fn grouped<'a>(
        items: impl Iterator<Item = (usize, &'a [f64])>,
        cols: &[usize],
        k: usize,
        shift: &[f64],
    ) -> Vec<Self> {
        let m = cols.len();
        let mut counts = vec![0.0; k];
        let mut sums = vec![0.0; k * m];
        let mut cross = vec![0.0; k * m * m];
        let mut d = vec![0.0; m];
        for (g, row) in items {
            counts[g] += 1.0;
            let s = &mut sums[g * m..(g + 1) * m];
            for (c, &j) in cols.iter().enumerate() {
                d[c] = row[j] - shift[c];
                s[c] += d[c];
            }
            let x = &mut cross[g * m * m..(g + 1) * m * m];
            for r in 0..m {
                for c in 0..=r {
                    x[r * m + c] += d[r] * d[c];
                }
            }
        }
        (0..k)
            .map(|g| {
                let n = counts[g];
                if n == 0.0 {
                    return Self::empty(m);
                }
                let s = &sums[g * m..(g + 1) * m];
                let x = &cross[g * m * m..(g + 1) * m * m];
                let mut scatter = vec![0.0; m * m];
                for r in 0..m {
                    for c in 0..=r {
                        let v = x[r * m + c] - s[r] * s[c] / n;
                        scatter[r * m + c] = v;
                        scatter[c * m + r] = v;
                    }
                }
                Self {
                    n,
                    mean: (0..m).map(|c| shift[c] + s[c] / n).collect(),
                    scatter,
                }
            })
            .collect()
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        let m = self.mean.len();
        let n = self.n + sign * other.n;
        if n <= 0.0 {
            return Self::empty(m);
        }
        let mean: Vec<f64> = (0..m)
            .map(|j| (self.n * self.mean[j] + sign * other.n * other.mean[j]) / n)
            .collect();
        // Parallel-axis correction between the result and `other`.
        let (na, nb) = if sign > 0.0 { (self.n, other.n) } else { (n, other.n) };
        let base = if sign > 0.0 { &self.mean } else { &mean };
        let w = na * nb / (na + nb);
        let mut scatter = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                let corr = w * (other.mean[r] - base[r]) * (other.mean[c] - base[c]);
                scatter[r * m + c] =
                    self.scatter[r * m + c] + sign * (other.scatter[r * m + c] + corr);
            }
        }
        Self { n, mean, scatter }
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0.0 {
            return other.clone();
        }
        if other.n == 0.0 {
            return self.clone();
        }
        self.combine(other, 1.0)
    }

    /// Removes a subgroup previously merged into `self`.
    pub fn remove(&self, part: &Self) -> Self {
        if part.n == 0.0 {
            return self.clone();
        }
        self.combine(part, -1.0)
    }
}

impl Suff {
    pub fn from_arms(arm0: &Moments, arm1: &Moments) -> Self {
        Self {
            n0: arm0.n,
            n1: arm1.n,
            mean0: arm0.mean.clone(),
            mean1: arm1.mean.clone(),
            scatter: arm0.scatter.iter().zip(&arm1.scatter).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Gradient blocks of the Gaussian part.
#[derive(Debug, Clone, Default)]
pub(crate) struct GaussGrad {
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: f64,
    pub theta: Vec<f64>,
}

/// Gradient outputs of [`gaussian_kernel`].
pub(crate) struct GradSlices<'a> {
    pub nu: &'a mut [f64],
    pub lambda: &'a mut [f64],
    pub gamma: &'a mut f64,
    pub theta: &'a mut [f64],
}

/// [`gaussian_kernel`] with freshly allocated scratch and outputs.
pub(crate) fn gaussian_part(
    st: &Suff,
    nu: &[f64],
    lambda: &[f64],
    gamma: f64,
    theta: &[f64],
    grad: Option<&mut GaussGrad>,
) -> f64 {
    let m = nu.len();
    let mut ws = vec![0.0; 4 * m];
    match grad {
        None => gaussian_kernel(st, nu, lambda, gamma, theta, &mut ws, None),
        Some(g) => {
            g.nu = vec![0.0; m];
            g.lambda = vec![0.0; m];
            g.theta = vec![0.0; m];
            let out = GradSlices {
                nu: &mut g.nu,
                lambda: &mut g.lambda,
                gamma: &mut g.gamma,
                theta: &mut g.theta,
            };
            gaussian_kernel(st, nu, lambda, gamma, theta, &mut ws, Some(out))
        }
    }
}

/// `ln L` of `n` Gaussian observations with covariance `diag(θ) + λλᵀ` and
/// arm means `ν` and `ν + γλ`, via the Woodbury identity
/// `W = Σ⁻¹ = D⁻¹ − bbᵀ/Q`, `b = D⁻¹λ`, `Q = 1 + λᵀb`. `ws` holds at least
/// `4m` values of scratch.
pub(crate) fn gaussian_kernel(
    st: &Suff,
    nu: &[f64],
    lambda: &[f64],
    gamma: f64,
    theta: &[f64],
    ws: &mut [f64],
    grad: Option<GradSlices<'_>>,
) -> f64 {
    let m = nu.len();
    if theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let (b, rest) = ws.split_at_mut(m);
    let (e0, rest) = rest.split_at_mut(m);
    let (e1, rest) = rest.split_at_mut(m);
    let v = &mut rest[..m];
    let n = st.n();
    let mut q = 0.0;
    let mut be0 = 0.0;
    let mut be1 = 0.0;
    for j in 0..m {
        b[j] = lambda[j] / theta[j];
        e0[j] = st.mean0[j] - nu[j];
        e1[j] = st.mean1[j] - nu[j] - gamma * lambda[j];
        q += lambda[j] * b[j];
        be0 += b[j] * e0[j];
        be1 += b[j] * e1[j];
    }
    let big_q = 1.0 + q;
    // Sb, then v = M'b with M' = S + n0 e0e0ᵀ + n1 e1e1ᵀ.
    let mut bsb = 0.0;
    let mut quad = 0.0;
    let mut log_det = big_q.ln();
    for r in 0..m {
        let row = &st.scatter[r * m..(r + 1) * m];
        v[r] = (0..m).map(|c| row[c] * b[c]).sum();
        bsb += b[r] * v[r];
        quad += (row[r] + st.n0 * e0[r] * e0[r] + st.n1 * e1[r] * e1[r]) / theta[r];
        log_det += theta[r].ln();
    }
    quad -= bsb / big_q;
    quad -= (st.n0 * be0 * be0 + st.n1 * be1 * be1) / big_q;
    let ll = -0.5 * (n * (m as f64 * LN_2PI + log_det) + quad);

    if let Some(g) = grad {
        let mut c = 0.0;
        for j in 0..m {
            v[j] += st.n0 * e0[j] * be0 + st.n1 * e1[j] * be1;
            c += b[j] * v[j];
        }
        // G = −½ (nW − WM'W); only Gλ and diag(G) are needed.
        let mut g_gamma = 0.0;
        for j in 0..m {
            let we0 = e0[j] / theta[j] - b[j] * be0 / big_q;
            let we1 = e1[j] / theta[j] - b[j] * be1 / big_q;
            g.nu[j] = st.n0 * we0 + st.n1 * we1;
            let w_lam = b[j] / big_q;
            let wmw_lam = (v[j] / theta[j] - b[j] * c / big_q) / big_q;
            g.lambda[j] = -(n * w_lam - wmw_lam) + gamma * st.n1 * we1;
            g_gamma += lambda[j] * we1;
            let mpp = st.s(j, j) + st.n0 * e0[j] * e0[j] + st.n1 * e1[j] * e1[j];
            let w_pp = 1.0 / theta[j] - b[j] * b[j] / big_q;
            let wmw_pp = mpp / (theta[j] * theta[j]) - 2.0 * b[j] * v[j] / (big_q * theta[j])
                + b[j] * b[j] * c / (big_q * big_q);
            g.theta[j] = -0.5 * (n * w_pp - wmw_pp);
        }
        *g.gamma = st.n1 * g_gamma;
    }
    ll
}

/// Subject-level data for the categorical primary.
#[derive(Debug, Clone)]
struct CatData {
    arm: Vec<f64>,
    level: Vec<usize>,
    /// Secondaries, row-major `n × (P-1)`, on the evaluator's scale.
    sec: Vec<f64>,
}

/// Likelihood evaluator over precomputed summaries. Continuous columns are
/// transformed to `(y - shift)/scale` once at construction.
#[derive(Debug, Clone)]
pub(crate) struct Evaluator {
    pub layout: SemLayout,
    pub stats: Suff,
    cat: Option<CatData>,
}

impl Evaluator {
    /// `stats` are the standardized summaries of the continuous columns of
    /// the subjects in `rows`.
    pub fn new(ds: &TrialDataset, rows: &[usize], stats: Suff, shift: &[f64], scale: &[f64]) -> Self {
        let layout = SemLayout::for_dataset(ds);
        let cat = layout.is_categorical().then(|| {
            let m = layout.p - 1;
            let mut sec = Vec::with_capacity(rows.len() * m);
            let mut arm = Vec::with_capacity(rows.len());
            let mut level = Vec::with_capacity(rows.len());
            for &i in rows {
                let row = ds.row(i);
                sec.extend((1..layout.p).map(|j| (row[j] - shift[j]) / scale[j]));
                arm.push(ds.arm(i) as f64);
                level.push(row[0] as usize);
            }
            CatData { arm, level, sec }
        });
        Self { layout, stats, cat }
    }

    /// Evaluator for all-continuous data from summaries alone.
    pub fn from_stats(layout: SemLayout, stats: Suff) -> Self {
        debug_assert!(!layout.is_categorical());
        Self {
            layout,
            stats,
            cat: None,
        }
    }

    pub fn n(&self) -> f64 {
        self.stats.n()
    }

    /// Log-likelihood; fills the natural-coordinate gradient when asked.
    pub fn loglik(&self, params: &SemParams, grad: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        let f = l.first_continuous();
        let mut gg = GaussGrad::default();
        let want = grad.is_some();
        let ll_g = gaussian_part(
            &self.stats,
            &params.nu[f..],
            &params.lambda[f..],
            params.gamma,
            &params.theta[f..],
            want.then_some(&mut gg),
        );
        if !ll_g.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut out = grad;
        if let Some(g) = out.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (k, j) in (f..l.p).enumerate() {
                g[l.nu(j)] = gg.nu[k];
                g[l.lambda(j)] = gg.lambda[k];
                g[l.theta(j).unwrap()] = gg.theta[k];
            }
            g[l.gamma()] = gg.gamma;
        }
        match &self.cat {
            None => ll_g,
            Some(cat) => {
                let ll_c = self.primary_part(cat, params, out);
                ll_g + ll_c
            }
        }
    }

    fn primary_part(&self, cat: &CatData, params: &SemParams, grad: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        let m = l.p - 1;
        let nu_s = &params.nu[1..];
        let lam_s = &params.lambda[1..];
        let th_s = &params.theta[1..];
        let (nu1, lam1, gamma) = (params.nu[0], params.lambda[0], params.gamma);
        let w: Vec<f64> = (0..m).map(|j| lam_s[j] / th_s[j]).collect();
        let q: f64 = (0..m).map(|j| lam_s[j] * w[j]).sum();
        let big_q = 1.0 + q;
        let k = lam1 / big_q;
        let sigma = (1.0 + lam1 * lam1 / big_q).sqrt();
        let wnu: f64 = (0..m).map(|j| w[j] * nu_s[j]).sum();
        let cuts = params.cutpoints();
        let nc = cuts.len();

        let want = grad.is_some();
        let (mut sg, mut sga, mut sgs, mut sh) = (0.0, 0.0, 0.0, 0.0);
        let mut sgy = vec![0.0; m];
        let mut dcut = vec![0.0; nc];
        let mut ll = 0.0;
        for i in 0..cat.arm.len() {
            let a = cat.arm[i];
            let y = &cat.sec[i * m..(i + 1) * m];
            let wy: f64 = (0..m).map(|j| w[j] * y[j]).sum();
            let s = wy - wnu - gamma * q * a;
            let mu = nu1 + gamma * lam1 * a + k * s;
            let lev = cat.level[i];
            let lo = if lev == 0 { None } else { Some((cuts[lev - 1] - mu) / sigma) };
            let hi = cuts.get(lev).map(|c| (c - mu) / sigma);
            let (lp, dl, du) = match (lo, hi) {
                // d ln P / d(l) and d ln P / d(u)
                (None, Some(u)) => {
                    let (lp, im) = log_norm_cdf_and_mills(u);
                    (lp, 0.0, im)
                }
                (Some(lw), None) => {
                    let (lp, im) = log_norm_cdf_and_mills(-lw);
                    (lp, -im, 0.0)
                }
                (Some(lw), Some(u)) => {
                    let lp = log_interval(lw, u);
                    let pr = lp.exp();
                    (lp, -norm_pdf(lw) / pr, norm_pdf(u) / pr)
                }
                (None, None) => (0.0, 0.0, 0.0),
            };
            ll += lp;
            if want {
                let lwv = lo.unwrap_or(0.0);
                let uv = hi.unwrap_or(0.0);
                let gi = -(dl + du) / sigma;
                let hi_ = -(dl * lwv + du * uv) / sigma;
                sg += gi;
                sga += gi * a;
                sgs += gi * s;
                sh += hi_;
                for j in 0..m {
                    sgy[j] += gi * y[j];
                }
                if lev < nc {
                    dcut[lev] += du / sigma;
                }
                if lev > 0 {
                    dcut[lev - 1] += dl / sigma;
                }
            }
        }
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        if let Some(g) = grad {
            let q2 = big_q * big_q;
            g[l.nu(0)] += sg;
            g[l.gamma()] += lam1 / big_q * sga;
            g[l.lambda(0)] += gamma * sga + sgs / big_q + sh * lam1 / (big_q * sigma);
            for j in 0..m {
                let (lp, tp) = (lam_s[j], th_s[j]);
                let sgr = sgy[j] - nu_s[j] * sg - gamma * lp * sga;
                g[l.nu(j + 1)] += -k * w[j] * sg;
                g[l.lambda(j + 1)] += k * (sgr / tp - w[j] * gamma * sga)
                    - sgs * 2.0 * lam1 * lp / (q2 * tp)
                    - sh * lam1 * lam1 * lp / (sigma * tp * q2);
                g[l.theta(j + 1).unwrap()] += -k * lp * sgr / (tp * tp)
                    + sgs * lam1 * lp * lp / (q2 * tp * tp)
                    + sh * lam1 * lam1 * lp * lp / (2.0 * sigma * q2 * tp * tp);
            }
            for t in 1..nc {
                g[l.threshold(t - 1)] += dcut[t];
            }
        }
        ll
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EndpointKind, EndpointSpec};
    use crate::dist::norm_cdf;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(kind: EndpointKind, n: usize, seed: u64) -> TrialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 4;
        let mut arm = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            let a = (i % 2) as u8;
            let eta: f64 = rng.sample::<f64, _>(StandardNormal) + 0.4 * a as f64;
            arm.push(a);
            for j in 0..p {
                let y = 0.1 * j as f64 + 0.6 * eta + 0.8 * rng.sample::<f64, _>(StandardNormal);
                let v = if j == 0 {
                    match kind {
                        EndpointKind::Continuous => y,
                        EndpointKind::Binary => f64::from(y > 0.2),
                        EndpointKind::Ordinal { .. } => {
                            (y > -0.3) as u8 as f64 + (y > 0.4) as u8 as f64 + (y > 1.0) as u8 as f64
                        }
                    }
                } else {
                    y
                };
                vals.push(v);
            }
        }
        let mut specs = vec![EndpointSpec::new("y1", kind)];
        specs.extend((2..=p).map(|j| EndpointSpec::continuous(format!("y{j}"))));
        TrialDataset::new(arm, vals, specs).unwrap()
    }

    fn params_for(layout: SemLayout) -> SemParams {
        let p = layout.p;
        let mut theta = vec![0.7, 0.5, 0.9, 1.2];
        if layout.is_categorical() {
            theta[0] = 1.0;
        }
        let thresholds = match layout.n_thresholds() {
            0 => vec![],
            _ => vec![0.7, 1.4],
        };
        SemParams::new(
            layout,
            vec![-0.2, 0.1, 0.3, 0.0][..p].to_vec(),
            vec![0.8, 0.5, -0.4, 0.6][..p].to_vec(),
            0.35,
            theta[..p].to_vec(),
            thresholds,
        )
        .unwrap()
    }

    #[test]
    fn independence_case_matches_univariate_normals() {
        let ds = TrialDataset::new(
            vec![1, 0],
            vec![0.3, -1.2, 2.0, 0.0, 0.0, 0.0],
            (1..=3).map(|j| EndpointSpec::continuous(format!("y{j}"))).collect(),
        )
        .unwrap();
        let s = SemParams::new(
            SemLayout::continuous(3),
            vec![0.1, -1.0, 1.5],
            vec![0.0; 3],
            0.9,
            vec![1.0, 2.0, 0.5],
            vec![],
        )
        .unwrap();
        let uni = |x: f64, m: f64, v: f64| -0.5 * (LN_2PI + v.ln() + (x - m).powi(2) / v);
        let row1 = uni(0.3, 0.1, 1.0) + uni(-1.2, -1.0, 2.0) + uni(2.0, 1.5, 0.5);
        let row2 = uni(0.0, 0.1, 1.0) + uni(0.0, -1.0, 2.0) + uni(0.0, 1.5, 0.5);
        assert_relative_eq!(sem_loglik(&s, &ds), row1 + row2, epsilon = 1e-12);
    }

    #[test]
    fn decoupled_binary_primary_is_bernoulli() {
        let ds = dataset(EndpointKind::Binary, 40, 3);
        let mut s = params_for(SemLayout::for_dataset(&ds));
        s.lambda[0] = 0.0;
        let sec_only = {
            let mut t = 0.0;
            for arm in 0..2u8 {
                let (mean, cov) = implied_moments(&s, arm);
                let sub = CovMatrix::new(cov.matrix().view((1, 1), (3, 3)).into_owned()).unwrap();
                let d = GaussianDensity::new(&mean[1..], &sub).unwrap();
                for i in (0..ds.n()).filter(|&i| ds.arm(i) == arm) {
                    t += d.logpdf(&ds.row(i)[1..]).unwrap();
                }
            }
            t
        };
        let p1 = norm_cdf(s.nu[0]);
        let bern: f64 = ds
            .column(0)
            .map(|y| if y == 1.0 { p1.ln() } else { (1.0 - p1).ln() })
            .sum();
        assert_relative_eq!(sem_loglik(&s, &ds), sec_only + bern, epsilon = 1e-9);
    }

    #[test]
    fn fast_path_agrees_with_reference() {
        for kind in [
            EndpointKind::Continuous,
            EndpointKind::Binary,
            EndpointKind::Ordinal { levels: 4 },
        ] {
            let ds = dataset(kind, 60, 11);
            let s = params_for(SemLayout::for_dataset(&ds));
            let (fast, _) = sem_loglik_gradient(&s, &ds).unwrap();
            assert_relative_eq!(fast, sem_loglik(&s, &ds), epsilon = 1e-9, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for kind in [
            EndpointKind::Continuous,
            EndpointKind::Binary,
            EndpointKind::Ordinal { levels: 4 },
        ] {
            let ds = dataset(kind, 50, 5);
            let s = params_for(SemLayout::for_dataset(&ds));
            let (_, g) = sem_loglik_gradient(&s, &ds).unwrap();
            let x = s.to_free();
            for i in 0..x.len() {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fp = sem_loglik(&SemParams::from_free(s.layout, &xp), &ds);
                let fm = sem_loglik(&SemParams::from_free(s.layout, &xm), &ds);
                let fd = (fp - fm) / (2.0 * h);
                assert!((g[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{kind} coordinate {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn non_positive_variance_is_minus_infinity() {
        let ds = dataset(EndpointKind::Continuous, 10, 1);
        let mut s = params_for(SemLayout::for_dataset(&ds));
        s.theta[1] = -0.1;
        assert_eq!(sem_loglik(&s, &ds), f64::NEG_INFINITY);
    }

    #[test]
    fn moments_merge_and_remove_exactly() {
        let ds = dataset(EndpointKind::Continuous, 40, 2);
        let cols = [0, 1, 2, 3];
        let all = Moments::from_rows((0..40).map(|i| ds.row(i)), &cols);
        let a = Moments::from_rows((0..13).map(|i| ds.row(i)), &cols);
        let b = Moments::from_rows((13..40).map(|i| ds.row(i)), &cols);
        let merged = a.merge(&b);
        let removed = all.remove(&a);
        for k in 0..16 {
            assert_relative_eq!(merged.scatter[k], all.scatter[k], epsilon = 1e-10);
            assert_relative_eq!(removed.scatter[k], b.scatter[k], epsilon = 1e-10);
        }
        for k in 0..4 {
            assert_relative_eq!(removed.mean[k], b.mean[k], epsilon = 1e-12);
        }
        assert_eq!(removed.n, 27.0);
        let shift = ds.row(5)[..4].to_vec();
        let groups = Moments::grouped((0..40).map(|i| (i % 3, ds.row(i))), &cols, 4, &shift);
        assert_eq!(groups[3].n, 0.0);
        for g in 0..3 {
            let direct = Moments::from_rows((0..40).filter(|i| i % 3 == g).map(|i| ds.row(i)), &cols);
            assert_eq!(groups[g].n, direct.n);
            for k in 0..16 {
                assert_relative_eq!(groups[g].scatter[k], direct.scatter[k], epsilon = 1e-10);
            }
            for k in 0..4 {
                assert_relative_eq!(groups[g].mean[k], direct.mean[k], epsilon = 1e-12);
            }
        }
        assert_eq!(Moments::empty(4).merge(&a), a);
    }

    #[test]
    fn tail_interval_is_finite() {
        assert!(log_interval(40.0, 41.0).is_finite());
        assert!(log_interval(-41.0, -40.0).is_finite());
        assert_relative_eq!(log_interval(-1.0, 1.0).exp(), 0.682_689_492_137_086, epsilon = 1e-12);
    }

    #[test]
    fn sign_flip_leaves_likelihood_unchanged() {
        let ds = dataset(EndpointKind::Binary, 30, 9);
        let s = params_for(SemLayout::for_dataset(&ds));
        assert_relative_eq!(sem_loglik(&s, &ds), sem_loglik(&s.flipped(), &ds), epsilon = 1e-9);
    }
}
