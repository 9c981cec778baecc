//! Arm-stratified nonparametric bootstrap with percentile intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Smallest accepted number of replicates.
pub const MIN_REPLICATES: usize = 100;
/// Failure share above which a result is flagged unreliable.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Successful replicate estimates in replicate order.
    pub estimates: Vec<f64>,
    /// Estimate on the full data.
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub n_failed: usize,
}

impl BootstrapResult {
    /// Summarizes replicate outcomes; `None` marks a failed replicate.
    pub fn from_replicates(point: f64, draws: &[Option<f64>], alpha: f64) -> Self {
        let estimates: Vec<f64> = draws.iter().flatten().copied().collect();
        let n_failed = draws.len() - estimates.len();
        let (se, ci_low, ci_high) = if estimates.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mut sorted = estimates.clone();
            sorted.sort_by(f64::total_cmp);
            (
                sample_sd(&estimates),
                quantile_sorted(&sorted, alpha / 2.0),
                quantile_sorted(&sorted, 1.0 - alpha / 2.0),
            )
        };
        Self {
            estimates,
            point,
            se,
            ci_low,
            ci_high,
            alpha,
            replicates: draws.len(),
            n_failed,
        }
    }

    pub fn wald_statistic(&self) -> f64 {
        self.point / self.se
    }

    pub fn unreliable(&self) -> bool {
        self.n_failed as f64 > MAX_FAILED_SHARE * self.replicates as f64
    }
}

/// Sample standard deviation (denominator `m − 1`); zero for one value.
pub fn sample_sd(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / m;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Precision of a candidate relative to the saturated estimator, in subjects.
pub fn effective_sample_size(var_candidate: f64, var_saturated: f64, n: usize) -> Result<f64> {
    if !(var_candidate > 0.0 && var_saturated > 0.0) {
        return Err(Error::Domain(format!(
            "variances must be positive (got {var_candidate} and {var_saturated})"
        )));
    }
    Ok(n as f64 * var_saturated / var_candidate)
}

pub(crate) fn check_settings(b: usize, alpha: f64) -> Result<()> {
    if b < MIN_REPLICATES {
        return Err(Error::Config(format!(
            "at least {MIN_REPLICATES} bootstrap replicates are required (got {b})"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// Row indices of replicate `b`: each arm resampled to its own size.
pub fn resample_rows(ds: &TrialDataset, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = stream(seed, &[tag::BOOTSTRAP, b as u64]);
    let mut rows = Vec::with_capacity(ds.n());
    for members in ds.arm_indices() {
        for _ in 0..members.len() {
            rows.push(members[rng.gen_range(0..members.len())]);
        }
    }
    rows
}

/// Bootstrap of an arbitrary estimator applied to resampled datasets.
pub fn bootstrap_with<F>(ds: &TrialDataset, b: usize, alpha: f64, seed: u64, estimator: F) -> Result<BootstrapResult>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    check_settings(b, alpha)?;
    let point = estimator(ds)?;
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let rep = ds.select(&resample_rows(ds, seed, r)).ok()?;
            estimator(&rep).ok().filter(|v| v.is_finite())
        })
        .collect();
    Ok(BootstrapResult::from_replicates(point, &draws, alpha))
}
