//! The four treatment-effect estimators on one dataset, with bootstrap
//! inference for the model averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{
    combine, omega_bic, FoldAssignment, Sample, SuperLearnerWeight, DEFAULT_FOLDS,
    DEFAULT_GRID_STEP,
};
use crate::bootstrap::{check_settings, effective_sample_size, resample_rows, BootstrapResult};
use crate::data::{Estimand, EstimateResult, Flag, Method, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::saturated::{ate_saturated, bic_saturated, fit_saturated, SaturatedFit};
use crate::sem::{
    ate_sem, bic_sem, fit_prepared, predicted_primary_mean, FitOptions, SemFit,
};

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub methods: Vec<Method>,
    pub folds: usize,
    pub grid_step: f64,
    /// Bootstrap replicates for the model-averaging intervals; zero skips
    /// the bootstrap and leaves their SE and interval undefined.
    pub bootstrap_b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            folds: DEFAULT_FOLDS,
            grid_step: DEFAULT_GRID_STEP,
            bootstrap_b: 1000,
            alpha: 0.05,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

impl EstimatorConfig {
    fn needs(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    fn needs_sem(&self) -> bool {
        self.methods.iter().any(|&m| m != Method::Saturated)
    }

    fn point_fit(&self, start: Option<&SemFit>) -> FitOptions {
        FitOptions {
            compute_cov: false,
            start: start.map(SemFit::warm_start),
            ..self.fit.clone()
        }
    }
}

/// Point estimates on one sample.
#[derive(Debug, Clone)]
pub(crate) struct Points {
    pub sat: f64,
    pub sem: Option<f64>,
    pub omega_bic: Option<f64>,
    pub sl: Option<SuperLearnerWeight>,
    pub fit: Option<SemFit>,
}

impl Points {
    pub fn value(&self, m: Method) -> Option<f64> {
        let mix = |w: Option<f64>| Some(combine(w?, self.sem?, self.sat).ok()?.tau_ma);
        match m {
            Method::Saturated => Some(self.sat),
            Method::Sem => self.sem,
            Method::BicMa => mix(self.omega_bic),
            Method::SlMa => mix(self.sl.as_ref().map(|s| s.omega)),
        }
        .filter(|v| v.is_finite())
    }
}

fn sem_ate_point(fit: &SemFit) -> f64 {
    predicted_primary_mean(&fit.params, 1) - predicted_primary_mean(&fit.params, 0)
}

/// Point estimates on the subjects `rows`. `fit`, if already available for
/// exactly these rows, is reused; `warm` seeds any new SEM fit.
fn points_on(
    ds: &TrialDataset,
    rows: Vec<usize>,
    folds: Option<FoldAssignment>,
    cfg: &EstimatorConfig,
    fit: Option<SemFit>,
    warm: Option<&SemFit>,
) -> Points {
    let sample = Sample::new(ds, rows, folds);
    let fit = match fit {
        Some(f) => Some(f),
        None if cfg.needs_sem() => fit_prepared(&sample.prepared(), &cfg.point_fit(warm)).ok(),
        None => None,
    };
    let sat = sample.tau_sat();
    let omega_bic = match &fit {
        Some(f) if cfg.needs(Method::BicMa) => sample
            .saturated_loglik()
            .ok()
            .map(|ll| {
                let n = sample.n();
                let k = crate::saturated::saturated_param_count(ds.n_endpoints(), ds.primary_kind());
                omega_bic(bic_sem(f, n), -2.0 * ll + k as f64 * (n as f64).ln())
            }),
        _ => None,
    };
    let sl = match &fit {
        Some(f) if cfg.needs(Method::SlMa) => {
            sample.super_learner(cfg.grid_step, &cfg.point_fit(None), Some(f)).ok()
        }
        _ => None,
    };
    Points {
        sat,
        sem: fit.as_ref().map(sem_ate_point),
        omega_bic,
        sl,
        fit,
    }
}

fn folds_for(ds: &TrialDataset, rows: &[usize], cfg: &EstimatorConfig, path: &[u64]) -> Result<Option<FoldAssignment>> {
    if !cfg.needs(Method::SlMa) {
        return Ok(None);
    }
    let arms: Vec<u8> = rows.iter().map(|&i| ds.arm(i)).collect();
    FoldAssignment::stratified(&arms, cfg.folds, &mut stream(cfg.seed, path)).map(Some)
}

/// Replicate estimates of every configured method, one vector per method.
fn bootstrap_points(
    ds: &TrialDataset,
    cfg: &EstimatorConfig,
    full_fit: Option<&SemFit>,
) -> Result<Vec<Vec<Option<f64>>>> {
    let reps: Vec<Points> = (0..cfg.bootstrap_b)
        .into_par_iter()
        .map(|b| {
            let rows = resample_rows(ds, cfg.seed, b);
            let folds = folds_for(ds, &rows, cfg, &[tag::BOOTSTRAP, b as u64, tag::FOLDS])?;
            Ok(points_on(ds, rows, folds, cfg, None, full_fit))
        })
        .collect::<Result<_>>()?;
    Ok(cfg
        .methods
        .iter()
        .map(|&m| reps.iter().map(|p| p.value(m)).collect())
        .collect())
}

/// Bootstrap distribution of one method.
pub fn bootstrap(ds: &TrialDataset, method: Method, cfg: &EstimatorConfig) -> Result<BootstrapResult> {
    check_settings(cfg.bootstrap_b, cfg.alpha)?;
    let cfg = EstimatorConfig {
        methods: vec![method],
        ..cfg.clone()
    };
    let rows: Vec<usize> = (0..ds.n()).collect();
    let folds = folds_for(ds, &rows, &cfg, &[tag::FOLDS])?;
    let full = points_on(ds, rows, folds, &cfg, None, None);
    let point = full.value(method).ok_or_else(|| full_data_failure(method))?;
    let draws = bootstrap_points(ds, &cfg, full.fit.as_ref())?;
    Ok(BootstrapResult::from_replicates(point, &draws[0], cfg.alpha))
}

fn full_data_failure(method: Method) -> Error {
    Error::Numerical(format!("{method} estimator failed on the full data"))
}

/// Everything estimated on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Analysis {
    pub n: usize,
    /// One row per configured method, in configuration order.
    pub results: Vec<EstimateResult>,
    /// Effective sample size of each result relative to the saturated
    /// estimator, when both standard errors are positive.
    pub ess: Vec<Option<f64>>,
    pub sem_converged: Option<bool>,
    #[serde(skip)]
    pub sem_fit: Option<SemFit>,
    #[serde(skip)]
    pub saturated: Option<SaturatedFit>,
    #[serde(skip)]
    pub bootstrap: Vec<Option<BootstrapResult>>,
}

/// Runs every configured estimator on `ds`.
pub fn estimate_all(ds: &TrialDataset, cfg: &EstimatorConfig) -> Result<Analysis> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    let any_ma = cfg.methods.iter().any(|m| m.is_model_averaging());
    if any_ma && cfg.bootstrap_b > 0 {
        check_settings(cfg.bootstrap_b, cfg.alpha)?;
    }
    let saturated = fit_saturated(ds)?;
    let sat_result = ate_saturated(&saturated, ds)?;
    let sem_fit = if cfg.needs_sem() {
        Some(crate::sem::fit_sem(ds, &FitOptions { seed: cfg.seed, ..cfg.fit.clone() })?)
    } else {
        None
    };

    let rows: Vec<usize> = (0..ds.n()).collect();
    let folds = folds_for(ds, &rows, cfg, &[tag::FOLDS])?;
    let points = points_on(ds, rows, folds, cfg, sem_fit.clone(), None);
    // BIC for the full data uses the saturated fit's own likelihood.
    let omega_b = sem_fit
        .as_ref()
        .map(|f| omega_bic(bic_sem(f, ds.n()), bic_saturated(&saturated, ds.n())));

    let boot = if any_ma && cfg.bootstrap_b > 0 {
        Some(bootstrap_points(ds, cfg, sem_fit.as_ref())?)
    } else {
        None
    };

    let mut results = Vec::new();
    let mut boots = Vec::new();
    for (mi, &m) in cfg.methods.iter().enumerate() {
        let (r, b) = match m {
            Method::Saturated => (sat_result.clone(), None),
            Method::Sem => (ate_sem(sem_fit.as_ref().expect("fitted"))?, None),
            Method::BicMa | Method::SlMa => {
                let (omega, degraded) = match m {
                    Method::BicMa => (omega_b, false),
                    _ => {
                        let sl = points.sl.as_ref().ok_or_else(|| full_data_failure(m))?;
                        (Some(sl.omega), sl.degraded)
                    }
                };
                let omega = omega.ok_or_else(|| full_data_failure(m))?;
                let mix = combine(omega, points.sem.ok_or_else(|| full_data_failure(m))?, sat_result.estimate)?;
                let mut r = EstimateResult {
                    method: m,
                    estimand: Estimand::Ate,
                    estimate: mix.tau_ma,
                    std_error: f64::NAN,
                    ci_low: f64::NAN,
                    ci_high: f64::NAN,
                    weight_on_sem: Some(omega),
                    flags: Vec::new(),
                };
                if degraded {
                    r.flags.push(Flag::DegradedSuperLearner);
                }
                let b = boot.as_ref().map(|draws| {
                    BootstrapResult::from_replicates(mix.tau_ma, &draws[mi], cfg.alpha)
                });
                if let Some(b) = &b {
                    r.std_error = b.se;
                    r.ci_low = b.ci_low;
                    r.ci_high = b.ci_high;
                    if b.unreliable() {
                        r.flags.push(Flag::Unreliable);
                    }
                }
                (r, b)
            }
        };
        results.push(r);
        boots.push(b);
    }
    let ess = results
        .iter()
        .map(|r| {
            effective_sample_size(r.std_error.powi(2), sat_result.std_error.powi(2), ds.n()).ok()
        })
        .collect();
    Ok(Analysis {
        n: ds.n(),
        results,
        ess,
        sem_converged: sem_fit.as_ref().map(|f| f.converged),
        sem_fit,
        saturated: Some(saturated),
        bootstrap: boots,
    })
}
