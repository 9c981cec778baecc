use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EstimateResult, Method, TrialDataset, Z_975};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, EstimatorConfig};
use crate::rng::{derive, stream, tag};
use crate::sem::FitOptions;

use super::SimScenario;

#[derive(Debug, Clone)]
pub struct McConfig {
    pub reps: usize,
    pub methods: Vec<Method>,
    /// Bootstrap replicates per dataset for the model-averaging estimators.
    /// Zero skips the bootstrap; their coverage and rejection rates are
    /// then undefined.
    pub bootstrap_b: usize,
    pub seed: u64,
    /// Identifies the cell within a sweep so cells draw independent data.
    pub cell: u64,
    pub folds: usize,
    pub grid_step: f64,
    pub alpha: f64,
    pub fit: FitOptions,
}

impl Default for McConfig {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        Self {
            reps: 1000,
            methods: e.methods,
            bootstrap_b: 1000,
            seed: 0,
            cell: 0,
            folds: e.folds,
            grid_step: e.grid_step,
            alpha: e.alpha,
            fit: e.fit,
        }
    }
}

/// Outcome of one estimator on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub omega: Option<f64>,
    pub reject: bool,
    pub covered: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Replicates with a usable estimate.
    pub n_ok: usize,
    pub failures: usize,
    pub bias: f64,
    /// Standard deviation of the estimates (denominator: replicate count).
    pub se: f64,
    pub rmse: f64,
    /// Averages over replicates with a finite standard error; NaN when
    /// there are none.
    pub mean_std_error: f64,
    pub coverage: f64,
    pub rejection: f64,
    pub mean_omega: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub scenario: SimScenario,
    pub truth: f64,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    /// Rejection rate of the unadjusted two-sample test on each endpoint.
    pub endpoint_rejection: Vec<f64>,
}

impl MonteCarloSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Two-sample z-test with unpooled variances on endpoint `j`.
fn two_sample_rejects(ds: &TrialDataset, j: usize) -> bool {
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let mut cnt = [0.0; 2];
    for i in 0..ds.n() {
        let a = ds.arm(i) as usize;
        let v = ds.value(i, j);
        sum[a] += v;
        sq[a] += v * v;
        cnt[a] += 1.0;
    }
    let var = |a: usize| (sq[a] - sum[a] * sum[a] / cnt[a]) / (cnt[a] - 1.0);
    let diff = sum[1] / cnt[1] - sum[0] / cnt[0];
    let se = (var(0) / cnt[0] + var(1) / cnt[1]).sqrt();
    se > 0.0 && (diff / se).abs() > Z_975
}

struct Replicate {
    records: Vec<ReplicateRecord>,
    endpoint_reject: Vec<bool>,
}

fn record(rep: usize, method: Method, r: Option<&EstimateResult>, truth: f64) -> ReplicateRecord {
    match r {
        Some(r) if r.estimate.is_finite() => ReplicateRecord {
            rep,
            method,
            estimate: r.estimate,
            std_error: r.std_error,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            omega: r.weight_on_sem,
            reject: r.rejects_null(),
            covered: r.covers(truth),
            failed: false,
        },
        _ => ReplicateRecord {
            rep,
            method,
            estimate: f64::NAN,
            std_error: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            omega: None,
            reject: false,
            covered: false,
            failed: true,
        },
    }
}

fn run_replicate(scenario: &SimScenario, cfg: &McConfig, rep: usize) -> Result<Replicate> {
    let mut rng = stream(cfg.seed, &[tag::CELL, cfg.cell, tag::DATA, rep as u64]);
    let ds = scenario.generate(&mut rng)?;
    let seed = derive(cfg.seed, &[tag::CELL, cfg.cell, rep as u64]);
    let ecfg = EstimatorConfig {
        methods: cfg.methods.clone(),
        folds: cfg.folds,
        grid_step: cfg.grid_step,
        bootstrap_b: cfg.bootstrap_b,
        alpha: cfg.alpha,
        seed,
        fit: FitOptions {
            seed,
            ..cfg.fit.clone()
        },
    };
    let results = match estimate_all(&ds, &ecfg) {
        Ok(a) => a.results,
        // The SEM failed on this dataset; the saturated estimate survives.
        Err(_) if cfg.methods.contains(&Method::Saturated) => {
            let only = EstimatorConfig {
                methods: vec![Method::Saturated],
                ..ecfg
            };
            estimate_all(&ds, &only).map(|a| a.results).unwrap_or_default()
        }
        Err(_) => Vec::new(),
    };
    let truth = scenario.truth();
    let records = cfg
        .methods
        .iter()
        .map(|&m| record(rep, m, results.iter().find(|r| r.method == m), truth))
        .collect();
    Ok(Replicate {
        records,
        endpoint_reject: (0..ds.n_endpoints()).map(|j| two_sample_rejects(&ds, j)).collect(),
    })
}

fn summarize(method: Method, recs: &[&ReplicateRecord], truth: f64) -> MethodSummary {
    let ok: Vec<&ReplicateRecord> = recs.iter().copied().filter(|r| !r.failed).collect();
    let mean = |set: &[&ReplicateRecord], f: &dyn Fn(&ReplicateRecord) -> f64| {
        set.iter().map(|r| f(r)).sum::<f64>() / set.len() as f64
    };
    let centre = mean(&ok, &|r| r.estimate);
    let inferred: Vec<&ReplicateRecord> = ok.iter().copied().filter(|r| r.std_error.is_finite()).collect();
    let omega = !ok.is_empty() && ok.iter().all(|r| r.omega.is_some());
    MethodSummary {
        method,
        n_ok: ok.len(),
        failures: recs.len() - ok.len(),
        bias: centre - truth,
        se: mean(&ok, &|r| (r.estimate - centre).powi(2)).sqrt(),
        rmse: mean(&ok, &|r| (r.estimate - truth).powi(2)).sqrt(),
        mean_std_error: mean(&inferred, &|r| r.std_error),
        coverage: mean(&inferred, &|r| r.covered as u8 as f64),
        rejection: mean(&inferred, &|r| r.reject as u8 as f64),
        mean_omega: omega.then(|| mean(&ok, &|r| r.omega.unwrap_or(f64::NAN))),
    }
}

/// Simulates `cfg.reps` datasets from `scenario` and evaluates every method.
/// Returns the summary and the per-replicate records in replicate order.
pub fn run_monte_carlo(
    scenario: &SimScenario,
    cfg: &McConfig,
) -> Result<(MonteCarloSummary, Vec<ReplicateRecord>)> {
    if cfg.reps == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    if cfg.bootstrap_b > 0 && cfg.methods.iter().any(|m| m.is_model_averaging()) {
        crate::bootstrap::check_settings(cfg.bootstrap_b, cfg.alpha)?;
    }
    scenario.correlation()?;
    let reps: Vec<Replicate> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(scenario, cfg, rep))
        .collect::<Result<_>>()?;

    let truth = scenario.truth();
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let recs: Vec<&ReplicateRecord> = reps.iter().map(|r| &r.records[k]).collect();
            summarize(m, &recs, truth)
        })
        .collect();
    let p = reps[0].endpoint_reject.len();
    let endpoint_rejection = (0..p)
        .map(|j| reps.iter().filter(|r| r.endpoint_reject[j]).count() as f64 / cfg.reps as f64)
        .collect();
    let records = reps.into_iter().flat_map(|r| r.records).collect();
    Ok((
        MonteCarloSummary {
            scenario: *scenario,
            truth,
            reps: cfg.reps,
            seed: cfg.seed,
            methods,
            endpoint_rejection,
        },
        records,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Design, Hypothesis};
    use approx::assert_relative_eq;

    #[test]
    fn single_replicate_degenerates() {
        let sc = SimScenario::new(Design::A, Hypothesis::Alternative, 0.35, 250);
        let cfg = McConfig {
            reps: 1,
            methods: vec![Method::Saturated, Method::Sem],
            ..McConfig::default()
        };
        let (s, recs) = run_monte_carlo(&sc, &cfg).unwrap();
        assert_eq!(recs.len(), 2);
        for m in &s.methods {
            assert_eq!(m.se, 0.0);
            assert!(m.coverage == 0.0 || m.coverage == 1.0);
            assert!(m.mean_omega.is_none());
        }
    }

    #[test]
    fn rmse_decomposes_and_rates_are_bounded() {
        let sc = SimScenario::new(Design::B1, Hypothesis::Alternative, 1.5, 200);
        let cfg = McConfig {
            reps: 30,
            methods: vec![Method::Saturated, Method::Sem, Method::BicMa],
            bootstrap_b: 100,
            seed: 3,
            ..McConfig::default()
        };
        let (s, _) = run_monte_carlo(&sc, &cfg).unwrap();
        for m in &s.methods {
            assert_relative_eq!(m.rmse.powi(2), m.bias.powi(2) + m.se.powi(2), epsilon = 1e-10);
            assert!((0.0..=1.0).contains(&m.coverage) && (0.0..=1.0).contains(&m.rejection));
        }
        let w = s.method(Method::BicMa).unwrap().mean_omega.unwrap();
        assert!((0.0..=1.0).contains(&w));
        let again = run_monte_carlo(&sc, &cfg).unwrap().0;
        assert_eq!(s, again);
    }

    #[test]
    fn bootstrap_size_is_checked_unless_skipped() {
        let sc = SimScenario::new(Design::A, Hypothesis::Null, 0.35, 100);
        let cfg = McConfig {
            reps: 2,
            methods: vec![Method::SlMa],
            bootstrap_b: 50,
            ..McConfig::default()
        };
        assert!(matches!(run_monte_carlo(&sc, &cfg), Err(Error::Config(_))));
        let skip = McConfig { bootstrap_b: 0, ..cfg };
        let (s, _) = run_monte_carlo(&sc, &skip).unwrap();
        let m = &s.methods[0];
        assert_eq!(m.n_ok, 2);
        assert!(m.coverage.is_nan() && m.mean_omega.is_some());
    }

    #[test]
    fn infeasible_cell_is_a_scenario_error() {
        let sc = SimScenario::new(Design::A, Hypothesis::Alternative, 0.8, 100);
        let cfg = McConfig {
            reps: 2,
            methods: vec![Method::Saturated],
            ..McConfig::default()
        };
        assert!(matches!(run_monte_carlo(&sc, &cfg), Err(Error::Scenario(_))));
    }
}
