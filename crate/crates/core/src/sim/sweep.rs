use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Method;
use crate::error::{Error, Result};
use crate::sem::FitOptions;

use super::{run_monte_carlo, Design, Hypothesis, McConfig, MonteCarloSummary, ReplicateRecord, SimScenario};

fn default_n() -> usize {
    250
}
fn default_reps() -> usize {
    1000
}
fn default_b() -> usize {
    1000
}
fn default_folds() -> usize {
    crate::averaging::DEFAULT_FOLDS
}
fn default_step() -> f64 {
    crate::averaging::DEFAULT_GRID_STEP
}
fn default_alpha() -> f64 {
    0.05
}
fn default_hypothesis() -> Hypothesis {
    Hypothesis::Alternative
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// One design evaluated over a grid of shape values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scenario: Design,
    #[serde(default = "default_hypothesis")]
    pub hypothesis: Hypothesis,
    pub grid: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_methods")]
    pub estimators: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_b", rename = "bootstrap_B", alias = "bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_step")]
    pub grid_step: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sweeps: Vec<SweepSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SweepFile {
    Many { sweeps: Vec<SweepSpec> },
    One(SweepSpec),
}

impl SweepConfig {
    /// Parses either a single sweep object or `{"sweeps": [...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let sweeps = match serde_json::from_str::<SweepFile>(text) {
            Ok(SweepFile::Many { sweeps }) => sweeps,
            Ok(SweepFile::One(s)) => vec![s],
            Err(e) => return Err(Error::Config(format!("sweep configuration: {e}"))),
        };
        if sweeps.is_empty() || sweeps.iter().any(|s| s.grid.is_empty()) {
            return Err(Error::Config("sweep configuration has no cells".into()));
        }
        Ok(Self { sweeps })
    }

    pub fn cells(&self) -> Vec<(SimScenario, McConfig)> {
        let mut out = Vec::new();
        for s in &self.sweeps {
            for &g in &s.grid {
                let cell = out.len() as u64;
                out.push((
                    SimScenario::new(s.scenario, s.hypothesis, g, s.n),
                    McConfig {
                        reps: s.reps,
                        methods: s.estimators.clone(),
                        bootstrap_b: s.bootstrap_b,
                        seed: s.seed,
                        cell,
                        folds: s.folds,
                        grid_step: s.grid_step,
                        alpha: s.alpha,
                        fit: FitOptions::default(),
                    },
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub scenario: SimScenario,
    pub result: std::result::Result<(MonteCarloSummary, Vec<ReplicateRecord>), String>,
}

/// Runs every cell in order; `progress` sees each outcome as it completes.
pub fn run_sweep(cfg: &SweepConfig, mut progress: impl FnMut(usize, &CellOutcome)) -> Vec<CellOutcome> {
    cfg.cells()
        .into_iter()
        .enumerate()
        .map(|(k, (scenario, mc))| {
            let out = CellOutcome {
                scenario,
                result: run_monte_carlo(&scenario, &mc).map_err(|e| e.to_string()),
            };
            progress(k, &out);
            out
        })
        .collect()
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn open(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })?),
        None => Box::new(std::io::stdout()),
    })
}

const SUMMARY_HEADER: [&str; 17] = [
    "scenario", "hypothesis", "shape", "n", "reps", "seed", "truth", "estimator", "bias", "se", "rmse",
    "mean_std_error", "coverage", "rejection", "mean_omega", "n_ok", "failures",
];

/// One row per cell and estimator, then one per cell and endpoint for the
/// unadjusted two-sample tests (estimator `two-sample:<endpoint>`).
pub fn write_summary_csv(summaries: &[&MonteCarloSummary], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        let sc = &s.scenario;
        let lead = [
            sc.design.to_string(),
            sc.effective_hypothesis().to_string(),
            num(sc.shape),
            sc.n.to_string(),
            s.reps.to_string(),
            s.seed.to_string(),
            num(s.truth),
        ];
        for m in &s.methods {
            let mut row: Vec<String> = lead.to_vec();
            row.extend([
                m.method.to_string(),
                num(m.bias),
                num(m.se),
                num(m.rmse),
                num(m.mean_std_error),
                num(m.coverage),
                num(m.rejection),
                m.mean_omega.map(num).unwrap_or_default(),
                m.n_ok.to_string(),
                m.failures.to_string(),
            ]);
            w.write_record(&row)?;
        }
        for (j, r) in s.endpoint_rejection.iter().enumerate() {
            let mut row: Vec<String> = lead.to_vec();
            row.push(format!("two-sample:y{}", j + 1));
            row.extend(std::iter::repeat(String::new()).take(5));
            row.push(num(*r));
            row.extend([String::new(), s.reps.to_string(), "0".into()]);
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Long format: one row per replicate and estimator.
pub fn write_records_csv(cells: &[(&SimScenario, &[ReplicateRecord])], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario", "hypothesis", "shape", "n", "rep", "estimator", "estimate", "std_error", "ci_low",
        "ci_high", "omega", "reject", "covered", "failed",
    ])?;
    for (sc, recs) in cells {
        for r in *recs {
            w.write_record([
                sc.design.to_string(),
                sc.effective_hypothesis().to_string(),
                num(sc.shape),
                sc.n.to_string(),
                r.rep.to_string(),
                r.method.to_string(),
                num(r.estimate),
                num(r.std_error),
                num(r.ci_low),
                num(r.ci_high),
                r.omega.map(num).unwrap_or_default(),
                (r.reject as u8).to_string(),
                (r.covered as u8).to_string(),
                (r.failed as u8).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Writes to `path`, or standard output when `None`.
pub fn write_to(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut out = open(path)?;
    f(&mut out)
}
