//! Command-line front end: `estimate`, `bootstrap` and `simulate`.
//!
//! Results go to `--output` (standard output by default), progress and
//! warnings to standard error. Exit codes: 0 success, 2 invalid input,
//! 3 numerical failure, 4 configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bootstrap::BootstrapResult;
use crate::data::{load_csv, EndpointKind, Method, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{bootstrap, estimate_all, Analysis, EstimatorConfig};
use crate::sim::{
    run_sweep, write_records_csv, write_summary_csv, write_to, MonteCarloSummary, SweepConfig,
};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Bootstrap replicates for `estimate` and `bootstrap` when not given.
pub const ANALYSIS_B: usize = 20_000;

#[derive(Debug, Parser)]
#[command(name = "trialsem", version, about = "Treatment effects in two-arm trials borrowing strength from secondary endpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyze one dataset with every selected estimator.
    Estimate(DataArgs),
    /// Bootstrap distribution of a single estimator.
    Bootstrap(DataArgs),
    /// Run Monte Carlo sweeps described by a JSON file.
    Simulate(SimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Primary endpoint column.
    #[arg(long)]
    primary: String,
    /// Treatment column coded 0/1.
    #[arg(long)]
    arm: String,
    /// Secondary endpoint columns, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    secondaries: Vec<String>,
    /// Kinds of the primary then each secondary (continuous, binary,
    /// ordinal or ordinal:K). Defaults to all continuous.
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// Estimators to run; `bootstrap` takes exactly one.
    #[arg(long, value_delimiter = ',', default_value = "Saturated,SEM,BIC-MA,SL-MA")]
    estimators: Vec<String>,
    #[arg(long = "bootstrap-B", default_value_t = ANALYSIS_B)]
    #[serde(rename = "bootstrap_B")]
    bootstrap_b: usize,
    /// Super Learner folds.
    #[arg(long, default_value_t = crate::averaging::DEFAULT_FOLDS)]
    folds: usize,
    /// Spacing of the Super Learner weight grid.
    #[arg(long, default_value_t = crate::averaging::DEFAULT_GRID_STEP)]
    grid_step: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    #[serde(skip)]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    #[serde(skip)]
    format: Format,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Sweep configuration (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Overrides the estimators of every sweep.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Overrides the bootstrap size of every sweep.
    #[arg(long = "bootstrap-B")]
    bootstrap_b: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides the master seed of every sweep.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Summary table destination.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Optional per-replicate CSV.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for n in names {
        let m: Method = n.parse()?;
        if out.contains(&m) {
            return Err(Error::Config(format!("estimator '{m}' listed twice")));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    Ok(out)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

impl DataArgs {
    fn load(&self) -> Result<TrialDataset> {
        let p = 1 + self.secondaries.len();
        let kinds = if self.kinds.is_empty() {
            vec![EndpointKind::Continuous; p]
        } else {
            self.kinds.iter().map(|k| k.parse()).collect::<Result<Vec<_>>>()?
        };
        load_csv(&self.input, &self.primary, &self.arm, &self.secondaries, &kinds)
    }

    fn config(&self, methods: Vec<Method>) -> EstimatorConfig {
        EstimatorConfig {
            methods,
            folds: self.folds,
            grid_step: self.grid_step,
            bootstrap_b: self.bootstrap_b,
            alpha: self.alpha,
            seed: self.seed,
            ..EstimatorConfig::default()
        }
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Buffers the whole report so that a failure leaves no partial file.
fn emit(path: Option<&Path>, body: Vec<u8>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&body)
                .and_then(|_| out.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn json_bytes(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut body = serde_json::to_vec_pretty(v)?;
    body.push(b'\n');
    Ok(body)
}

#[derive(Serialize)]
struct ResultRow<'a> {
    #[serde(flatten)]
    result: &'a crate::data::EstimateResult,
    ess: Option<f64>,
    converged: Option<bool>,
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    config: &'a DataArgs,
    n: usize,
    kinds: Vec<String>,
    results: Vec<ResultRow<'a>>,
}

fn converged_for(a: &Analysis, m: Method) -> Option<bool> {
    (m != Method::Saturated).then_some(a.sem_converged).flatten()
}

fn estimate_report(args: &DataArgs, ds: &TrialDataset, a: &Analysis) -> Result<Vec<u8>> {
    match args.format {
        Format::Json => json_bytes(&EstimateReport {
            schema_version: SCHEMA_VERSION,
            command: "estimate",
            seed: args.seed,
            config: args,
            n: a.n,
            kinds: ds.specs().iter().map(|s| s.kind.to_string()).collect(),
            results: a
                .results
                .iter()
                .zip(&a.ess)
                .map(|(r, &ess)| ResultRow {
                    result: r,
                    ess,
                    converged: converged_for(a, r.method),
                })
                .collect(),
        }),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "method", "estimand", "estimate", "std_error", "ci_low", "ci_high", "weight_on_sem", "ess",
                "converged", "flags", "n", "seed",
            ])?;
            for (r, &ess) in a.results.iter().zip(&a.ess) {
                let flags: Vec<String> = r
                    .flags
                    .iter()
                    .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default())
                    .collect();
                w.write_record([
                    r.method.to_string(),
                    r.estimand.label().to_string(),
                    num(r.estimate),
                    num(r.std_error),
                    num(r.ci_low),
                    num(r.ci_high),
                    opt(r.weight_on_sem),
                    opt(ess),
                    converged_for(a, r.method).map(|c| c.to_string()).unwrap_or_default(),
                    flags.join(";"),
                    a.n.to_string(),
                    args.seed.to_string(),
                ])?;
            }
            w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
        }
    }
}

fn cmd_estimate(args: &DataArgs) -> Result<()> {
    let methods = parse_methods(&args.estimators)?;
    let ds = args.load()?;
    let cfg = args.config(methods);
    let pool = pool(args.threads)?;
    eprintln!(
        "estimate: n = {}, {} endpoints, B = {}, seed = {}",
        ds.n(),
        ds.n_endpoints(),
        cfg.bootstrap_b,
        cfg.seed
    );
    let analysis = pool.install(|| estimate_all(&ds, &cfg))?;
    emit(args.output.as_deref(), estimate_report(args, &ds, &analysis)?)
}

#[derive(Serialize)]
struct BootstrapReport<'a> {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    config: &'a DataArgs,
    method: Method,
    n: usize,
    point: f64,
    se: f64,
    ci_low: f64,
    ci_high: f64,
    alpha: f64,
    wald_statistic: f64,
    replicates: usize,
    n_failed: usize,
    unreliable: bool,
    estimates: &'a [f64],
}

fn bootstrap_report(args: &DataArgs, method: Method, n: usize, r: &BootstrapResult) -> Result<Vec<u8>> {
    match args.format {
        Format::Json => json_bytes(&BootstrapReport {
            schema_version: SCHEMA_VERSION,
            command: "bootstrap",
            seed: args.seed,
            config: args,
            method,
            n,
            point: r.point,
            se: r.se,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            alpha: r.alpha,
            wald_statistic: r.wald_statistic(),
            replicates: r.replicates,
            n_failed: r.n_failed,
            unreliable: r.unreliable(),
            estimates: &r.estimates,
        }),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "method", "point", "se", "ci_low", "ci_high", "alpha", "wald_statistic", "replicates", "n_failed",
                "unreliable", "n", "seed",
            ])?;
            w.write_record([
                method.to_string(),
                num(r.point),
                num(r.se),
                num(r.ci_low),
                num(r.ci_high),
                r.alpha.to_string(),
                num(r.wald_statistic()),
                r.replicates.to_string(),
                r.n_failed.to_string(),
                r.unreliable().to_string(),
                n.to_string(),
                args.seed.to_string(),
            ])?;
            w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
        }
    }
}

fn cmd_bootstrap(args: &DataArgs) -> Result<()> {
    let methods = parse_methods(&args.estimators)?;
    let [method] = methods[..] else {
        return Err(Error::Config("bootstrap takes exactly one estimator".into()));
    };
    crate::bootstrap::check_settings(args.bootstrap_b, args.alpha)?;
    let ds = args.load()?;
    let cfg = args.config(methods);
    let pool = pool(args.threads)?;
    eprintln!("bootstrap: {method}, n = {}, B = {}, seed = {}", ds.n(), cfg.bootstrap_b, cfg.seed);
    let r = pool.install(|| bootstrap(&ds, method, &cfg))?;
    if r.unreliable() {
        eprintln!(
            "warning: {} of {} replicates failed; the result is unreliable",
            r.n_failed, r.replicates
        );
    }
    emit(args.output.as_deref(), bootstrap_report(args, method, ds.n(), &r)?)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    schema_version: u32,
    command: &'static str,
    cells: Vec<&'a MonteCarloSummary>,
    skipped: Vec<SkippedCell>,
}

#[derive(Serialize)]
struct SkippedCell {
    scenario: crate::sim::SimScenario,
    error: String,
}

fn apply_overrides(cfg: &mut SweepConfig, args: &SimArgs) -> Result<()> {
    let methods = if args.estimators.is_empty() {
        None
    } else {
        Some(parse_methods(&args.estimators)?)
    };
    for s in &mut cfg.sweeps {
        if let Some(m) = &methods {
            s.estimators = m.clone();
        }
        if let Some(b) = args.bootstrap_b {
            s.bootstrap_b = b;
        }
        if let Some(v) = args.folds {
            s.folds = v;
        }
        if let Some(g) = args.grid_step {
            s.grid_step = g;
        }
        if let Some(a) = args.alpha {
            s.alpha = a;
        }
        if let Some(seed) = args.seed {
            s.seed = seed;
        }
    }
    Ok(())
}

fn digest(s: &MonteCarloSummary) -> String {
    let sc = &s.scenario;
    let parts: Vec<String> = s
        .methods
        .iter()
        .map(|m| format!("{} bias {:+.4} rmse {:.4} rej {:.3}", m.method, m.bias, m.rmse, m.rejection))
        .collect();
    format!("{} {} shape {} n {}: {}", sc.design, sc.effective_hypothesis(), sc.shape, sc.n, parts.join("; "))
}

fn cmd_simulate(args: &SimArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|source| Error::Io {
        path: args.input.clone(),
        source,
    })?;
    let mut cfg = SweepConfig::from_json(&text)?;
    apply_overrides(&mut cfg, args)?;
    let pool = pool(args.threads)?;
    let total = cfg.cells().len();
    let cells = pool.install(|| {
        run_sweep(&cfg, |k, out| match &out.result {
            Ok((s, _)) => eprintln!("[{}/{total}] {}", k + 1, digest(s)),
            Err(e) => eprintln!("[{}/{total}] warning: skipped {} shape {}: {e}", k + 1, out.scenario.design, out.scenario.shape),
        })
    });
    let ok: Vec<&MonteCarloSummary> = cells.iter().filter_map(|c| c.result.as_ref().ok().map(|r| &r.0)).collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every simulation cell failed".into()));
    }
    let body = match args.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_summary_csv(&ok, &mut buf)?;
            buf
        }
        Format::Json => json_bytes(&SimulateReport {
            schema_version: SCHEMA_VERSION,
            command: "simulate",
            cells: ok,
            skipped: cells
                .iter()
                .filter_map(|c| {
                    c.result.as_ref().err().map(|e| SkippedCell {
                        scenario: c.scenario,
                        error: e.clone(),
                    })
                })
                .collect(),
        })?,
    };
    emit(args.output.as_deref(), body)?;
    if let Some(path) = &args.records {
        let recs: Vec<_> = cells
            .iter()
            .filter_map(|c| c.result.as_ref().ok().map(|r| (&c.scenario, r.1.as_slice())))
            .collect();
        write_to(Some(path), |w| write_records_csv(&recs, w))?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
