//! C interface to `trialsem`.
//!
//! Datasets and analyses are opaque handles created and released through
//! this API. Every fallible call returns a [`TsStatus`]; on failure the
//! message is available from [`ts_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trialsem::{
    bootstrap, estimate_all, load_csv, Analysis, EndpointKind, EndpointSpec, Error, EstimatorConfig,
    Flag, Method, TrialDataset,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid or incomplete data.
    Validation = 2,
    /// A model fit failed.
    Numerical = 3,
    /// Invalid settings or arguments.
    Config = 4,
    /// A string argument was not valid UTF-8.
    Utf8 = 5,
    OutOfRange = 6,
    /// An internal error was caught at the boundary.
    Panic = 7,
}

pub const TS_METHOD_SATURATED: u32 = 0;
pub const TS_METHOD_SEM: u32 = 1;
pub const TS_METHOD_BIC_MA: u32 = 2;
pub const TS_METHOD_SL_MA: u32 = 3;

pub const TS_ESTIMAND_ATE: u32 = 0;
pub const TS_ESTIMAND_PROBIT_COEFFICIENT: u32 = 1;
pub const TS_ESTIMAND_CONCORDANCE: u32 = 2;

pub const TS_FLAG_BOUNDARY: u32 = 1;
pub const TS_FLAG_DEGENERATE_ARM: u32 = 2;
pub const TS_FLAG_DEGRADED_SUPER_LEARNER: u32 = 4;
pub const TS_FLAG_UNRELIABLE: u32 = 8;

/// Endpoint kind codes for [`ts_dataset_new`]: 0 continuous, 2 binary,
/// K ≥ 3 ordinal with K levels.
pub const TS_KIND_CONTINUOUS: u32 = 0;
pub const TS_KIND_BINARY: u32 = 2;

/// Immutable trial dataset.
pub struct TsDataset(TrialDataset);

/// Results of [`ts_estimate`].
pub struct TsAnalysis(Analysis);

/// Estimator settings. Obtain defaults from [`ts_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TsConfig {
    /// Bit `1 << TS_METHOD_*` selects a method.
    pub methods: u32,
    pub bootstrap_b: usize,
    pub folds: usize,
    pub grid_step: f64,
    pub alpha: f64,
    pub seed: u64,
}

/// One estimator's result. Absent values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TsEstimate {
    pub method: u32,
    pub estimand: u32,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub weight_on_sem: f64,
    pub ess: f64,
    /// `TS_FLAG_*` bits.
    pub flags: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TsBootstrap {
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub wald_statistic: f64,
    pub replicates: usize,
    pub n_failed: usize,
    pub unreliable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> TsStatus {
    match e.exit_code() {
        2 => TsStatus::Validation,
        3 => TsStatus::Numerical,
        _ => TsStatus::Config,
    }
}

struct Fail(TsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            TsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TsStatus::Utf8, format!("{what} is not valid UTF-8")))
}

fn method_from(code: u32) -> Result<Method, Fail> {
    Method::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| Fail(TsStatus::OutOfRange, format!("unknown method code {code}")))
}

fn method_code(m: Method) -> u32 {
    Method::ALL.iter().position(|&x| x == m).unwrap_or(0) as u32
}

fn kind_from(code: u32) -> Result<EndpointKind, Fail> {
    match code {
        TS_KIND_CONTINUOUS => Ok(EndpointKind::Continuous),
        TS_KIND_BINARY => Ok(EndpointKind::Binary),
        k if k >= 3 => Ok(EndpointKind::Ordinal { levels: k as usize }),
        k => Err(Fail(TsStatus::OutOfRange, format!("unknown endpoint kind code {k}"))),
    }
}

fn estimator_config(cfg: &TsConfig) -> Result<EstimatorConfig, Fail> {
    let methods: Vec<Method> = Method::ALL
        .iter()
        .enumerate()
        .filter(|(i, _)| cfg.methods & (1 << i) != 0)
        .map(|(_, &m)| m)
        .collect();
    if methods.is_empty() || cfg.methods >> Method::ALL.len() != 0 {
        return Err(Fail(TsStatus::Config, format!("invalid method mask {:#x}", cfg.methods)));
    }
    Ok(EstimatorConfig {
        methods,
        folds: cfg.folds,
        grid_step: cfg.grid_step,
        bootstrap_b: cfg.bootstrap_b,
        alpha: cfg.alpha,
        seed: cfg.seed,
        ..EstimatorConfig::default()
    })
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fills `out` with the default settings: every method, 20000 bootstrap
/// replicates, 10 folds, grid step 0.01, alpha 0.05, seed 0.
///
/// # Safety
/// `out` must be null or point to writable memory for a `TsConfig`.
#[no_mangle]
pub unsafe extern "C" fn ts_config_default(out: *mut TsConfig) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = EstimatorConfig::default();
        *out = TsConfig {
            methods: (1 << Method::ALL.len()) - 1,
            bootstrap_b: 20_000,
            folds: d.folds,
            grid_step: d.grid_step,
            alpha: d.alpha,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Builds a dataset from `n` arm codes (0/1) and a row-major `n × p` value
/// matrix whose first column is the primary endpoint. `kinds` holds `p`
/// `TS_KIND_*` codes, or is null for all continuous. Endpoint names are
/// `y1..yp`.
///
/// # Safety
/// `arm` must point to `n` bytes, `values` to `n * p` doubles and `kinds`,
/// when not null, to `p` codes. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_new(
    arm: *const u8,
    values: *const f64,
    n: usize,
    p: usize,
    kinds: *const u32,
    out: *mut *mut TsDataset,
) -> TsStatus {
    guard(|| {
        if arm.is_null() || values.is_null() || out.is_null() {
            return Err(null("arm, values or out"));
        }
        *out = ptr::null_mut();
        let len = n
            .checked_mul(p)
            .ok_or_else(|| Fail(TsStatus::OutOfRange, "n * p overflows".into()))?;
        let arm = std::slice::from_raw_parts(arm, n).to_vec();
        let values = std::slice::from_raw_parts(values, len).to_vec();
        let codes: Vec<u32> = if kinds.is_null() {
            vec![TS_KIND_CONTINUOUS; p]
        } else {
            std::slice::from_raw_parts(kinds, p).to_vec()
        };
        let specs = codes
            .iter()
            .enumerate()
            .map(|(j, &c)| Ok(EndpointSpec::new(format!("y{}", j + 1), kind_from(c)?)))
            .collect::<Result<Vec<_>, Fail>>()?;
        let ds = TrialDataset::new(arm, values, specs)?;
        *out = Box::into_raw(Box::new(TsDataset(ds)));
        Ok(())
    })
}

/// Reads a CSV file. `secondaries` and `kinds` are comma-separated lists;
/// `kinds` (primary first) may be null for all continuous.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_load_csv(
    path: *const c_char,
    primary: *const c_char,
    arm: *const c_char,
    secondaries: *const c_char,
    kinds: *const c_char,
    out: *mut *mut TsDataset,
) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = text(path, "path")?;
        let primary = text(primary, "primary")?;
        let arm = text(arm, "arm")?;
        let sec: Vec<String> = text(secondaries, "secondaries")?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let kinds: Vec<EndpointKind> = if kinds.is_null() {
            vec![EndpointKind::Continuous; sec.len() + 1]
        } else {
            text(kinds, "kinds")?
                .split(',')
                .map(str::parse)
                .collect::<Result<_, _>>()?
        };
        let ds = load_csv(path, primary, arm, &sec, &kinds)?;
        *out = Box::into_raw(Box::new(TsDataset(ds)));
        Ok(())
    })
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_n(ds: *const TsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Number of endpoints, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_endpoints(ds: *const TsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_endpoints())
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_free(ds: *mut TsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs the selected estimators.
///
/// # Safety
/// `ds` must be a live dataset handle, `cfg` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_estimate(
    ds: *const TsDataset,
    cfg: *const TsConfig,
    out: *mut *mut TsAnalysis,
) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let cfg = estimator_config(cfg.as_ref().ok_or_else(|| null("config"))?)?;
        let a = estimate_all(&ds.0, &cfg)?;
        *out = Box::into_raw(Box::new(TsAnalysis(a)));
        Ok(())
    })
}

/// Number of result rows, or 0 for a null handle.
///
/// # Safety
/// `a` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ts_analysis_len(a: *const TsAnalysis) -> usize {
    a.as_ref().map_or(0, |a| a.0.results.len())
}

/// Copies result row `index` into `out`.
///
/// # Safety
/// `a` must be a live analysis handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_analysis_get(a: *const TsAnalysis, index: usize, out: *mut TsEstimate) -> TsStatus {
    guard(|| {
        let a = &a.as_ref().ok_or_else(|| null("analysis"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = a
            .results
            .get(index)
            .ok_or_else(|| Fail(TsStatus::OutOfRange, format!("index {index} out of range")))?;
        let flags = r.flags.iter().fold(0, |acc, f| {
            acc | match f {
                Flag::Boundary => TS_FLAG_BOUNDARY,
                Flag::DegenerateArm => TS_FLAG_DEGENERATE_ARM,
                Flag::DegradedSuperLearner => TS_FLAG_DEGRADED_SUPER_LEARNER,
                Flag::Unreliable => TS_FLAG_UNRELIABLE,
            }
        });
        *out = TsEstimate {
            method: method_code(r.method),
            estimand: match r.estimand {
                trialsem::Estimand::Ate => TS_ESTIMAND_ATE,
                trialsem::Estimand::ProbitCoefficient => TS_ESTIMAND_PROBIT_COEFFICIENT,
                trialsem::Estimand::Concordance => TS_ESTIMAND_CONCORDANCE,
            },
            estimate: r.estimate,
            std_error: r.std_error,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            weight_on_sem: r.weight_on_sem.unwrap_or(f64::NAN),
            ess: a.ess[index].unwrap_or(f64::NAN),
            flags,
        };
        Ok(())
    })
}

/// Releases an analysis. Null is ignored.
///
/// # Safety
/// `a` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_analysis_free(a: *mut TsAnalysis) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Bootstrap of one `TS_METHOD_*` estimator; the method mask in `cfg` is
/// ignored.
///
/// # Safety
/// `ds` must be a live dataset handle, `cfg` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_bootstrap(
    ds: *const TsDataset,
    method: u32,
    cfg: *const TsConfig,
    out: *mut TsBootstrap,
) -> TsStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = method_from(method)?;
        let mut c = *cfg.as_ref().ok_or_else(|| null("config"))?;
        c.methods = 1 << method;
        let r = bootstrap(&ds.0, m, &estimator_config(&c)?)?;
        *out = TsBootstrap {
            point: r.point,
            se: r.se,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            wald_statistic: r.wald_statistic(),
            replicates: r.replicates,
            n_failed: r.n_failed,
            unreliable: r.unreliable(),
        };
        Ok(())
    })
}
