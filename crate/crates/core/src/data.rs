//! Two-arm trial datasets: endpoint metadata, validation, CSV ingestion and
//! the per-arm summaries every estimator starts from.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 97.5% normal quantile used for every Wald interval.
pub const Z_975: f64 = 1.959_964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EndpointKind {
    Continuous,
    Binary,
    /// `levels == 0` asks [`load_csv`] to infer the level count from the data.
    Ordinal { levels: usize },
}

impl EndpointKind {
    pub fn is_continuous(self) -> bool {
        matches!(self, EndpointKind::Continuous)
    }

    /// Number of categories for a categorical endpoint.
    pub fn levels(self) -> Option<usize> {
        match self {
            EndpointKind::Continuous => None,
            EndpointKind::Binary => Some(2),
            EndpointKind::Ordinal { levels } => Some(levels),
        }
    }
}

impl FromStr for EndpointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "continuous" | "c" => Ok(EndpointKind::Continuous),
            "binary" | "b" => Ok(EndpointKind::Binary),
            "ordinal" | "o" => Ok(EndpointKind::Ordinal { levels: 0 }),
            _ => {
                if let Some(k) = s.strip_prefix("ordinal:").or_else(|| s.strip_prefix("o:")) {
                    let levels: usize = k
                        .parse()
                        .map_err(|_| Error::Validation(format!("bad ordinal level count '{k}'")))?;
                    if levels < 3 {
                        return Err(Error::Validation(format!(
                            "ordinal endpoints need at least 3 levels, got {levels}"
                        )));
                    }
                    Ok(EndpointKind::Ordinal { levels })
                } else {
                    Err(Error::Validation(format!("unknown endpoint kind '{s}'")))
                }
            }
        }
    }
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointKind::Continuous => write!(f, "continuous"),
            EndpointKind::Binary => write!(f, "binary"),
            EndpointKind::Ordinal { levels } => write!(f, "ordinal:{levels}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub name: String,
    pub kind: EndpointKind,
}

impl EndpointSpec {
    pub fn new(name: impl Into<String>, kind: EndpointKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self::new(name, EndpointKind::Continuous)
    }
}

/// Complete-case data from a two-arm trial. Column 0 is always the primary
/// endpoint; categorical values are level codes `0..K-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    arm: Vec<u8>,
    values: Vec<f64>,
    specs: Vec<EndpointSpec>,
}

impl TrialDataset {
    /// Validates and builds a dataset from row-major values (`n × P`).
    pub fn new(arm: Vec<u8>, values: Vec<f64>, specs: Vec<EndpointSpec>) -> Result<Self> {
        let p = specs.len();
        if p < 3 {
            return Err(Error::Validation(format!(
                "need at least 3 endpoints (primary plus two secondaries) for the one-factor model to be identified, got {p}"
            )));
        }
        let n = arm.len();
        if values.len() != n * p {
            return Err(Error::Validation(format!(
                "expected {} values for {n} subjects x {p} endpoints, got {}",
                n * p,
                values.len()
            )));
        }
        if let Some(i) = arm.iter().position(|&a| a > 1) {
            return Err(Error::Validation(format!(
                "arm indicator must be 0 or 1 (row {})",
                i + 1
            )));
        }
        let n1 = arm.iter().filter(|&&a| a == 1).count();
        if n1 == 0 || n1 == n {
            return Err(Error::Validation(
                "both treatment arms must contain subjects".into(),
            ));
        }
        for (j, s) in specs.iter().enumerate() {
            if j > 0 && !s.kind.is_continuous() {
                return Err(Error::Validation(format!(
                    "endpoint '{}' is {}; only the primary endpoint may be categorical",
                    s.name, s.kind
                )));
            }
            if let EndpointKind::Ordinal { levels } = s.kind {
                if levels < 3 {
                    return Err(Error::Validation(format!(
                        "ordinal endpoint '{}' needs at least 3 levels",
                        s.name
                    )));
                }
            }
        }
        for i in 0..n {
            for (j, s) in specs.iter().enumerate() {
                let v = values[i * p + j];
                if !v.is_finite() {
                    return Err(Error::MissingValue {
                        row: i + 1,
                        column: s.name.clone(),
                    });
                }
                if let Some(k) = s.kind.levels() {
                    if v.fract() != 0.0 || v < 0.0 || v >= k as f64 {
                        return Err(Error::Validation(format!(
                            "row {}: '{}' must be an integer level code in 0..{}, got {v}",
                            i + 1,
                            s.name,
                            k - 1
                        )));
                    }
                }
            }
        }
        Ok(Self { arm, values, specs })
    }

    pub fn n(&self) -> usize {
        self.arm.len()
    }

    pub fn n_endpoints(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[EndpointSpec] {
        &self.specs
    }

    pub fn primary_kind(&self) -> EndpointKind {
        self.specs[0].kind
    }

    pub fn arms(&self) -> &[u8] {
        &self.arm
    }

    pub fn arm(&self, i: usize) -> u8 {
        self.arm[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.specs.len();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.specs.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let p = self.specs.len();
        self.values.iter().skip(j).step_by(p).copied()
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let n1 = self.arm.iter().filter(|&&a| a == 1).count();
        (self.n() - n1, n1)
    }

    /// Row indices per arm, in dataset order.
    pub fn arm_indices(&self) -> [Vec<usize>; 2] {
        let mut idx = [Vec::new(), Vec::new()];
        for (i, &a) in self.arm.iter().enumerate() {
            idx[a as usize].push(i);
        }
        idx
    }

    /// A new dataset made of the given rows (repeats allowed).
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let p = self.specs.len();
        let mut arm = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            arm.push(self.arm[i]);
            values.extend_from_slice(self.row(i));
        }
        let n1 = arm.iter().filter(|&&a| a == 1).count();
        if n1 == 0 || n1 == arm.len() {
            return Err(Error::Validation(
                "both treatment arms must contain subjects".into(),
            ));
        }
        Ok(Self {
            arm,
            values,
            specs: self.specs.clone(),
        })
    }

    /// The same subjects with treatment labels swapped.
    pub fn relabel_arms(&self) -> Self {
        Self {
            arm: self.arm.iter().map(|&a| 1 - a).collect(),
            values: self.values.clone(),
            specs: self.specs.clone(),
        }
    }
}

/// Per-arm sizes, means and unbiased sample covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSplit {
    pub n0: usize,
    pub n1: usize,
    pub mean0: Vec<f64>,
    pub mean1: Vec<f64>,
    pub cov0: DMatrix<f64>,
    pub cov1: DMatrix<f64>,
}

impl ArmSplit {
    pub fn mean_difference(&self) -> Vec<f64> {
        self.mean1.iter().zip(&self.mean0).map(|(a, b)| a - b).collect()
    }
}

/// Sum that depends only on the multiset of terms, not their order.
pub(crate) fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Per-arm means and within-arm scatter (sums of centred cross-products),
/// invariant to the order of subjects down to the last bit.
pub(crate) fn arm_moments(ds: &TrialDataset) -> ([Vec<f64>; 2], [DMatrix<f64>; 2]) {
    let p = ds.n_endpoints();
    let members = ds.arm_indices();
    let mut buf = Vec::with_capacity(ds.n());
    let means: [Vec<f64>; 2] = std::array::from_fn(|a| {
        (0..p)
            .map(|j| {
                buf.clear();
                buf.extend(members[a].iter().map(|&i| ds.value(i, j)));
                sorted_sum(&mut buf) / members[a].len() as f64
            })
            .collect()
    });
    let scatter: [DMatrix<f64>; 2] = std::array::from_fn(|a| {
        let mut s = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..=j {
                buf.clear();
                buf.extend(
                    members[a]
                        .iter()
                        .map(|&i| (ds.value(i, j) - means[a][j]) * (ds.value(i, k) - means[a][k])),
                );
                let v = sorted_sum(&mut buf);
                s[(j, k)] = v;
                s[(k, j)] = v;
            }
        }
        s
    });
    (means, scatter)
}

pub fn arm_split(ds: &TrialDataset) -> Result<ArmSplit> {
    let (n0, n1) = ds.arm_counts();
    if n0 < 2 || n1 < 2 {
        return Err(Error::Validation(format!(
            "each arm needs at least 2 subjects to estimate a covariance (got {n0} and {n1})"
        )));
    }
    let (means, scatter) = arm_moments(ds);
    let counts = [n0 as f64, n1 as f64];
    let covs: [DMatrix<f64>; 2] = std::array::from_fn(|a| &scatter[a] / (counts[a] - 1.0));
    let [mean0, mean1] = means;
    let [cov0, cov1] = covs;
    Ok(ArmSplit {
        n0,
        n1,
        mean0,
        mean1,
        cov0,
        cov1,
    })
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

/// Reads a complete-case trial dataset. `kinds` lists the primary followed by
/// the secondaries; rows are numbered from 1 (the header is not counted).
pub fn load_csv(
    path: impl AsRef<Path>,
    primary: &str,
    arm: &str,
    secondaries: &[String],
    kinds: &[EndpointKind],
) -> Result<TrialDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, primary, arm, secondaries, kinds)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    primary: &str,
    arm: &str,
    secondaries: &[String],
    kinds: &[EndpointKind],
) -> Result<TrialDataset> {
    let names: Vec<&str> = std::iter::once(primary)
        .chain(secondaries.iter().map(String::as_str))
        .collect();
    if names.len() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 endpoints (primary plus two secondaries) for the one-factor model to be identified, got {}",
            names.len()
        )));
    }
    let kinds: Vec<EndpointKind> = if kinds.is_empty() {
        vec![EndpointKind::Continuous; names.len()]
    } else if kinds.len() == names.len() {
        kinds.to_vec()
    } else {
        return Err(Error::Validation(format!(
            "{} endpoint kinds given for {} endpoints",
            kinds.len(),
            names.len()
        )));
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("column '{name}' not found in header")))
    };
    let arm_col = find(arm)?;
    let cols: Vec<usize> = names.iter().map(|n| find(n)).collect::<Result<_>>()?;

    let mut arms = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let a = rec.get(arm_col).unwrap_or("");
        match a {
            "0" => arms.push(0u8),
            "1" => arms.push(1u8),
            s if is_missing(s) => {
                return Err(Error::MissingValue {
                    row,
                    column: arm.to_string(),
                })
            }
            s => {
                return Err(Error::Validation(format!(
                    "row {row}: arm column '{arm}' must be 0 or 1, got '{s}'"
                )))
            }
        }
        for (name, &c) in names.iter().zip(&cols) {
            let s = rec.get(c).unwrap_or("");
            if is_missing(s) {
                return Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                });
            }
            let v: f64 = s.parse().map_err(|_| {
                Error::Validation(format!("row {row}: column '{name}' is not numeric: '{s}'"))
            })?;
            values.push(v);
        }
    }

    let p = names.len();
    let specs = names
        .iter()
        .zip(&kinds)
        .enumerate()
        .map(|(j, (name, &kind))| {
            let kind = match kind {
                EndpointKind::Ordinal { levels: 0 } => {
                    let max = values
                        .iter()
                        .skip(j)
                        .step_by(p)
                        .fold(0.0f64, |m, &v| m.max(v));
                    EndpointKind::Ordinal {
                        levels: max as usize + 1,
                    }
                }
                k => k,
            };
            EndpointSpec::new(*name, kind)
        })
        .collect();
    TrialDataset::new(arms, values, specs)
}

/// Writes the dataset with the arm column first. Reals use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(ds: &TrialDataset, path: impl AsRef<Path>, arm_name: &str) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec![arm_name.to_string()];
    header.extend(ds.specs().iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.arm(i).to_string()];
        for (j, s) in ds.specs().iter().enumerate() {
            let v = ds.value(i, j);
            rec.push(if s.kind.is_continuous() {
                format!("{v}")
            } else {
                format!("{}", v as i64)
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Saturated,
    #[serde(rename = "SEM")]
    Sem,
    #[serde(rename = "BIC-MA")]
    BicMa,
    #[serde(rename = "SL-MA")]
    SlMa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Saturated, Method::Sem, Method::BicMa, Method::SlMa];

    pub fn label(self) -> &'static str {
        match self {
            Method::Saturated => "Saturated",
            Method::Sem => "SEM",
            Method::BicMa => "BIC-MA",
            Method::SlMa => "SL-MA",
        }
    }

    pub fn is_model_averaging(self) -> bool {
        matches!(self, Method::BicMa | Method::SlMa)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "saturated" | "sat" => Ok(Method::Saturated),
            "sem" => Ok(Method::Sem),
            "bic-ma" | "bic" | "bicma" => Ok(Method::BicMa),
            "sl-ma" | "sl" | "slma" | "super-learner" => Ok(Method::SlMa),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "probit-coefficient")]
    ProbitCoefficient,
    #[serde(rename = "concordance")]
    Concordance,
}

impl Estimand {
    pub fn label(self) -> &'static str {
        match self {
            Estimand::Ate => "ATE",
            Estimand::ProbitCoefficient => "probit-coefficient",
            Estimand::Concordance => "concordance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// A residual variance was clamped at its lower bound (Heywood case).
    Boundary,
    /// An arm had all-equal binary outcomes, so the plug-in SE may be zero.
    DegenerateArm,
    /// Some Super Learner training folds fell back to saturated predictions.
    DegradedSuperLearner,
    /// More than 5% of bootstrap replicates failed.
    Unreliable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub estimand: Estimand,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_on_sem: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
}

impl EstimateResult {
    /// Point estimate with a symmetric 95% Wald interval.
    pub fn wald(method: Method, estimand: Estimand, estimate: f64, std_error: f64) -> Self {
        Self {
            method,
            estimand,
            estimate,
            std_error,
            ci_low: estimate - Z_975 * std_error,
            ci_high: estimate + Z_975 * std_error,
            weight_on_sem: None,
            flags: Vec::new(),
        }
    }

    pub fn with_flags(mut self, flags: impl IntoIterator<Item = Flag>) -> Self {
        for f in flags {
            if !self.flags.contains(&f) {
                self.flags.push(f);
            }
        }
        self
    }

    pub fn wald_statistic(&self) -> f64 {
        self.estimate / self.std_error
    }

    pub fn rejects_null(&self) -> bool {
        self.std_error > 0.0 && self.wald_statistic().abs() > Z_975
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}
