//! Model averaging of the SEM and saturated estimators.
//!
//! `τ_MA = ω τ_SEM + (1 − ω) τ_Sat` with ω from BIC weights or from a V-fold
//! Super Learner that minimizes out-of-fold squared error of the primary.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::dist::{cholesky, LN_2PI};
use crate::error::{Error, Result};
use crate::rng::{stream, tag, StreamRng};
use crate::saturated::fit_saturated;
use crate::sem::{
    fit_prepared, predicted_primary_mean, FitOptions, Moments, Prepared, SemFit, SemLayout, Suff,
};

/// Default number of cross-validation folds.
pub const DEFAULT_FOLDS: usize = 10;
/// Default spacing of the weight grid.
pub const DEFAULT_GRID_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    /// Weight on the SEM estimate.
    pub omega: f64,
    pub tau_sem: f64,
    pub tau_sat: f64,
    pub tau_ma: f64,
}

/// `1 / (1 + exp{(bic_sem − bic_sat)/2})`.
pub fn omega_bic(bic_sem: f64, bic_sat: f64) -> f64 {
    let half = 0.5 * (bic_sem - bic_sat);
    if half >= 0.0 {
        let e = (-half).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + half.exp())
    }
}

pub fn combine(omega: f64, tau_sem: f64, tau_sat: f64) -> Result<WeightedEstimate> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Domain(format!("weight {omega} is outside [0, 1]")));
    }
    Ok(WeightedEstimate {
        omega,
        tau_sem,
        tau_sat,
        tau_ma: omega * tau_sem + (1.0 - omega) * tau_sat,
    })
}

/// Cross-validation folds, stratified by arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    v: usize,
    fold: Vec<usize>,
}

impl FoldAssignment {
    /// Shuffles each arm and deals its subjects round-robin into `v` folds.
    pub fn stratified(arms: &[u8], v: usize, rng: &mut StreamRng) -> Result<Self> {
        let mut by_arm: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &a) in arms.iter().enumerate() {
            by_arm[a as usize].push(i);
        }
        let smallest = by_arm[0].len().min(by_arm[1].len());
        if v < 2 || 2 * v > smallest {
            return Err(Error::Config(format!(
                "fold count {v} must lie between 2 and half the smaller arm ({smallest} subjects)"
            )));
        }
        let mut fold = vec![0; arms.len()];
        for members in by_arm.iter_mut() {
            members.shuffle(rng);
            for (k, &i) in members.iter().enumerate() {
                fold[i] = k % v;
            }
        }
        Ok(Self { v, fold })
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold[i]
    }

    pub fn folds(&self) -> &[usize] {
        &self.fold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerWeight {
    pub omega: f64,
    /// Some training-fold SEM fits failed and used saturated predictions.
    pub degraded: bool,
}

fn grid_size(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step {step} must lie in (0, 1]")));
    }
    let k = (1.0 / step).round();
    if ((k * step) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide 1")));
    }
    Ok(k as usize)
}

/// Grid minimizer of `Σ (r − ω d)² = syy − 2ω syd + ω² sdd`, the smallest
/// minimizer on ties.
fn grid_argmin(syy: f64, syd: f64, sdd: f64, step: f64) -> Result<f64> {
    let k = grid_size(step)?;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=k {
        let w = i as f64 / k as f64;
        let risk = syy - 2.0 * w * syd + w * w * sdd;
        if risk < best.1 {
            best = (w, risk);
        }
    }
    Ok(best.0)
}

/// Super Learner weight from explicit out-of-fold predictions.
pub fn sl_weight_from_predictions(
    y: &[f64],
    pred_sem: &[f64],
    pred_sat: &[f64],
    grid_step: f64,
) -> Result<f64> {
    if y.len() != pred_sem.len() || y.len() != pred_sat.len() {
        return Err(Error::Domain("prediction vectors differ in length".into()));
    }
    let (mut syy, mut syd, mut sdd) = (0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let r = y[i] - pred_sat[i];
        let d = pred_sem[i] - pred_sat[i];
        syy += r * r;
        syd += r * d;
        sdd += d * d;
    }
    grid_argmin(syy, syd, sdd, grid_step)
}

/// Super Learner weight on the SEM with `v` stratified folds.
pub fn omega_super_learner(
    ds: &TrialDataset,
    v: usize,
    grid_step: f64,
    seed: u64,
) -> Result<SuperLearnerWeight> {
    let folds = FoldAssignment::stratified(ds.arms(), v, &mut stream(seed, &[tag::FOLDS]))?;
    let sample = Sample::new(ds, (0..ds.n()).collect(), Some(folds));
    let opts = FitOptions {
        compute_cov: false,
        seed,
        ..FitOptions::default()
    };
    let full = fit_prepared(&sample.prepared(), &opts).ok();
    sample.super_learner(grid_step, &opts, full.as_ref())
}

/// A multiset of subjects with per-arm summaries, optionally split into
/// folds. Bootstrap replicates and the full data are both samples.
pub(crate) struct Sample<'a> {
    ds: &'a TrialDataset,
    rows: Vec<usize>,
    layout: SemLayout,
    folds: Option<FoldAssignment>,
    /// Per fold and arm; a single fold when unsplit.
    parts: Vec<[Moments; 2]>,
    full: [Moments; 2],
}

impl<'a> Sample<'a> {
    /// `folds`, when given, indexes positions in `rows`.
    pub fn new(ds: &'a TrialDataset, rows: Vec<usize>, folds: Option<FoldAssignment>) -> Self {
        let layout = SemLayout::for_dataset(ds);
        // A categorical primary needs per-row data for the fit, so only the
        // primary column is summarized.
        let cols: Vec<usize> = if layout.is_categorical() {
            vec![0]
        } else {
            (0..ds.n_endpoints()).collect()
        };
        let v = folds.as_ref().map_or(1, |f| f.v());
        let shift: Vec<f64> = rows.first().map_or(vec![0.0; cols.len()], |&i| {
            cols.iter().map(|&j| ds.value(i, j)).collect()
        });
        let items = rows.iter().enumerate().map(|(pos, &i)| {
            let f = folds.as_ref().map_or(0, |f| f.fold_of(pos));
            (2 * f + ds.arm(i) as usize, ds.row(i))
        });
        let mut flat = Moments::grouped(items, &cols, 2 * v, &shift).into_iter();
        let parts: Vec<[Moments; 2]> = (0..v)
            .map(|_| {
                let m0 = flat.next().expect("two groups per fold");
                let m1 = flat.next().expect("two groups per fold");
                [m0, m1]
            })
            .collect();
        let full = [0, 1].map(|a| {
            parts
                .iter()
                .fold(Moments::empty(cols.len()), |acc, p| acc.merge(&p[a]))
        });
        Self {
            ds,
            rows,
            layout,
            folds,
            parts,
            full,
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn tau_sat(&self) -> f64 {
        self.full[1].mean[0] - self.full[0].mean[0]
    }

    pub fn prepared(&self) -> Prepared {
        if self.layout.is_categorical() {
            Prepared::from_rows(self.ds, &self.rows)
        } else {
            Prepared::from_suff(self.layout, Suff::from_arms(&self.full[0], &self.full[1]))
        }
    }

    /// Maximized saturated log-likelihood.
    pub fn saturated_loglik(&self) -> Result<f64> {
        if self.layout.is_categorical() {
            return Ok(fit_saturated(&self.ds.select(&self.rows)?)?.loglik);
        }
        let suff = Suff::from_arms(&self.full[0], &self.full[1]);
        let chol = cholesky(&suff.cov_matrix())?;
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let p = self.layout.p as f64;
        Ok(-0.5 * suff.n() * (p * LN_2PI + log_det + p))
    }

    fn train_prepared(&self, v: usize) -> Prepared {
        if self.layout.is_categorical() {
            let folds = self.folds.as_ref().expect("split sample");
            let rows: Vec<usize> = self
                .rows
                .iter()
                .enumerate()
                .filter(|&(pos, _)| folds.fold_of(pos) != v)
                .map(|(_, &i)| i)
                .collect();
            Prepared::from_rows(self.ds, &rows)
        } else {
            let train = [0, 1].map(|a| self.full[a].remove(&self.parts[v][a]));
            Prepared::from_suff(self.layout, Suff::from_arms(&train[0], &train[1]))
        }
    }

    /// Super Learner weight; fold fits start from `full` when given.
    pub fn super_learner(
        &self,
        grid_step: f64,
        opts: &FitOptions,
        full: Option<&SemFit>,
    ) -> Result<SuperLearnerWeight> {
        let folds = self
            .folds
            .as_ref()
            .ok_or_else(|| Error::Config("sample was not split into folds".into()))?;
        let fold_opts = FitOptions {
            compute_cov: false,
            start: full.map(SemFit::warm_start).or_else(|| opts.start.clone()),
            ..opts.clone()
        };
        let (mut syy, mut syd, mut sdd) = (0.0, 0.0, 0.0);
        let mut degraded = false;
        for v in 0..folds.v() {
            let sem = fit_prepared(&self.train_prepared(v), &fold_opts).ok();
            degraded |= sem.is_none();
            for a in 0..2 {
                let test = &self.parts[v][a];
                if test.n == 0.0 {
                    continue;
                }
                let train = self.full[a].remove(test);
                let sat = train.mean[0];
                let d = sem
                    .as_ref()
                    .map_or(0.0, |f| predicted_primary_mean(&f.params, a as u8) - sat);
                let off = test.mean[0] - sat;
                syy += test.scatter[0] + test.n * off * off;
                syd += d * test.n * off;
                sdd += test.n * d * d;
            }
        }
        Ok(SuperLearnerWeight {
            omega: grid_argmin(syy, syd, sdd, grid_step)?,
            degraded,
        })
    }
}
