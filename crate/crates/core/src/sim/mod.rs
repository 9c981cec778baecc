//! Simulation designs and the Monte Carlo evaluation loop.
//!
//! Each design draws two arms of equal size from a trivariate Gaussian with
//! unit variances. Design A is a correctly specified SEM; B1, B1-null and B2
//! perturb the correlations away from one; C dichotomizes the primary.

mod monte_carlo;
mod sweep;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{EndpointKind, EndpointSpec, TrialDataset};
use crate::dist::{cholesky, norm_cdf, norm_quantile};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub use monte_carlo::{
    run_monte_carlo, MethodSummary, McConfig, MonteCarloSummary, ReplicateRecord,
};
pub use sweep::{
    run_sweep, write_records_csv, write_summary_csv, write_to, CellOutcome, SweepConfig, SweepSpec,
};

/// Treatment effects on the three endpoints under design A's alternative.
pub const EFFECTS: [f64; 3] = [0.25, 0.35, 0.30];
/// Correlation of the two secondaries in designs B and C.
const SECONDARY_CORR: f64 = 0.42;
/// Success rates of the binary primary in design C.
pub const RATES_C: [f64; 2] = [0.15, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    A,
    /// Misspecified correlations with effects on every endpoint.
    B1,
    /// As B1 with no effect on the primary.
    #[serde(rename = "B1-null")]
    B1Null,
    /// Global null with one misspecified correlation.
    B2,
    /// Binary primary.
    C,
}

impl Design {
    pub fn label(self) -> &'static str {
        match self {
            Design::A => "A",
            Design::B1 => "B1",
            Design::B1Null => "B1-null",
            Design::B2 => "B2",
            Design::C => "C",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Design::A),
            "B1" | "B1-ALT" => Ok(Design::B1),
            "B1-NULL" | "B1-NULL-PRIMARY" => Ok(Design::B1Null),
            "B2" | "B2-GLOBAL-NULL" => Ok(Design::B2),
            "C" => Ok(Design::C),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Null,
    Alternative,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::Null => "null",
            Hypothesis::Alternative => "alternative",
        })
    }
}

/// One cell of a simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub design: Design,
    /// Used by designs A and C; the B designs fix their own effects.
    pub hypothesis: Hypothesis,
    /// `Cov(Y₁, Y₂ | A)` for design A, the perturbation `s` otherwise.
    pub shape: f64,
    pub n: usize,
}

impl SimScenario {
    pub fn new(design: Design, hypothesis: Hypothesis, shape: f64, n: usize) -> Self {
        Self {
            design,
            hypothesis,
            shape,
            n,
        }
    }

    /// Hypothesis actually in force for the primary.
    pub fn effective_hypothesis(&self) -> Hypothesis {
        match self.design {
            Design::A | Design::C => self.hypothesis,
            Design::B1 => Hypothesis::Alternative,
            Design::B1Null | Design::B2 => Hypothesis::Null,
        }
    }

    /// True average treatment effect on the primary.
    pub fn truth(&self) -> f64 {
        match (self.design, self.effective_hypothesis()) {
            (_, Hypothesis::Null) => 0.0,
            (Design::C, _) => RATES_C[1] - RATES_C[0],
            _ => EFFECTS[0],
        }
    }

    fn endpoint_effects(&self) -> [f64; 3] {
        match (self.design, self.effective_hypothesis()) {
            (Design::B2, _) => [0.0; 3],
            (Design::A, Hypothesis::Null) => [0.0; 3],
            (_, Hypothesis::Null) => [0.0, EFFECTS[1], EFFECTS[2]],
            _ => EFFECTS,
        }
    }

    /// Within-arm correlation matrix, row-major.
    pub fn correlation(&self) -> Result<[f64; 9]> {
        let s = self.shape;
        if !s.is_finite() {
            return Err(Error::Scenario(format!("shape {s} is not finite")));
        }
        let (r12, r13, r23) = match self.design {
            Design::A => {
                let lambda = loadings_a(s)?;
                (lambda[0] * lambda[1], lambda[0] * lambda[2], lambda[1] * lambda[2])
            }
            Design::B1 | Design::B1Null => (0.35 * s, 0.30 * s, SECONDARY_CORR),
            Design::B2 => (0.35 * s, 0.30, SECONDARY_CORR),
            Design::C => (0.51 * s, 0.43 * s, SECONDARY_CORR),
        };
        let r = [1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0];
        if cholesky(&DMatrix::from_row_slice(3, 3, &r)).is_err() {
            return Err(Error::Scenario(format!(
                "design {} with shape {s} gives a correlation matrix that is not positive definite",
                self.design
            )));
        }
        Ok(r)
    }

    /// Draws one dataset: `n/2` subjects in arm 0 (rounded down) and the
    /// rest in arm 1.
    pub fn generate(&self, rng: &mut StreamRng) -> Result<TrialDataset> {
        if self.n < 4 {
            return Err(Error::Scenario(format!("sample size {} is too small", self.n)));
        }
        let r = self.correlation()?;
        let l = cholesky(&DMatrix::from_row_slice(3, 3, &r))?;
        let effects = self.endpoint_effects();
        let binary = self.design == Design::C;
        let (base, shift) = if binary {
            let nu = norm_quantile(RATES_C[0])?;
            let step = match self.effective_hypothesis() {
                Hypothesis::Alternative => norm_quantile(RATES_C[1])? - nu,
                Hypothesis::Null => 0.0,
            };
            (nu, step)
        } else {
            (0.0, effects[0])
        };
        let n0 = self.n / 2;
        let mut arm = Vec::with_capacity(self.n);
        let mut values = Vec::with_capacity(3 * self.n);
        for i in 0..self.n {
            let a = (i >= n0) as u8;
            let af = a as f64;
            let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let mut y = [0.0; 3];
            for j in 0..3 {
                y[j] = (0..=j).map(|k| l[(j, k)] * z[k]).sum();
            }
            y[0] += base + shift * af;
            y[1] += effects[1] * af;
            y[2] += effects[2] * af;
            if binary {
                y[0] = (y[0] > 0.0) as u8 as f64;
            }
            arm.push(a);
            values.extend_from_slice(&y);
        }
        let primary = if binary {
            EndpointSpec::new("y1", EndpointKind::Binary)
        } else {
            EndpointSpec::continuous("y1")
        };
        TrialDataset::new(
            arm,
            values,
            vec![primary, EndpointSpec::continuous("y2"), EndpointSpec::continuous("y3")],
        )
    }
}

/// Loadings of design A: `γ = √(0.25·0.35 / c₁₂)`, `λ = effects / γ`.
pub fn loadings_a(c12: f64) -> Result<[f64; 3]> {
    if !(c12 > 0.0) {
        return Err(Error::Scenario(format!("covariance c12 = {c12} must be positive")));
    }
    let gamma = gamma_a(c12);
    let lambda = EFFECTS.map(|b| b / gamma);
    if lambda.iter().any(|&l| l >= 1.0) {
        return Err(Error::Scenario(format!(
            "c12 = {c12} needs a loading of at least one"
        )));
    }
    Ok(lambda)
}

pub fn gamma_a(c12: f64) -> f64 {
    (EFFECTS[0] * EFFECTS[1] / c12).sqrt()
}

pub fn gen_sim_a(c12: f64, hypothesis: Hypothesis, n: usize, rng: &mut StreamRng) -> Result<TrialDataset> {
    SimScenario::new(Design::A, hypothesis, c12, n).generate(rng)
}

/// Designs B1, B1-null and B2.
pub fn gen_sim_b(design: Design, s: f64, n: usize, rng: &mut StreamRng) -> Result<TrialDataset> {
    if !matches!(design, Design::B1 | Design::B1Null | Design::B2) {
        return Err(Error::Config(format!("{design} is not a B design")));
    }
    SimScenario::new(design, Hypothesis::Alternative, s, n).generate(rng)
}

pub fn gen_sim_c(s: f64, hypothesis: Hypothesis, n: usize, rng: &mut StreamRng) -> Result<TrialDataset> {
    SimScenario::new(Design::C, hypothesis, s, n).generate(rng)
}

/// Success probability of the primary implied by design C's latent model.
pub fn design_c_rate(arm: u8, hypothesis: Hypothesis) -> f64 {
    let nu = norm_quantile(RATES_C[0]).expect("valid rate");
    let step = match hypothesis {
        Hypothesis::Alternative => norm_quantile(RATES_C[1]).expect("valid rate") - nu,
        Hypothesis::Null => 0.0,
    };
    norm_cdf(nu + step * arm as f64)
}
