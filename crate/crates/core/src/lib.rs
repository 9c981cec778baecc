//! Treatment-effect estimation in two-arm trials that borrows strength from
//! secondary endpoints through a one-factor structural equation model.
//!
//! The crate provides the saturated (difference-in-means) estimator, the SEM
//! estimator, their BIC and Super Learner model averages, stratified
//! bootstrap inference and the simulation designs used to compare them.

pub mod dist;
pub mod error;
pub mod optim;
pub mod rng;
pub mod data;
pub mod saturated;
pub mod sem;
pub mod averaging;
pub mod bootstrap;
pub mod estimators;
pub mod sim;
pub mod cli;

pub use data::{
    load_csv, EndpointKind, EndpointSpec, Estimand, EstimateResult, Flag, Method, TrialDataset,
};
pub use error::{Error, Result};
pub use saturated::{fit_saturated, SaturatedFit};
pub use sem::{fit_sem, FitOptions, SemFit, SemParams};
pub use averaging::{combine, omega_bic, omega_super_learner, FoldAssignment, WeightedEstimate};
pub use bootstrap::{bootstrap_with, effective_sample_size, BootstrapResult};
pub use estimators::{bootstrap, estimate_all, Analysis, EstimatorConfig};
