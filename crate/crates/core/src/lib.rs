//! Regression for finite mixtures with varying concentrations.
//!
//! Each observation comes from one of `M` components, with known,
//! observation-specific probabilities (the concentrations). Component `m`
//! follows its own linear model `y = xᵀ bᵐ + ε`. This crate estimates every
//! `bᵐ` by least squares with signed minimax weights, computes the
//! asymptotic covariance of the estimates, and provides a simulation
//! harness to check both.
//!
//! - [`concentrations`]: concentration Gramian and weights.
//! - [`moments`]: weighted moments of one component.
//! - [`estimator`]: the weighted least-squares fit.
//! - [`covariance`]: analytic and plug-in asymptotic covariance.
//! - [`simgen`]: synthetic data.
//! - [`montecarlo`]: replication studies.
//!
//! Component indices are zero-based throughout the API.

// `!(x > tol)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod concentrations;
pub mod covariance;
pub mod error;
pub mod estimator;
mod linalg;
pub mod moments;
pub mod montecarlo;
pub mod simgen;

pub use concentrations::{
    build_gramian, compute_weights, weight_co_moments, ConcentrationMatrix, GramianSummary,
    WeightMatrix,
};
pub use covariance::{analytic_sigma, plug_in_covariance, AsymptoticCovariance, CovarianceMode};
pub use error::{Condition, MvcError, Result};
pub use estimator::{fit_all, fit_component, ComponentFit, FitOptions, FitResult};
pub use moments::{ComponentMoments, Dataset, Summation};
pub use montecarlo::{compare_report, run_study, MonteCarloReport, StudyReport};
pub use simgen::{generate, SimulatedDataset, SimulationConfig};
