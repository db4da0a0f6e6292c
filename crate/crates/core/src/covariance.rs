//! Asymptotic covariance of the per-component estimates.
//!
//! `√N (b̂ − b)` is asymptotically normal with covariance `V = D⁻¹ Σ D⁻¹`,
//! where `D` is the second-moment matrix of component `m` and
//!
//! ```text
//! Σ = Σ_s ⟨(aᵐ)² pˢ⟩ (Dˢ σ_s² + L^(s)[Δ_s, Δ_s])
//!   − Σ_{s,q} ⟨(aᵐ)² pˢ p^q⟩ (Dˢ Δ_s)(D^q Δ_q)ᵀ,        Δ_s = bˢ − bᵐ.
//! ```
//!
//! The same assembly serves two sources of inputs: true moments (analytic
//! mode) and weighted sample moments with fitted coefficients (plug-in mode).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::concentrations::{weight_co_moments, ConcentrationMatrix};
use crate::error::{MvcError, Result};
use crate::estimator::FitResult;
use crate::linalg;
use crate::moments::{
    component_regression_moments, weighted_fourth_moments, weighted_residual_variance,
    ComponentMoments, Dataset, Summation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Analytic,
    PlugIn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceWarning {
    /// A weighted residual variance came out negative and was replaced by 0.
    ClampedResidualVariance { component: usize, value: f64 },
    /// A diagonal entry of V was negative; its standard error is reported as 0.
    NegativeVariance { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticCovariance {
    pub component: usize,
    pub mode: CovarianceMode,
    pub sigma: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `√(V_ii / N)`, plug-in mode only.
    pub std_errors: Option<DVector<f64>>,
    pub warnings: Vec<CovarianceWarning>,
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// Σ for component `m` from per-component moments and the co-moment matrix
/// `⟨(aᵐ)² pˢ p^q⟩`. Row sums of `co_moments` give `⟨(aᵐ)² pˢ⟩`.
pub fn assemble_sigma(
    moments: &[ComponentMoments],
    co_moments: &DMatrix<f64>,
    m: usize,
) -> Result<DMatrix<f64>> {
    let k = moments.len();
    if m >= k {
        return Err(MvcError::ComponentIndex {
            index: m,
            n_components: k,
        });
    }
    if co_moments.shape() != (k, k) {
        return Err(MvcError::DimensionMismatch(format!(
            "co-moments are {:?}, expected ({k}, {k})",
            co_moments.shape()
        )));
    }
    let d = moments[m].b.len();
    if let Some(bad) = moments
        .iter()
        .find(|c| c.b.len() != d || c.d2.shape() != (d, d) || c.l4.dim() != d)
    {
        return Err(MvcError::DimensionMismatch(format!(
            "component moments of dimension {} mixed with {d}",
            bad.b.len()
        )));
    }
    let deltas: Vec<DVector<f64>> = moments.iter().map(|c| &c.b - &moments[m].b).collect();
    let shifted: Vec<DVector<f64>> = moments
        .iter()
        .zip(&deltas)
        .map(|(c, delta)| &c.d2 * delta)
        .collect();

    let mut sigma = DMatrix::zeros(d, d);
    for (s, c) in moments.iter().enumerate() {
        let weight: f64 = co_moments.row(s).sum();
        sigma += (&c.d2 * c.sigma2 + c.l4.contract(&deltas[s], &deltas[s])) * weight;
    }
    for s in 0..k {
        for q in 0..k {
            sigma -= &shifted[s] * shifted[q].transpose() * co_moments[(s, q)];
        }
    }
    Ok(symmetrize(sigma))
}

/// `D⁻¹ Σ D⁻¹`.
pub fn sandwich(d: &DMatrix<f64>, sigma: &DMatrix<f64>, component: usize) -> Result<DMatrix<f64>> {
    let inv = linalg::inverse(d).ok_or(MvcError::SingularD { component })?;
    Ok(symmetrize(&inv * sigma * &inv))
}

/// Covariance from true component moments and limiting co-moments.
pub fn analytic_sigma(
    moments: &[ComponentMoments],
    co_moments: &DMatrix<f64>,
    m: usize,
) -> Result<AsymptoticCovariance> {
    let sigma = assemble_sigma(moments, co_moments, m)?;
    let v = sandwich(&moments[m].d2, &sigma, m)?;
    Ok(AsymptoticCovariance {
        component: m,
        mode: CovarianceMode::Analytic,
        sigma,
        v,
        std_errors: None,
        warnings: Vec::new(),
    })
}

/// Weighted sample moments of every component, using the fitted coefficients.
///
/// Negative residual variances are clamped to zero and reported.
pub fn plug_in_moments(
    data: &Dataset,
    fit: &FitResult,
    summation: Summation,
) -> Result<(Vec<ComponentMoments>, Vec<CovarianceWarning>)> {
    let mut moments = Vec::with_capacity(fit.n_components());
    let mut warnings = Vec::new();
    for (s, outcome) in fit.components.iter().enumerate() {
        let comp = outcome
            .as_ref()
            .map_err(|_| MvcError::MissingFit { component: s })?;
        let a = fit.weights.column(s);
        let (d2, _) = component_regression_moments(data, &a, summation)?;
        let l4 = weighted_fourth_moments(data, &a, summation)?;
        let raw = weighted_residual_variance(data, &a, &comp.coefficients, summation)?;
        let sigma2 = if raw < 0.0 {
            warnings.push(CovarianceWarning::ClampedResidualVariance {
                component: s,
                value: raw,
            });
            0.0
        } else {
            raw
        };
        moments.push(ComponentMoments {
            d2,
            l4,
            sigma2,
            b: comp.coefficients.clone(),
        });
    }
    Ok((moments, warnings))
}

/// Plug-in estimate of the asymptotic covariance of component `m`.
pub fn plug_in_covariance(
    data: &Dataset,
    p: &ConcentrationMatrix,
    fit: &FitResult,
    m: usize,
) -> Result<AsymptoticCovariance> {
    let (moments, warnings) = plug_in_moments(data, fit, Summation::Sequential)?;
    plug_in_from_moments(p, fit, &moments, warnings, m)
}

fn plug_in_from_moments(
    p: &ConcentrationMatrix,
    fit: &FitResult,
    moments: &[ComponentMoments],
    mut warnings: Vec<CovarianceWarning>,
    m: usize,
) -> Result<AsymptoticCovariance> {
    let co = weight_co_moments(&fit.weights, p, m)?;
    let sigma = assemble_sigma(moments, &co, m)?;
    let v = sandwich(&moments[m].d2, &sigma, m)?;
    let n = fit.n_obs as f64;
    let std_errors = DVector::from_iterator(
        v.nrows(),
        (0..v.nrows()).map(|i| {
            let vi = v[(i, i)];
            if vi < 0.0 {
                warnings.push(CovarianceWarning::NegativeVariance {
                    index: i,
                    value: vi,
                });
                0.0
            } else {
                (vi / n).sqrt()
            }
        }),
    );
    Ok(AsymptoticCovariance {
        component: m,
        mode: CovarianceMode::PlugIn,
        sigma,
        v,
        std_errors: Some(std_errors),
        warnings,
    })
}

/// Computes the plug-in covariance of every component and stores it in `fit`.
pub fn attach_plug_in_covariance(
    data: &Dataset,
    p: &ConcentrationMatrix,
    fit: &mut FitResult,
    summation: Summation,
) -> Result<()> {
    let (moments, warnings) = plug_in_moments(data, fit, summation)?;
    let covs = (0..fit.n_components())
        .map(|m| plug_in_from_moments(p, fit, &moments, warnings.clone(), m).map(Some))
        .collect::<Result<Vec<_>>>()?;
    fit.plug_in_cov = covs;
    Ok(())
}
