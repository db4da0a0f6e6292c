//! Modified least squares for mixtures with varying concentrations.
//!
//! For component `m` the estimate solves the weighted normal equations
//! `(XᵀAX) b = XᵀAY` with `A = diag(a[·][m])`. Because the weights are signed,
//! `XᵀAX` is symmetric but may be indefinite; it is never inverted explicitly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::concentrations::{
    build_gramian, compute_weights, ConcentrationMatrix, GramianSummary, WeightMatrix,
    DEFAULT_DET_TOL,
};
use crate::covariance::AsymptoticCovariance;
use crate::error::{MvcError, Result};
use crate::linalg;
use crate::moments::{component_regression_moments, Dataset, Summation};

/// Default ceiling on the condition number of the weighted normal matrix.
pub const DEFAULT_XTX_TOL: f64 = 1e10;

/// Weight mass `(1/N) Σ |a_j|` below which a component is treated as absent.
pub const MIN_WEIGHT_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub det_tol: f64,
    pub xtx_tol: f64,
    pub summation: Summation,
    /// Fit components concurrently. Results are identical either way.
    pub parallel_components: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            det_tol: DEFAULT_DET_TOL,
            xtx_tol: DEFAULT_XTX_TOL,
            summation: Summation::Sequential,
            parallel_components: false,
        }
    }
}

/// Coefficients of one component plus normal-matrix diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentFit {
    pub component: usize,
    pub coefficients: DVector<f64>,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub condition: f64,
    pub eigenvalues: DVector<f64>,
}

impl ComponentFit {
    /// True when `XᵀAX` has eigenvalues of both signs.
    pub fn is_indefinite(&self) -> bool {
        self.eigenvalues.iter().any(|v| *v < 0.0) && self.eigenvalues.iter().any(|v| *v > 0.0)
    }

    /// `‖XᵀAX b − XᵀAY‖ / (‖XᵀAX‖‖b‖ + ‖XᵀAY‖)`.
    pub fn normal_residual(&self) -> f64 {
        let r = &self.xtx * &self.coefficients - &self.xty;
        let scale = self.xtx.norm() * self.coefficients.norm() + self.xty.norm();
        if scale == 0.0 {
            r.norm()
        } else {
            r.norm() / scale
        }
    }
}

/// Result of fitting every component on a shared weight computation.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub n_obs: usize,
    pub gramian: GramianSummary,
    pub weights: WeightMatrix,
    /// One entry per component; a failing component does not stop the others.
    pub components: Vec<Result<ComponentFit>>,
    /// Filled by [`crate::covariance::attach_plug_in_covariance`].
    pub plug_in_cov: Vec<Option<AsymptoticCovariance>>,
}

impl FitResult {
    pub fn det_gamma(&self) -> f64 {
        self.gramian.det_gamma
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// M×d coefficient matrix, `None` if any component failed.
    pub fn coefficients(&self) -> Option<DMatrix<f64>> {
        let fits: Vec<&ComponentFit> = self
            .components
            .iter()
            .map(|c| c.as_ref().ok())
            .collect::<Option<_>>()?;
        let d = fits.first()?.coefficients.len();
        Some(DMatrix::from_fn(fits.len(), d, |m, i| {
            fits[m].coefficients[i]
        }))
    }

    pub fn xtx_condition(&self) -> Vec<Option<f64>> {
        self.components
            .iter()
            .map(|c| c.as_ref().ok().map(|f| f.condition))
            .collect()
    }

    pub fn all_succeeded(&self) -> bool {
        self.components.iter().all(Result::is_ok)
    }
}

/// Solves the weighted normal equations for component `m` with given weights.
pub fn fit_with_weights(
    data: &Dataset,
    weights: &WeightMatrix,
    m: usize,
    opts: &FitOptions,
) -> Result<ComponentFit> {
    if weights.n_obs() != data.n_obs() {
        return Err(MvcError::DimensionMismatch(format!(
            "{} weight rows for {} observations",
            weights.n_obs(),
            data.n_obs()
        )));
    }
    if m >= weights.n_components() {
        return Err(MvcError::ComponentIndex {
            index: m,
            n_components: weights.n_components(),
        });
    }
    let a = weights.column(m);
    let mass = a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64;
    if !(mass >= MIN_WEIGHT_MASS) {
        return Err(MvcError::DegenerateWeights { component: m, mass });
    }
    let (xtx, xty) = component_regression_moments(data, &a, opts.summation)?;
    let solved = linalg::solve_symmetric(&xtx, &xty);
    let singular = |condition| MvcError::SingularNormalMatrix {
        component: m,
        condition,
        tol: opts.xtx_tol,
    };
    if !(solved.condition <= opts.xtx_tol) {
        return Err(singular(solved.condition));
    }
    let coefficients = solved
        .solution
        .filter(|b| b.iter().all(|v| v.is_finite()))
        .ok_or_else(|| singular(f64::INFINITY))?;
    Ok(ComponentFit {
        component: m,
        coefficients,
        xtx,
        xty,
        condition: solved.condition,
        eigenvalues: solved.eigenvalues,
    })
}

/// Estimate for a single component `m` (zero-based).
pub fn fit_component(
    data: &Dataset,
    p: &ConcentrationMatrix,
    m: usize,
    opts: &FitOptions,
) -> Result<ComponentFit> {
    check_shapes(data, p)?;
    p.check_component(m)?;
    let g = build_gramian(p);
    let weights = compute_weights(p, &g, opts.det_tol)?;
    fit_with_weights(data, &weights, m, opts)
}

/// Fits every component. A singular Gramian fails the whole call; a singular
/// normal matrix is recorded for its component only.
pub fn fit_all(data: &Dataset, p: &ConcentrationMatrix, opts: &FitOptions) -> Result<FitResult> {
    check_shapes(data, p)?;
    let gramian = build_gramian(p);
    let weights = compute_weights(p, &gramian, opts.det_tol)?;
    let n_components = p.n_components();
    let components: Vec<Result<ComponentFit>> = if opts.parallel_components {
        (0..n_components)
            .into_par_iter()
            .map(|m| fit_with_weights(data, &weights, m, opts))
            .collect()
    } else {
        (0..n_components)
            .map(|m| fit_with_weights(data, &weights, m, opts))
            .collect()
    };
    Ok(FitResult {
        n_obs: data.n_obs(),
        gramian,
        weights,
        components,
        plug_in_cov: vec![None; n_components],
    })
}

fn check_shapes(data: &Dataset, p: &ConcentrationMatrix) -> Result<()> {
    if data.n_obs() != p.n_obs() {
        return Err(MvcError::DimensionMismatch(format!(
            "dataset has {} rows, concentrations {}",
            data.n_obs(),
            p.n_obs()
        )));
    }
    Ok(())
}
