//! Synthetic mixtures of linear regressions with known concentrations.
//!
//! Observation `j` draws its component label from row `j` of the
//! concentration matrix, then its regressors and Gaussian error from that
//! component's spec, and `y = xᵀ b + ε`. Every observation has its own
//! ChaCha8 stream keyed by `(seed, j)`, so output does not depend on the
//! order in which observations are produced.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentrations::{
    ramp_limit, weight_co_moments, weights_for, ConcentrationMatrix, DEFAULT_DET_TOL,
};
use crate::error::{MvcError, Result};
use crate::moments::{ComponentMoments, Dataset, Tensor4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConcentrationModel {
    /// `p¹_j = j/N`, `p²_j = 1 − j/N`; two components only.
    LinearRamp,
    /// Fixed N×M matrix; N must equal `n_obs`.
    Explicit { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorSpec {
    /// Normal with the given mean and standard deviation.
    Gaussian { mean: f64, sd: f64 },
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl RegressorSpec {
    /// `E[X^k]` for k ≤ 4.
    fn raw_moment(&self, k: u32) -> f64 {
        match *self {
            RegressorSpec::Constant { value } => value.powi(k as i32),
            RegressorSpec::Gaussian { mean: mu, sd } => {
                let var = sd * sd;
                match k {
                    0 => 1.0,
                    1 => mu,
                    2 => mu * mu + var,
                    3 => mu.powi(3) + 3.0 * mu * var,
                    4 => mu.powi(4) + 6.0 * mu * mu * var + 3.0 * var * var,
                    _ => unreachable!("moments above order four are not needed"),
                }
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            RegressorSpec::Constant { value } => value,
            RegressorSpec::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    /// Independent regressors, in coefficient order.
    pub regressors: Vec<RegressorSpec>,
    pub error_sd: f64,
    pub true_b: Vec<f64>,
}

impl ComponentSpec {
    /// True second and fourth regressor moments, error variance and
    /// coefficients, for mutually independent regressors.
    pub fn analytic_moments(&self) -> ComponentMoments {
        let d = self.regressors.len();
        let product = |idx: &[usize]| -> f64 {
            (0..d)
                .map(|r| {
                    let power = idx.iter().filter(|&&i| i == r).count() as u32;
                    self.regressors[r].raw_moment(power)
                })
                .product()
        };
        ComponentMoments {
            d2: DMatrix::from_fn(d, d, |i, k| product(&[i, k])),
            l4: Tensor4::from_fn(d, |i, k, q, l| product(&[i, k, q, l])),
            sigma2: self.error_sd * self.error_sd,
            b: DVector::from_column_slice(&self.true_b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_obs: usize,
    pub n_components: usize,
    pub concentrations: ConcentrationModel,
    pub components: Vec<ComponentSpec>,
    pub seed: u64,
}

impl SimulationConfig {
    /// Two-component design: p¹ = j/N; component 1 has X ~ N(1, 1), error
    /// sd 0.01, b = (3, 0.5); component 2 has X ~ N(2, 2.25) (variance),
    /// error sd 0.05, b = (−2, 1). Both include an intercept regressor.
    pub fn two_component_ramp(n_obs: usize, seed: u64) -> Self {
        let spec = |mean: f64, sd: f64, error_sd: f64, b: [f64; 2]| ComponentSpec {
            regressors: vec![
                RegressorSpec::Constant { value: 1.0 },
                RegressorSpec::Gaussian { mean, sd },
            ],
            error_sd,
            true_b: b.to_vec(),
        };
        Self {
            n_obs,
            n_components: 2,
            concentrations: ConcentrationModel::LinearRamp,
            components: vec![
                spec(1.0, 1.0, 0.01, [3.0, 0.5]),
                spec(2.0, 1.5, 0.05, [-2.0, 1.0]),
            ],
            seed,
        }
    }

    pub fn n_regressors(&self) -> usize {
        self.components.first().map_or(0, |c| c.regressors.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(MvcError::config("n_components", "must be at least 1"));
        }
        if self.components.len() != self.n_components {
            return Err(MvcError::config(
                "components",
                format!(
                    "{} component specs given for n_components = {}",
                    self.components.len(),
                    self.n_components
                ),
            ));
        }
        let d = self.n_regressors();
        if d == 0 {
            return Err(MvcError::config(
                "components[0].regressors",
                "must not be empty",
            ));
        }
        if self.n_obs <= d {
            return Err(MvcError::config(
                "n_obs",
                format!("{} observations for {d} regressors", self.n_obs),
            ));
        }
        for (k, c) in self.components.iter().enumerate() {
            if c.regressors.len() != d {
                return Err(MvcError::config(
                    format!("components[{k}].regressors"),
                    format!("{} regressors, component 0 has {d}", c.regressors.len()),
                ));
            }
            if c.true_b.len() != d {
                return Err(MvcError::config(
                    format!("components[{k}].true_b"),
                    format!("{} coefficients for {d} regressors", c.true_b.len()),
                ));
            }
            if c.true_b.iter().any(|v| !v.is_finite()) {
                return Err(MvcError::config(
                    format!("components[{k}].true_b"),
                    "non-finite value",
                ));
            }
            if !(c.error_sd > 0.0 && c.error_sd.is_finite()) {
                return Err(MvcError::config(
                    format!("components[{k}].error_sd"),
                    "must be positive and finite",
                ));
            }
            for (r, reg) in c.regressors.iter().enumerate() {
                let ok = match *reg {
                    RegressorSpec::Gaussian { mean, sd } => {
                        mean.is_finite() && sd.is_finite() && sd >= 0.0
                    }
                    RegressorSpec::Constant { value } => value.is_finite(),
                };
                if !ok {
                    return Err(MvcError::config(
                        format!("components[{k}].regressors[{r}]"),
                        "parameters must be finite with sd >= 0",
                    ));
                }
            }
        }
        match &self.concentrations {
            ConcentrationModel::LinearRamp if self.n_components != 2 => Err(MvcError::config(
                "concentrations.model",
                "linear_ramp requires exactly 2 components",
            )),
            ConcentrationModel::LinearRamp => Ok(()),
            ConcentrationModel::Explicit { matrix } => {
                if matrix.len() != self.n_obs {
                    return Err(MvcError::config(
                        "concentrations.matrix",
                        format!("{} rows for n_obs = {}", matrix.len(), self.n_obs),
                    ));
                }
                if let Some(j) = matrix.iter().position(|r| r.len() != self.n_components) {
                    return Err(MvcError::config(
                        format!("concentrations.matrix[{j}]"),
                        format!("expected {} entries", self.n_components),
                    ));
                }
                ConcentrationMatrix::from_rows(matrix)
                    .map(|_| ())
                    .map_err(|e| MvcError::config("concentrations.matrix", e.to_string()))
            }
        }
    }

    pub fn concentration_matrix(&self) -> Result<ConcentrationMatrix> {
        match &self.concentrations {
            ConcentrationModel::LinearRamp => ConcentrationMatrix::linear_ramp(self.n_obs),
            ConcentrationModel::Explicit { matrix } => ConcentrationMatrix::from_rows(matrix),
        }
    }

    /// Copy with a different sample size and seed.
    pub fn resized(&self, n_obs: usize, seed: u64) -> Self {
        Self {
            n_obs,
            seed,
            ..self.clone()
        }
    }

    pub fn analytic_moments(&self) -> Vec<ComponentMoments> {
        self.components
            .iter()
            .map(ComponentSpec::analytic_moments)
            .collect()
    }

    /// `⟨(aᵐ)² pˢ p^q⟩` as N → ∞ for the ramp; the finite-N value for an
    /// explicit matrix, which has no limit to take.
    pub fn limit_co_moments(&self, m: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        match &self.concentrations {
            ConcentrationModel::LinearRamp => Ok(ramp_limit::co_moments(m)),
            ConcentrationModel::Explicit { .. } => {
                let p = self.concentration_matrix()?;
                let (_, a) = weights_for(&p, DEFAULT_DET_TOL)?;
                weight_co_moments(&a, &p, m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub data: Dataset,
    pub p: ConcentrationMatrix,
    /// True component of each observation; for diagnostics only.
    pub labels: Vec<usize>,
}

fn observation_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

fn draw_observation(
    config: &SimulationConfig,
    p_row: &[f64],
    j: usize,
    x: &mut [f64],
) -> (f64, usize) {
    let mut rng = observation_rng(config.seed, j);
    let u: f64 = rng.random();
    let mut label = p_row.len() - 1;
    let mut cumulative = 0.0;
    for (k, pk) in p_row.iter().enumerate() {
        cumulative += pk;
        if u < cumulative {
            label = k;
            break;
        }
    }
    // rounding can leave the last bucket short; skip zero-probability tails
    while p_row[label] == 0.0 && label > 0 {
        label -= 1;
    }
    let spec = &config.components[label];
    for (xi, reg) in x.iter_mut().zip(&spec.regressors) {
        *xi = reg.draw(&mut rng);
    }
    let z: f64 = rng.sample(StandardNormal);
    let y = x.iter().zip(&spec.true_b).map(|(x, b)| x * b).sum::<f64>() + spec.error_sd * z;
    (y, label)
}

fn assemble(
    config: &SimulationConfig,
    p: ConcentrationMatrix,
    obs: Vec<(f64, usize, Vec<f64>)>,
) -> Result<SimulatedDataset> {
    let d = config.n_regressors();
    let mut y = Vec::with_capacity(obs.len());
    let mut x = Vec::with_capacity(obs.len() * d);
    let mut labels = Vec::with_capacity(obs.len());
    for (yj, label, xj) in obs {
        y.push(yj);
        labels.push(label);
        x.extend(xj);
    }
    Ok(SimulatedDataset {
        data: Dataset::new(y, x, d)?,
        p,
        labels,
    })
}

pub fn generate(config: &SimulationConfig) -> Result<SimulatedDataset> {
    config.validate()?;
    let p = config.concentration_matrix()?;
    let d = config.n_regressors();
    let obs = (0..config.n_obs)
        .map(|j| {
            let mut x = vec![0.0; d];
            let (y, label) = draw_observation(config, p.row(j), j, &mut x);
            (y, label, x)
        })
        .collect();
    assemble(config, p, obs)
}

/// Same output as [`generate`], with observations drawn in parallel.
pub fn generate_parallel(config: &SimulationConfig) -> Result<SimulatedDataset> {
    config.validate()?;
    let p = config.concentration_matrix()?;
    let d = config.n_regressors();
    let obs = (0..config.n_obs)
        .into_par_iter()
        .map(|j| {
            let mut x = vec![0.0; d];
            let (y, label) = draw_observation(config, p.row(j), j, &mut x);
            (y, label, x)
        })
        .collect();
    assemble(config, p, obs)
}
