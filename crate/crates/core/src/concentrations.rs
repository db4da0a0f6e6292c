//! Known mixing probabilities, their Gramian, and the minimax weights.
//!
//! For observation `j` and component `k` the concentration `p[j][k]` is the
//! probability that `j` was drawn from component `k`. The weights `a[j][m]`
//! built here turn averages over the whole sample into unbiased averages for
//! component `m`: they satisfy `(1/N) Σ_j a[j][m] p[j][k] = δ_mk`.

use nalgebra::DMatrix;

use crate::error::{MvcError, Result};
use crate::linalg;

/// Default floor for det Γ_N below which weights are refused.
pub const DEFAULT_DET_TOL: f64 = 1e-8;

/// Tolerance on row sums used by [`ConcentrationMatrix::new`].
pub const ROW_SUM_TOL: f64 = 1e-9;

/// N×M matrix of known mixing probabilities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMatrix {
    values: Vec<f64>,
    n_obs: usize,
    n_components: usize,
}

impl ConcentrationMatrix {
    /// Validates a row-major N×M matrix. Rows must sum to one within
    /// [`ROW_SUM_TOL`]; nothing is renormalized.
    pub fn new(values: Vec<f64>, n_obs: usize, n_components: usize) -> Result<Self> {
        Self::with_tolerance(values, n_obs, n_components, ROW_SUM_TOL)
    }

    pub fn with_tolerance(
        values: Vec<f64>,
        n_obs: usize,
        n_components: usize,
        row_sum_tol: f64,
    ) -> Result<Self> {
        if n_components == 0 {
            return Err(MvcError::InvalidConcentrations {
                row: 0,
                reason: "at least one component is required".into(),
            });
        }
        if values.len() != n_obs * n_components {
            return Err(MvcError::DimensionMismatch(format!(
                "expected {} concentration entries for {n_obs}x{n_components}, got {}",
                n_obs * n_components,
                values.len()
            )));
        }
        if n_obs < n_components {
            return Err(MvcError::InvalidConcentrations {
                row: n_obs,
                reason: format!(
                    "need at least as many observations ({n_obs}) as components ({n_components})"
                ),
            });
        }
        for (row, chunk) in values.chunks_exact(n_components).enumerate() {
            if let Some(v) = chunk.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(MvcError::InvalidConcentrations {
                    row,
                    reason: format!("entry {v} outside [0, 1]"),
                });
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > row_sum_tol {
                return Err(MvcError::InvalidConcentrations {
                    row,
                    reason: format!("row sums to {sum}, not 1"),
                });
            }
        }
        Ok(Self {
            values,
            n_obs,
            n_components,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(MvcError::InvalidConcentrations {
                row,
                reason: format!("row has {} entries, expected {m}", r.len()),
            });
        }
        Self::new(rows.concat(), rows.len(), m)
    }

    /// Two-component ramp `p¹_j = j/N`, `p² = 1 − p¹`, j = 1..N.
    pub fn linear_ramp(n_obs: usize) -> Result<Self> {
        let n = n_obs as f64;
        let values = (1..=n_obs)
            .flat_map(|j| {
                let t = j as f64 / n;
                [t, 1.0 - t]
            })
            .collect();
        Self::new(values, n_obs, 2)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_components..(j + 1) * self.n_components]
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n_components + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_components)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn check_component(&self, m: usize) -> Result<()> {
        if m >= self.n_components {
            return Err(MvcError::ComponentIndex {
                index: m,
                n_components: self.n_components,
            });
        }
        Ok(())
    }
}

/// Γ_N = (1/N) pᵀp with its determinant and (l, m)-minors.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianSummary {
    pub gamma: DMatrix<f64>,
    pub det_gamma: f64,
    pub minors: DMatrix<f64>,
}

pub fn build_gramian(p: &ConcentrationMatrix) -> GramianSummary {
    let m = p.n_components();
    let mut gamma = DMatrix::zeros(m, m);
    for row in p.rows() {
        for l in 0..m {
            for k in l..m {
                gamma[(l, k)] += row[l] * row[k];
            }
        }
    }
    let n = p.n_obs() as f64;
    for l in 0..m {
        for k in l..m {
            let v = gamma[(l, k)] / n;
            gamma[(l, k)] = v;
            gamma[(k, l)] = v;
        }
    }
    let det_gamma = linalg::determinant(&gamma);
    let minors = linalg::minors(&gamma);
    GramianSummary {
        gamma,
        det_gamma,
        minors,
    }
}

/// N×M minimax weights, row-major; column `m` estimates component `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Vec<f64>,
    n_obs: usize,
    n_components: usize,
}

impl WeightMatrix {
    /// Wraps externally computed row-major weights.
    pub fn from_raw(values: Vec<f64>, n_obs: usize, n_components: usize) -> Result<Self> {
        if values.len() != n_obs * n_components {
            return Err(MvcError::DimensionMismatch(format!(
                "{} weights for {n_obs}x{n_components}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_obs,
            n_components,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.values[j * self.n_components + m]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_components..(j + 1) * self.n_components]
    }

    /// Weights of component `m` as a contiguous vector.
    pub fn column(&self, m: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(m)
            .step_by(self.n_components)
            .copied()
            .collect()
    }

    /// M×M matrix with (m, k) entry (1/N) Σ_j a[j][m] p[j][k]; the identity
    /// for weights built from `p`.
    pub fn biorthogonality(&self, p: &ConcentrationMatrix) -> DMatrix<f64> {
        let m = self.n_components;
        let mut out = DMatrix::zeros(m, m);
        for j in 0..self.n_obs {
            let a = self.row(j);
            let pr = p.row(j);
            for r in 0..m {
                for k in 0..m {
                    out[(r, k)] += a[r] * pr[k];
                }
            }
        }
        out / self.n_obs as f64
    }
}

/// a[j][m] = (1/det Γ_N) Σ_k (−1)^(k+m) γ_mk p[j][k].
pub fn compute_weights(
    p: &ConcentrationMatrix,
    g: &GramianSummary,
    det_tol: f64,
) -> Result<WeightMatrix> {
    if !(g.det_gamma > det_tol) {
        return Err(MvcError::SingularGramian {
            det: g.det_gamma,
            tol: det_tol,
        });
    }
    let m = p.n_components();
    // coef[(m, k)] = (−1)^(k+m) γ_mk / det
    let coef = DMatrix::from_fn(m, m, |r, k| {
        let sign = if (r + k) % 2 == 0 { 1.0 } else { -1.0 };
        sign * g.minors[(r, k)] / g.det_gamma
    });
    let mut values = Vec::with_capacity(p.n_obs() * m);
    for row in p.rows() {
        for r in 0..m {
            values.push((0..m).map(|k| coef[(r, k)] * row[k]).sum());
        }
    }
    Ok(WeightMatrix {
        values,
        n_obs: p.n_obs(),
        n_components: m,
    })
}

/// Gramian and weights in one step.
pub fn weights_for(
    p: &ConcentrationMatrix,
    det_tol: f64,
) -> Result<(GramianSummary, WeightMatrix)> {
    let g = build_gramian(p);
    let a = compute_weights(p, &g, det_tol)?;
    Ok((g, a))
}

/// (s, q) entry: (1/N) Σ_j (a[j][m])² p[j][s] p[j][q].
pub fn weight_co_moments(
    a: &WeightMatrix,
    p: &ConcentrationMatrix,
    m: usize,
) -> Result<DMatrix<f64>> {
    if a.n_obs() != p.n_obs() || a.n_components() != p.n_components() {
        return Err(MvcError::DimensionMismatch(format!(
            "weights are {}x{}, concentrations {}x{}",
            a.n_obs(),
            a.n_components(),
            p.n_obs(),
            p.n_components()
        )));
    }
    p.check_component(m)?;
    let k = p.n_components();
    let mut out = DMatrix::zeros(k, k);
    for j in 0..p.n_obs() {
        let w2 = a.get(j, m).powi(2);
        let row = p.row(j);
        for s in 0..k {
            for q in s..k {
                out[(s, q)] += w2 * row[s] * row[q];
            }
        }
    }
    let n = p.n_obs() as f64;
    for s in 0..k {
        for q in s..k {
            let v = out[(s, q)] / n;
            out[(s, q)] = v;
            out[(q, s)] = v;
        }
    }
    Ok(out)
}

/// Limits of the ramp design as N → ∞, by Gauss–Legendre quadrature on
/// `t ∈ [0, 1]` with `p¹ = t`, `p² = 1 − t`.
pub mod ramp_limit {
    use nalgebra::DMatrix;

    use crate::linalg;

    // 5-point Gauss–Legendre on [-1, 1]; exact for polynomials of degree ≤ 9.
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_47,
        0.478_628_670_499_366_47,
        0.236_926_885_056_189_08,
        0.236_926_885_056_189_08,
    ];

    fn integrate(f: impl Fn(f64) -> f64) -> f64 {
        NODES
            .iter()
            .zip(WEIGHTS)
            .map(|(x, w)| 0.5 * w * f(0.5 * (x + 1.0)))
            .sum()
    }

    fn conc(t: f64) -> [f64; 2] {
        [t, 1.0 - t]
    }

    /// Limit Gramian ∫ p pᵀ dt.
    pub fn gramian() -> DMatrix<f64> {
        DMatrix::from_fn(2, 2, |l, k| integrate(|t| conc(t)[l] * conc(t)[k]))
    }

    /// Limit weight functions `a^m(t) = Σ_k (Γ⁻¹)_mk p^k(t)`, as affine
    /// coefficients `(intercept, slope)` per component.
    pub fn weight_functions() -> [(f64, f64); 2] {
        let g = gramian();
        let inv = linalg::inverse(&g).expect("ramp Gramian is nonsingular");
        // p¹ = t, p² = 1 − t
        let line = |m: usize| (inv[(m, 1)], inv[(m, 0)] - inv[(m, 1)]);
        [line(0), line(1)]
    }

    /// Limit of ⟨(a^m)² p^s p^q⟩ for the ramp design.
    pub fn co_moments(m: usize) -> DMatrix<f64> {
        let (c0, c1) = weight_functions()[m];
        DMatrix::from_fn(2, 2, |s, q| {
            integrate(|t| (c0 + c1 * t).powi(2) * conc(t)[s] * conc(t)[q])
        })
    }
}
