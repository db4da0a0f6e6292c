//! Weighted empirical moments of a single mixture component.
//!
//! Every estimate here is an average `(1/N) Σ_j a_j g(y_j, x_j)` with signed
//! weights `a` for one component. The weighted empirical measure itself is
//! never built; only its integrals are needed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MvcError, Result};

/// Rows per block in parallel reductions. Fixed so the result does not
/// depend on the number of worker threads.
const BLOCK_ROWS: usize = 4096;

/// How row reductions are summed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summation {
    /// Strict left-to-right sum over rows.
    #[default]
    Sequential,
    /// Fixed-size blocks summed in parallel, partials combined in order.
    Parallel,
}

/// Responses `y` and regressors `x` (row-major, N×d).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    n_obs: usize,
    n_regressors: usize,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, n_regressors: usize) -> Result<Self> {
        let n_obs = y.len();
        if n_regressors == 0 {
            return Err(MvcError::InvalidDataset(
                "at least one regressor is required".into(),
            ));
        }
        if x.len() != n_obs * n_regressors {
            return Err(MvcError::DimensionMismatch(format!(
                "x has {} entries, expected {n_obs}x{n_regressors}",
                x.len()
            )));
        }
        if n_obs <= n_regressors {
            return Err(MvcError::InvalidDataset(format!(
                "need more observations ({n_obs}) than regressors ({n_regressors})"
            )));
        }
        if let Some(j) = y.iter().position(|v| !v.is_finite()) {
            return Err(MvcError::InvalidDataset(format!(
                "non-finite response at row {j}"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(MvcError::InvalidDataset(format!(
                "non-finite regressor at row {}",
                i / n_regressors
            )));
        }
        Ok(Self {
            y,
            x,
            n_obs,
            n_regressors,
        })
    }

    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(MvcError::DimensionMismatch("ragged regressor rows".into()));
        }
        Self::new(y, rows.concat(), d)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_regressors(&self) -> usize {
        self.n_regressors
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_row(&self, j: usize) -> &[f64] {
        &self.x[j * self.n_regressors..(j + 1) * self.n_regressors]
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x
    }

    /// Copy with a column of ones prepended to the regressors.
    pub fn with_intercept(&self) -> Result<Self> {
        let d = self.n_regressors + 1;
        let mut x = Vec::with_capacity(self.n_obs * d);
        for j in 0..self.n_obs {
            x.push(1.0);
            x.extend_from_slice(self.x_row(j));
        }
        Self::new(self.y.clone(), x, d)
    }

    fn check_weights(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.n_obs {
            return Err(MvcError::DimensionMismatch(format!(
                "{} weights for {} observations",
                a.len(),
                self.n_obs
            )));
        }
        Ok(())
    }
}

/// Sums `f(j, acc)` over all rows into an accumulator of length `k`.
fn accumulate<F>(n: usize, k: usize, mode: Summation, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    match mode {
        Summation::Sequential => {
            let mut acc = vec![0.0; k];
            for j in 0..n {
                f(j, &mut acc);
            }
            acc
        }
        Summation::Parallel => {
            let blocks: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK_ROWS))
                .into_par_iter()
                .map(|b| {
                    let mut acc = vec![0.0; k];
                    for j in b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(n) {
                        f(j, &mut acc);
                    }
                    acc
                })
                .collect();
            let mut acc = vec![0.0; k];
            for block in blocks {
                for (t, v) in acc.iter_mut().zip(block) {
                    *t += v;
                }
            }
            acc
        }
    }
}

/// `(1/N) Σ_j a_j g(y_j, x_j)` for a vector-valued `g`.
pub fn weighted_moment<G, V>(data: &Dataset, a: &[f64], g: G) -> Result<Vec<f64>>
where
    G: Fn(f64, &[f64]) -> V,
    V: AsRef<[f64]>,
{
    data.check_weights(a)?;
    let mut acc: Vec<f64> = Vec::new();
    for j in 0..data.n_obs {
        let out = g(data.y[j], data.x_row(j));
        let out = out.as_ref();
        if j == 0 {
            acc = vec![0.0; out.len()];
        } else if out.len() != acc.len() {
            return Err(MvcError::DimensionMismatch(format!(
                "moment function returned {} values at row {j}, expected {}",
                out.len(),
                acc.len()
            )));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(MvcError::NonFiniteMoment { row: j });
        }
        for (t, v) in acc.iter_mut().zip(out) {
            *t += a[j] * v;
        }
    }
    let n = data.n_obs as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Weighted normal-equation moments `(1/N) Σ a_j x_j x_jᵀ` and `(1/N) Σ a_j y_j x_j`.
pub fn component_regression_moments(
    data: &Dataset,
    a: &[f64],
    mode: Summation,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    data.check_weights(a)?;
    let d = data.n_regressors;
    // upper triangle of xtx row by row, then xty
    let tri = d * (d + 1) / 2;
    let acc = accumulate(data.n_obs, tri + d, mode, |j, acc| {
        let w = a[j];
        let x = data.x_row(j);
        let mut t = 0;
        for i in 0..d {
            let wx = w * x[i];
            for k in i..d {
                acc[t] += wx * x[k];
                t += 1;
            }
            acc[tri + i] += wx * data.y[j];
        }
    });
    let n = data.n_obs as f64;
    let mut xtx = DMatrix::zeros(d, d);
    let mut t = 0;
    for i in 0..d {
        for k in i..d {
            xtx[(i, k)] = acc[t] / n;
            xtx[(k, i)] = acc[t] / n;
            t += 1;
        }
    }
    let xty = DVector::from_iterator(d, acc[tri..].iter().map(|v| v / n));
    Ok((xtx, xty))
}

/// `(1/N) Σ_j a_j (y_j − x_jᵀ b)²`. With signed weights this need not be
/// bounded below, so the estimator is not in general its minimizer.
pub fn objective(data: &Dataset, a: &[f64], b: &[f64]) -> Result<f64> {
    data.check_weights(a)?;
    if b.len() != data.n_regressors {
        return Err(MvcError::DimensionMismatch(format!(
            "{} coefficients for {} regressors",
            b.len(),
            data.n_regressors
        )));
    }
    let sum: f64 = (0..data.n_obs)
        .map(|j| {
            let fitted: f64 = data.x_row(j).iter().zip(b).map(|(x, b)| x * b).sum();
            a[j] * (data.y[j] - fitted).powi(2)
        })
        .sum();
    Ok(sum / data.n_obs as f64)
}

/// `(1/N) Σ_j a_j (y_j − x_jᵀ b)²`, the weighted residual second moment.
pub fn weighted_residual_variance(
    data: &Dataset,
    a: &[f64],
    b: &DVector<f64>,
    mode: Summation,
) -> Result<f64> {
    data.check_weights(a)?;
    let acc = accumulate(data.n_obs, 1, mode, |j, acc| {
        let fitted: f64 = data.x_row(j).iter().zip(b.iter()).map(|(x, b)| x * b).sum();
        acc[0] += a[j] * (data.y[j] - fitted).powi(2);
    });
    Ok(acc[0] / data.n_obs as f64)
}

/// Dense d×d×d×d tensor of fourth moments `E[XⁱXᵏX^qXˡ]`, index order (i, k, q, l).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dim: usize,
    values: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim.pow(4)],
        }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for k in 0..dim {
                for q in 0..dim {
                    for l in 0..dim {
                        let idx = t.index(i, k, q, l);
                        t.values[idx] = f(i, k, q, l);
                    }
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn index(&self, i: usize, k: usize, q: usize, l: usize) -> usize {
        ((i * self.dim + k) * self.dim + q) * self.dim + l
    }

    pub fn get(&self, i: usize, k: usize, q: usize, l: usize) -> f64 {
        self.values[self.index(i, k, q, l)]
    }

    /// `Σ_{q,l} u_q L[i,k,q,l] v_l` for every (i, k).
    pub fn contract(&self, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, k| {
            let mut s = 0.0;
            for q in 0..d {
                for l in 0..d {
                    s += u[q] * self.get(i, k, q, l) * v[l];
                }
            }
            s
        })
    }
}

/// Weighted fourth-moment tensor `(1/N) Σ a_j x_i x_k x_q x_l`, summed over
/// sorted index tuples so every permutation receives the identical value.
pub fn weighted_fourth_moments(data: &Dataset, a: &[f64], mode: Summation) -> Result<Tensor4> {
    data.check_weights(a)?;
    let d = data.n_regressors;
    let mut tuples = Vec::new();
    for i in 0..d {
        for k in i..d {
            for q in k..d {
                for l in q..d {
                    tuples.push([i, k, q, l]);
                }
            }
        }
    }
    let acc = accumulate(data.n_obs, tuples.len(), mode, |j, acc| {
        let x = data.x_row(j);
        let w = a[j];
        for (t, [i, k, q, l]) in acc.iter_mut().zip(&tuples) {
            *t += w * x[*i] * x[*k] * x[*q] * x[*l];
        }
    });
    let n = data.n_obs as f64;
    let mut out = Tensor4::zeros(d);
    for (v, idx) in acc.iter().zip(&tuples) {
        let v = v / n;
        for perm in permutations(*idx) {
            let at = out.index(perm[0], perm[1], perm[2], perm[3]);
            out.values[at] = v;
        }
    }
    Ok(out)
}

fn permutations(idx: [usize; 4]) -> Vec<[usize; 4]> {
    const ORDERS: [[usize; 4]; 24] = [
        [0, 1, 2, 3],
        [0, 1, 3, 2],
        [0, 2, 1, 3],
        [0, 2, 3, 1],
        [0, 3, 1, 2],
        [0, 3, 2, 1],
        [1, 0, 2, 3],
        [1, 0, 3, 2],
        [1, 2, 0, 3],
        [1, 2, 3, 0],
        [1, 3, 0, 2],
        [1, 3, 2, 0],
        [2, 0, 1, 3],
        [2, 0, 3, 1],
        [2, 1, 0, 3],
        [2, 1, 3, 0],
        [2, 3, 0, 1],
        [2, 3, 1, 0],
        [3, 0, 1, 2],
        [3, 0, 2, 1],
        [3, 1, 0, 2],
        [3, 1, 2, 0],
        [3, 2, 0, 1],
        [3, 2, 1, 0],
    ];
    ORDERS
        .iter()
        .map(|o| [idx[o[0]], idx[o[1]], idx[o[2]], idx[o[3]]])
        .collect()
}

/// Moments of one component entering the asymptotic covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMoments {
    /// `E[X Xᵀ | κ = s]`.
    pub d2: DMatrix<f64>,
    /// `E[XⁱXᵏX^qXˡ | κ = s]`.
    pub l4: Tensor4,
    /// Error variance.
    pub sigma2: f64,
    /// Regression coefficients.
    pub b: DVector<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tiny() -> Dataset {
        Dataset::from_rows(vec![1.0, 4.0], &[vec![1.0], vec![2.0]]).unwrap()
    }

    #[test]
    fn dataset_guards() {
        assert!(Dataset::from_rows(vec![1.0], &[vec![1.0]]).is_err());
        assert!(
            Dataset::from_rows(vec![1.0, f64::NAN, 2.0], &[vec![1.0], vec![2.0], vec![3.0]])
                .is_err()
        );
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0], 1).is_err());
    }

    #[test]
    fn constant_moment_is_weight_mean() {
        let data = tiny();
        let m = weighted_moment(&data, &[2.0, 0.0], |_, _| [1.0]).unwrap();
        assert_eq!(m, vec![1.0]);
    }

    #[test]
    fn unit_weights_give_sample_mean() {
        let data =
            Dataset::from_rows(vec![1.0, 2.0, 6.0], &[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let m = weighted_moment(&data, &[1.0; 3], |y, _| [y]).unwrap();
        assert_relative_eq!(m[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_moment_reports_row() {
        let data = tiny();
        let err = weighted_moment(&data, &[1.0, 1.0], |y, _| [1.0 / (y - 4.0)]).unwrap_err();
        assert_eq!(err, MvcError::NonFiniteMoment { row: 1 });
    }

    #[test]
    fn regression_moments_by_hand() {
        let (xtx, xty) =
            component_regression_moments(&tiny(), &[2.0, 0.0], Summation::Sequential).unwrap();
        assert_eq!(xtx[(0, 0)], 1.0);
        assert_eq!(xty[0], 1.0);
    }

    #[test]
    fn objective_basics() {
        let data = tiny();
        assert_eq!(objective(&data, &[1.0, 1.0], &[0.0]).unwrap(), 8.5);
        let exact = Dataset::from_rows(vec![2.0, 4.0], &[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(objective(&exact, &[1.0, -3.0], &[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn objective_minimized_at_ols() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.random::<f64>() * 4.0])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 + 2.0 * r[1] + rng.random::<f64>() - 0.5)
            .collect();
        let data = Dataset::from_rows(y, &rows).unwrap();
        let ones = vec![1.0; n];
        let (xtx, xty) = component_regression_moments(&data, &ones, Summation::Sequential).unwrap();
        let b = xtx.lu().solve(&xty).unwrap();
        let best = objective(&data, &ones, b.as_slice()).unwrap();
        for i in 0..2 {
            for eps in [-0.01, 0.01] {
                let mut bb = b.clone();
                bb[i] += eps;
                assert!(objective(&data, &ones, bb.as_slice()).unwrap() > best);
            }
        }
    }

    #[test]
    fn fourth_moments_are_symmetric() {
        let data = Dataset::from_rows(
            vec![0.0; 4],
            &[
                vec![1.0, 2.0, 0.5],
                vec![1.0, -1.0, 3.0],
                vec![1.0, 0.3, 0.2],
                vec![1.0, 1.5, -2.0],
            ],
        )
        .unwrap();
        let a = [1.0, -0.5, 2.0, 0.25];
        let l = weighted_fourth_moments(&data, &a, Summation::Sequential).unwrap();
        let direct = |i: usize, k: usize, q: usize, m: usize| {
            (0..4)
                .map(|j| {
                    let x = data.x_row(j);
                    a[j] * x[i] * x[k] * x[q] * x[m]
                })
                .sum::<f64>()
                / 4.0
        };
        for i in 0..3 {
            for k in 0..3 {
                for q in 0..3 {
                    for m in 0..3 {
                        assert_relative_eq!(l.get(i, k, q, m), direct(i, k, q, m), epsilon = 1e-13);
                        assert_eq!(l.get(i, k, q, m), l.get(k, i, m, q));
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let n = 20_000;
        let rows: Vec<Vec<f64>> = (0..n).map(|j| vec![1.0, (j as f64).sin()]).collect();
        let y: Vec<f64> = (0..n).map(|j| (j as f64 * 0.37).cos()).collect();
        let a: Vec<f64> = (0..n)
            .map(|j| 6.0 * (j + 1) as f64 / n as f64 - 2.0)
            .collect();
        let data = Dataset::from_rows(y, &rows).unwrap();
        let (s1, v1) = component_regression_moments(&data, &a, Summation::Sequential).unwrap();
        let (s2, v2) = component_regression_moments(&data, &a, Summation::Parallel).unwrap();
        assert!((s1 - s2).amax() <= 1e-10);
        assert!((v1 - v2).amax() <= 1e-10);
    }

    proptest! {
        #[test]
        fn weighted_moment_is_linear(
            ys in proptest::collection::vec(-10.0f64..10.0, 5..40),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let n = ys.len();
            let rows: Vec<Vec<f64>> = (0..n).map(|j| vec![j as f64 * 0.1]).collect();
            let a: Vec<f64> = (0..n).map(|j| 1.0 - 0.1 * j as f64).collect();
            let data = Dataset::from_rows(ys, &rows).unwrap();
            let g1 = |y: f64, x: &[f64]| [y * x[0], y];
            let g2 = |y: f64, x: &[f64]| [x[0] * x[0], y * y];
            let m1 = weighted_moment(&data, &a, g1).unwrap();
            let m2 = weighted_moment(&data, &a, g2).unwrap();
            let mix = weighted_moment(&data, &a, |y, x| {
                let (u, v) = (g1(y, x), g2(y, x));
                [alpha * u[0] + beta * v[0], alpha * u[1] + beta * v[1]]
            }).unwrap();
            for i in 0..2 {
                let lin = alpha * m1[i] + beta * m2[i];
                prop_assert!((mix[i] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
            }
        }
    }
}
