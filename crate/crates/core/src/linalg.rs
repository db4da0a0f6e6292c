//! Small dense helpers shared by the Gramian and the normal-equation solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest order for which minors are expanded by cofactors.
pub(crate) const COFACTOR_MAX_ORDER: usize = 4;

/// Determinant by Laplace expansion along the first row.
pub(crate) fn det_cofactor(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    match n {
        0 => 1.0,
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        _ => {
            let mut det = 0.0;
            for col in 0..n {
                let entry = a[(0, col)];
                if entry == 0.0 {
                    continue;
                }
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                det += sign * entry * det_cofactor(&submatrix(a, 0, col));
            }
            det
        }
    }
}

/// `a` with row `r` and column `c` removed.
pub(crate) fn submatrix(a: &DMatrix<f64>, r: usize, c: usize) -> DMatrix<f64> {
    a.clone().remove_row(r).remove_column(c)
}

/// Matrix of (l, m)-minors: determinant of `a` with row l and column m deleted.
pub(crate) fn minors(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(n, n, |l, m| {
        let sub = submatrix(a, l, m);
        if n <= COFACTOR_MAX_ORDER {
            det_cofactor(&sub)
        } else {
            sub.lu().determinant()
        }
    })
}

pub(crate) fn determinant(a: &DMatrix<f64>) -> f64 {
    if a.nrows() <= COFACTOR_MAX_ORDER {
        det_cofactor(a)
    } else {
        a.clone().lu().determinant()
    }
}

/// Solution of a symmetric, possibly indefinite, system together with its
/// spectral diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct SymmetricSolve {
    pub solution: Option<DVector<f64>>,
    pub condition: f64,
    pub eigenvalues: DVector<f64>,
}

/// Solves `a x = rhs` for symmetric `a` without assuming definiteness.
///
/// The condition number is the ratio of extreme absolute eigenvalues; it is
/// infinite when `a` has an exactly zero eigenvalue.
pub(crate) fn solve_symmetric(a: &DMatrix<f64>, rhs: &DVector<f64>) -> SymmetricSolve {
    let eigen = SymmetricEigen::new(a.clone());
    let eigenvalues = eigen.eigenvalues;
    let (lo, hi) = eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
    let condition = if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    };
    let solution = a.clone().lu().solve(rhs);
    SymmetricSolve {
        solution,
        condition,
        eigenvalues,
    }
}

/// Inverse of a square matrix, `None` when numerically singular.
pub(crate) fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = a.clone().lu().try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cofactor_matches_lu() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 1.0, -2.0, 0.5, 1.0, 3.0, 0.0, 2.0, -2.0, 0.0, 5.0, 1.0, 0.5, 2.0, 1.0, 6.0,
            ],
        );
        assert_relative_eq!(
            det_cofactor(&a),
            a.clone().lu().determinant(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn minors_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0]));
        let m = minors(&a);
        assert_eq!(m[(0, 0)], 15.0);
        assert_eq!(m[(1, 1)], 10.0);
        assert_eq!(m[(2, 2)], 6.0);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn large_order_minors_agree_with_cofactor() {
        let n = 6;
        let a = DMatrix::from_fn(n, n, |i, j| {
            1.0 / (1.0 + i as f64 + j as f64) + if i == j { 1.0 } else { 0.0 }
        });
        let m = minors(&a);
        let sub = submatrix(&a, 2, 4);
        assert_relative_eq!(m[(2, 4)], sub.lu().determinant(), epsilon = 1e-12);
    }

    #[test]
    fn indefinite_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let rhs = DVector::from_vec(vec![3.0, 3.0]);
        let s = solve_symmetric(&a, &rhs);
        let x = s.solution.unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.condition, 3.0, epsilon = 1e-12);
        assert!(s.eigenvalues.iter().any(|v| *v < 0.0));
    }

    #[test]
    fn singular_has_infinite_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = solve_symmetric(&a, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(s.condition > 1e15);
    }
}
