//! Thin wrappers over nalgebra factorizations with the error reporting the
//! solvers need.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen, LU};

use crate::error::{Error, Result};

/// Maximum absolute column sum.
pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Replaces `m` by (m + mᵀ)/2.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn add_diagonal(m: &DMatrix<f64>, value: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += value;
    }
    out
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Singular(format!("{what} is not symmetric positive definite")))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Pivoted LU of a general square matrix together with its 1-norm
/// reciprocal condition number.
pub struct ConditionedLu {
    pub lu: LU<f64, Dyn, Dyn>,
    pub inverse: DMatrix<f64>,
    pub rcond: f64,
}

pub fn conditioned_lu(m: &DMatrix<f64>) -> ConditionedLu {
    let lu = m.clone().lu();
    match lu.try_inverse() {
        Some(inverse) => {
            let denom = one_norm(m) * one_norm(&inverse);
            let rcond = if denom.is_finite() && denom > 0.0 {
                1.0 / denom
            } else {
                0.0
            };
            ConditionedLu { lu, inverse, rcond }
        }
        None => {
            let n = m.nrows();
            ConditionedLu {
                lu,
                inverse: DMatrix::from_element(n, n, f64::NAN),
                rcond: 0.0,
            }
        }
    }
}

/// Symmetric eigendecomposition with eigenpairs sorted by descending
/// eigenvalue. Eigenvectors are the columns of the returned matrix.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}
