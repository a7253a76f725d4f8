//! Dense helpers shared by the workload, strategy, and error modules.

use nalgebra::{DMatrix, DVector};

use crate::errors::{Error, Result};

/// `rowsᵀ · rows`. Sparse rows (strategies built from range indicators) are
/// accumulated by outer products over their supports.
pub fn gram(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = rows.shape();
    let supports: Vec<Vec<(usize, f64)>> = rows
        .row_iter()
        .map(|r| r.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect())
        .collect();
    let sparse_cost: usize = supports.iter().map(|s| s.len() * s.len()).sum();
    // The dense product runs several times faster per multiply-add.
    if sparse_cost.saturating_mul(8) >= m.saturating_mul(n * n) {
        return rows.tr_mul(rows);
    }
    let mut g = DMatrix::zeros(n, n);
    for support in &supports {
        for &(j, vj) in support {
            let mut col = g.column_mut(j);
            for &(i, vi) in support {
                col[i] += vi * vj;
            }
        }
    }
    g
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// `trace(a · b)` for symmetric `a` and `b`, without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// `‖a − b‖_F / max(1, ‖a‖_F)`.
pub fn relative_frobenius_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / frobenius(a).max(1.0)
}

/// Averages `m` with its transpose in place to remove roundoff asymmetry.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Column `p`-norms for `p ∈ {1, 2}`.
pub fn column_norms(m: &DMatrix<f64>, p: u8) -> Vec<f64> {
    m.column_iter()
        .map(|c| match p {
            1 => c.iter().map(|v| v.abs()).sum(),
            _ => c.norm(),
        })
        .collect()
}

pub fn dvector_from(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_gram_matches_dense_product() {
        // Narrow indicator rows take the sparse path.
        let n = 40;
        let rows = DMatrix::from_fn(3 * n, n, |r, c| {
            let (lo, len) = (r % n, 1 + r % 3);
            if c >= lo && c < lo + len { 1.0 + (r % 5) as f64 } else { 0.0 }
        });
        assert_eq!(gram(&rows), rows.tr_mul(&rows));
        let dense = DMatrix::from_fn(5, 4, |r, c| (r * 4 + c) as f64 - 7.5);
        assert_eq!(gram(&dense), dense.tr_mul(&dense));
    }

    #[test]
    fn spd_inverse_matches_identity_product() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = spd_inverse(&m).unwrap();
        let id = &m * &inv;
        assert!(relative_frobenius_diff(&id, &DMatrix::identity(3, 3)) < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_inverse(&m), Err(Error::Rank(_))));
    }

    #[test]
    fn trace_of_product_matches_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 5.0]);
        assert_eq!(trace_of_product(&a, &b), (&a * &b).trace());
    }
}
