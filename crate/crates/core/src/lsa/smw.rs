//! Rank-3 Sherman–Morrison–Woodbury update for replacing one strategy row by two.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::errors::{Error, Result};

/// Signs of the update: the removed row enters with −1, the added rows with +1.
pub const SIGNS: [f64; 3] = [-1.0, 1.0, 1.0];

/// Replace row `v` by rows `v′` and `v″`: the Gram changes by
/// `U C Uᵀ` with `U = [v, v′, v″]` and `C = diag(−1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmwUpdate {
    pub removed: DVector<f64>,
    pub added: [DVector<f64>; 2],
}

impl SmwUpdate {
    pub fn new(removed: DVector<f64>, first: DVector<f64>, second: DVector<f64>) -> Result<Self> {
        if first.len() != removed.len() || second.len() != removed.len() {
            return Err(Error::Shape("update rows differ in length".into()));
        }
        Ok(Self {
            removed,
            added: [first, second],
        })
    }

    /// A split: the removed row is `first + second`.
    pub fn split(first: DVector<f64>, second: DVector<f64>) -> Result<Self> {
        let removed = &first + &second;
        Self::new(removed, first, second)
    }

    pub fn u(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&[
            self.removed.clone(),
            self.added[0].clone(),
            self.added[1].clone(),
        ])
    }

    pub fn lambda(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&SIGNS.into())
    }
}

/// Capacitance matrix `C + Uᵀ X⁻¹ U` (with `C⁻¹ = C`) and its inverse.
pub(crate) fn capacitance_inverse(s: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut k = *s;
    for (i, sign) in SIGNS.iter().enumerate() {
        k[(i, i)] += sign;
    }
    let inv = k.try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// `(X + U C Uᵀ)⁻¹` from `X⁻¹` in `O(n²)`.
///
/// Fails with a rank error when the capacitance matrix is singular, which
/// happens exactly when the updated Gram is singular; the caller then falls
/// back to a direct factorization.
pub fn smw_update(inverse: &DMatrix<f64>, update: &SmwUpdate) -> Result<DMatrix<f64>> {
    let n = inverse.nrows();
    if inverse.ncols() != n || update.removed.len() != n {
        return Err(Error::Shape("update does not match the inverse".into()));
    }
    let u = update.u();
    let z = inverse * &u;
    let s = u.tr_mul(&z);
    let s3 = Matrix3::from_iterator(s.iter().copied());
    let kinv = capacitance_inverse(&s3)
        .ok_or_else(|| Error::Rank("singular capacitance matrix".into()))?;
    let kinv = DMatrix::from_iterator(3, 3, kinv.iter().copied());
    let mut out = inverse.clone();
    out.gemm(-1.0, &z, &(kinv * z.transpose()), 1.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{relative_frobenius_diff, spd_inverse};

    #[test]
    fn reconstruction_leaves_gram_unchanged() {
        let x_inv = DMatrix::identity(2, 2) * 0.5;
        let up = SmwUpdate::new(
            DVector::from_vec(vec![2f64.sqrt(), 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let got = smw_update(&x_inv, &up).unwrap();
        assert!(relative_frobenius_diff(&got, &x_inv) < 1e-14);
    }

    #[test]
    fn splitting_the_total_over_two_cells() {
        // Gram I + 11ᵀ (identity plus the total), split the total into e₁ and e₂.
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let up = SmwUpdate::split(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        )
        .unwrap();
        let got = smw_update(&spd_inverse(&x).unwrap(), &up).unwrap();
        assert!(relative_frobenius_diff(&got, &(DMatrix::identity(2, 2) * 0.5)) < 1e-14);
    }

    #[test]
    fn singular_result_is_rejected() {
        // Removing the only row that covers cell 1 leaves a singular Gram.
        let x_inv = DMatrix::identity(2, 2);
        let up = SmwUpdate::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(smw_update(&x_inv, &up), Err(Error::Rank(_))));
    }
}
