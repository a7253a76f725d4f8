//! Total and per-query error of the matrix mechanism, and the singular value bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::errors::{Error, Result};
use crate::io::fmt_sig;
use crate::linalg;
use crate::strategy::{is_column_uniform, Strategy};
use crate::workload::Workload;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

/// Privacy setting that fixes the noise factor `P` and the sensitivity norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
#[derive(Default)]
pub enum PrivacyParams {
    /// `P = 1` with L2 sensitivity: the reporting convention for ratios and bounds.
    #[default]
    Normalized,
    /// (ε,δ) with Gaussian noise: `P = 2 ln(2/δ) / ε²`, L2 sensitivity.
    Approximate { epsilon: f64, delta: f64 },
    /// Pure ε with Laplace noise: `P = 2 / ε²`, L1 sensitivity.
    Pure { epsilon: f64 },
}


impl PrivacyParams {
    pub fn approximate(epsilon: f64, delta: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(PrivacyParams::Approximate { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(PrivacyParams::Pure { epsilon })
    }

    /// `delta = 0` selects the pure variant.
    pub fn from_epsilon_delta(epsilon: f64, delta: f64) -> Result<Self> {
        if delta == 0.0 {
            Self::pure(epsilon)
        } else {
            Self::approximate(epsilon, delta)
        }
    }

    /// The factor `P` multiplying squared sensitivity in the error formula.
    pub fn factor(&self) -> f64 {
        match *self {
            PrivacyParams::Normalized => 1.0,
            PrivacyParams::Approximate { epsilon, delta } => {
                2.0 * (2.0 / delta).ln() / (epsilon * epsilon)
            }
            PrivacyParams::Pure { epsilon } => 2.0 / (epsilon * epsilon),
        }
    }

    pub fn uses_l1(&self) -> bool {
        matches!(self, PrivacyParams::Pure { .. })
    }

    /// Squared sensitivity of `strategy` in the norm this variant calibrates to.
    pub fn sensitivity(&self, strategy: &Strategy) -> f64 {
        if self.uses_l1() {
            strategy.l1_sensitivity()
        } else {
            strategy.l2_sensitivity()
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

fn check_shapes(w: &Workload, a: &Strategy) -> Result<()> {
    if w.n() != a.n() {
        return Err(Error::Shape(format!(
            "workload has {} cells, strategy has {}",
            w.n(),
            a.n()
        )));
    }
    Ok(())
}

/// `P · ‖A‖² · trace(WᵀW (AᵀA)⁻¹)`.
pub fn total_error(w: &Workload, a: &Strategy, privacy: &PrivacyParams) -> Result<f64> {
    check_shapes(w, a)?;
    let s = privacy.sensitivity(a);
    Ok(privacy.factor() * s * s * linalg::trace_of_product(w.gram(), a.gram_inverse()))
}

/// Mean squared error of a single query `q` answered through `a`.
pub fn query_error(a: &Strategy, q: &DVector<f64>, privacy: &PrivacyParams) -> Result<f64> {
    if q.len() != a.n() {
        return Err(Error::Shape(format!("query has {} entries, strategy has {} cells", q.len(), a.n())));
    }
    let s = privacy.sensitivity(a);
    Ok(privacy.factor() * s * s * q.dot(&(a.gram_inverse() * q)))
}

/// `(Σ √λᵢ)² / n` over the eigenvalues of `gram`.
pub fn svd_bound_of_gram(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    let eig = linalg::symmetric_eigenvalues(gram);
    let max = eig.last().copied().unwrap_or(0.0).max(0.0);
    let cutoff = EIGEN_CLAMP * max;
    let root_sum: f64 = eig.iter().filter(|&&l| l > cutoff).map(|l| l.sqrt()).sum();
    root_sum * root_sum / n as f64
}

/// Lower bound on the total error of any strategy for `w`.
pub fn svd_bound(w: &Workload, privacy: &PrivacyParams) -> f64 {
    privacy.factor() * svd_bound_of_gram(w.gram())
}

/// `total_error / svd_bound`; the privacy factor cancels.
pub fn error_ratio(w: &Workload, a: &Strategy) -> Result<f64> {
    let p = PrivacyParams::Normalized;
    Ok(total_error(w, a, &p)? / svd_bound(w, &p))
}

/// Whether the strategy `A = Λ^{1/4} Qᵀ` built from the Gram eigendecomposition
/// `WᵀW = Q Λ Qᵀ` is column-uniform. That strategy has `AᵀA = (WᵀW)^{1/2}` and
/// error exactly the bound once its columns share one norm, so this is
/// the same as asking whether `(WᵀW)^{1/2}` has a constant diagonal.
pub fn svdb_achievable(w: &Workload, tol: f64) -> bool {
    let eig = w.gram().clone().symmetric_eigen();
    let max = eig.eigenvalues.max().max(0.0);
    let mut scaled = eig.eigenvectors.transpose();
    for (mut row, &l) in scaled.row_iter_mut().zip(eig.eigenvalues.iter()) {
        let l = if l > EIGEN_CLAMP * max { l } else { 0.0 };
        row *= l.sqrt().sqrt();
    }
    is_column_uniform(&scaled, 2, tol)
}

/// One row of the error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub workload: String,
    pub strategy: String,
    pub n: usize,
    pub total_error: f64,
    pub svdb: f64,
    pub ratio: f64,
    pub sensitivity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_query: Option<Vec<f64>>,
}

impl ErrorReport {
    pub const CSV_HEADER: &'static str = "workload,strategy,n,total_error,svdb,ratio,sensitivity";

    pub fn evaluate(
        workload_label: &str,
        w: &Workload,
        a: &Strategy,
        privacy: &PrivacyParams,
    ) -> Result<Self> {
        let total = total_error(w, a, privacy)?;
        let svdb = svd_bound(w, privacy);
        Ok(Self {
            workload: workload_label.to_string(),
            strategy: a.name().to_string(),
            n: w.n(),
            total_error: total,
            svdb,
            ratio: total / svdb,
            sensitivity: privacy.sensitivity(a),
            per_query: None,
        })
    }

    /// Adds per-query errors; needs the workload's dense rows.
    pub fn with_per_query(mut self, w: &Workload, a: &Strategy, privacy: &PrivacyParams) -> Result<Self> {
        let rows = w.require_rows()?;
        let errs = rows
            .row_iter()
            .map(|r| query_error(a, &r.transpose(), privacy))
            .collect::<Result<Vec<f64>>>()?;
        self.per_query = Some(errs);
        Ok(self)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.workload,
            self.strategy,
            self.n,
            fmt_sig(self.total_error),
            fmt_sig(self.svdb),
            fmt_sig(self.ratio),
            fmt_sig(self.sensitivity)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// (ε,δ) with Gaussian noise.
    Approximate,
    /// Pure ε with Laplace noise.
    Pure,
}

/// Which privacy variant gives lower error for a strategy at equal ε with `δ = 2/n²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub n: usize,
    pub l1: f64,
    pub l2: f64,
    /// `ln^{1/4}(n) · ‖A‖₂`, the threshold of the published rule of thumb.
    pub threshold: f64,
    /// Total error of the pure variant at ε = 1, per unit `trace(WᵀW (AᵀA)⁻¹)`.
    pub pure_factor: f64,
    /// Same for the (ε,δ) variant.
    pub approximate_factor: f64,
    /// Variant with the smaller error, from the two formulas.
    pub lower: Variant,
    /// What the rule `‖A‖₁ > ln^{1/4}(n)·‖A‖₂ ⇒ (ε,δ)` predicts.
    pub rule_prediction: Variant,
}

/// Compares the two variants. Both errors share the trace factor, so only
/// `2‖A‖₁²` and `2 ln(2/δ) ‖A‖₂² = 4 ln(n) ‖A‖₂²` are compared.
pub fn compare_variants(strategy: &Strategy, n: usize) -> Result<VariantComparison> {
    if n < 2 {
        return Err(Error::Argument("comparison needs n >= 2 so that delta = 2/n^2 < 1".into()));
    }
    let l1 = strategy.l1_sensitivity();
    let l2 = strategy.l2_sensitivity();
    let ln_n = (n as f64).ln();
    let delta = 2.0 / (n as f64).powi(2);
    let pure_factor = PrivacyParams::Pure { epsilon: 1.0 }.factor() * l1 * l1;
    let approximate_factor = PrivacyParams::Approximate { epsilon: 1.0, delta }.factor() * l2 * l2;
    let threshold = ln_n.powf(0.25) * l2;
    Ok(VariantComparison {
        n,
        l1,
        l2,
        threshold,
        pure_factor,
        approximate_factor,
        lower: if approximate_factor < pure_factor {
            Variant::Approximate
        } else {
            Variant::Pure
        },
        rule_prediction: if l1 > threshold {
            Variant::Approximate
        } else {
            Variant::Pure
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{hierarchical_strategy, identity_strategy};
    use crate::workload::{build_all_range, gram_all_predicate, DomainShape};

    fn line(n: usize) -> DomainShape {
        DomainShape::line(n).unwrap()
    }

    const P1: PrivacyParams = PrivacyParams::Normalized;

    #[test]
    fn identity_errors() {
        for n in [1, 4, 9] {
            let w = Workload::identity(line(n));
            let a = identity_strategy(n).unwrap();
            assert!((total_error(&w, &a, &P1).unwrap() - n as f64).abs() < 1e-12);
            assert!((svd_bound(&w, &P1) - n as f64).abs() < 1e-9);
            assert!(svdb_achievable(&w, 1e-9));
        }
    }

    #[test]
    fn all_range_four_on_identity() {
        let w = build_all_range(&line(4), false).unwrap();
        let a = identity_strategy(4).unwrap();
        assert!((total_error(&w, &a, &P1).unwrap() - 20.0).abs() < 1e-12);
        // Recorded result: the diagonal of (WᵀW)^{1/2} is not constant.
        assert!(!svdb_achievable(&w, 1e-6));
    }

    #[test]
    fn all_predicate_bound() {
        let w = Workload::from_gram(line(4), gram_all_predicate(4), Some(16)).unwrap();
        assert!((svd_bound(&w, &P1) - 27.4164).abs() < 1e-4);
        assert!(svdb_achievable(&w, 1e-9));
    }

    #[test]
    fn query_errors() {
        let a = identity_strategy(3).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((query_error(&a, &e1, &P1).unwrap() - 1.0).abs() < 1e-15);
        let scaled = Strategy::new(line(3), DMatrix::identity(3, 3) * 2.0).unwrap();
        assert!((query_error(&scaled, &e1, &P1).unwrap() - 1.0).abs() < 1e-15);
        assert!(query_error(&a, &DVector::zeros(2), &P1).is_err());
    }

    #[test]
    fn per_query_sum_matches_total() {
        let w = build_all_range(&line(8), true).unwrap();
        let a = hierarchical_strategy(8, 2).unwrap();
        let r = ErrorReport::evaluate("allrange[8]", &w, &a, &P1)
            .unwrap()
            .with_per_query(&w, &a, &P1)
            .unwrap();
        let sum: f64 = r.per_query.as_ref().unwrap().iter().sum();
        assert!((sum - r.total_error).abs() <= 1e-9 * r.total_error);
        assert!(r.ratio >= 1.0);
    }

    #[test]
    fn privacy_factors() {
        let p = PrivacyParams::approximate(1.0, 2.0 / std::f64::consts::E.powi(2)).unwrap();
        assert!((p.factor() - 4.0).abs() < 1e-12);
        assert_eq!(PrivacyParams::pure(2.0).unwrap().factor(), 0.5);
        assert!(PrivacyParams::approximate(1.0, 0.0).is_err());
        assert!(PrivacyParams::approximate(0.0, 0.1).is_err());
        assert!(matches!(PrivacyParams::from_epsilon_delta(1.0, 0.0), Ok(PrivacyParams::Pure { .. })));
    }

    #[test]
    fn shape_mismatch() {
        let w = Workload::identity(line(3));
        let a = identity_strategy(4).unwrap();
        assert!(matches!(total_error(&w, &a, &P1), Err(Error::Shape(_))));
    }

    #[test]
    fn variant_comparison() {
        let id = compare_variants(&identity_strategy(4).unwrap(), 4).unwrap();
        assert_eq!(id.lower, Variant::Pure);
        assert_eq!(id.rule_prediction, Variant::Pure);

        let h = compare_variants(&hierarchical_strategy(1024, 2).unwrap(), 1024).unwrap();
        assert_eq!(h.l1, 11.0);
        assert!((h.l2 * h.l2 - 11.0).abs() < 1e-9);
        assert_eq!(h.rule_prediction, Variant::Approximate);
        // 2·11² = 242 against 4·ln(1024)·11 ≈ 305.
        assert!((h.pure_factor - 242.0).abs() < 1e-9);
        assert!((h.approximate_factor - 4.0 * 1024f64.ln() * 11.0).abs() < 1e-9);
        assert_eq!(h.lower, Variant::Pure);
    }

    #[test]
    fn csv_row_format() {
        let w = Workload::identity(line(2));
        let a = identity_strategy(2).unwrap();
        let r = ErrorReport::evaluate("identity[2]", &w, &a, &P1).unwrap();
        assert_eq!(r.csv_row(), "identity[2],identity,2,2,2,1,1");
    }
}
