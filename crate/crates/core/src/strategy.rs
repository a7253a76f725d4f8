//! Query strategies: the matrices actually submitted to the noise primitive.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::errors::{Error, Result};
use crate::linalg;
use crate::workload::DomainShape;

/// Smallest accepted ratio of the Gram's extreme eigenvalues.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// Default cosine tolerance for detecting parallel rows.
pub const PARALLEL_TOL: f64 = 1e-9;

/// A full-column-rank strategy matrix with its Gram and (lazily) Gram inverse.
#[derive(Debug, Clone)]
pub struct Strategy {
    name: String,
    shape: DomainShape,
    rows: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_inverse: OnceLock<DMatrix<f64>>,
}

impl Strategy {
    pub fn new(shape: DomainShape, rows: DMatrix<f64>) -> Result<Self> {
        if rows.ncols() != shape.n() {
            return Err(Error::Shape(format!(
                "strategy has {} columns, domain has {} cells",
                rows.ncols(),
                shape.n()
            )));
        }
        let gram = linalg::gram(&rows);
        certify_full_rank(&gram)?;
        Ok(Self {
            name: String::from("custom"),
            shape,
            rows,
            gram,
            gram_inverse: OnceLock::new(),
        })
    }

    /// A square strategy `Lᵀ` with `LLᵀ = gram`.
    ///
    /// Equivalent under the (ε,δ) mechanism to any strategy with this Gram:
    /// the error and the L2 sensitivity depend on `AᵀA` alone. L1 sensitivity
    /// of the factor is not meaningful.
    pub fn from_gram(shape: DomainShape, gram: &DMatrix<f64>) -> Result<Self> {
        if gram.shape() != (shape.n(), shape.n()) {
            return Err(Error::Shape("gram does not match the domain".into()));
        }
        certify_full_rank(gram)?;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Rank("gram is not positive definite".into()))?;
        let rows = chol.l().transpose();
        Ok(Self {
            name: String::from("gram-factor"),
            shape,
            rows,
            gram: gram.clone(),
            gram_inverse: OnceLock::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(AᵀA)⁻¹`, factorized once on first use.
    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        self.gram_inverse.get_or_init(|| {
            linalg::spd_inverse(&self.gram).expect("certified full rank at construction")
        })
    }

    /// Maximum column 2-norm, read off the Gram diagonal.
    pub fn l2_sensitivity(&self) -> f64 {
        self.gram.diagonal().max().max(0.0).sqrt()
    }

    pub fn l1_sensitivity(&self) -> f64 {
        l1_sensitivity(&self.rows)
    }

    /// Kronecker product of per-dimension strategies over the product domain.
    pub fn kronecker(parts: &[Strategy]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("kronecker needs at least one factor".into()))?;
        let mut rows = first.rows.clone();
        let mut dims = first.shape.dims().to_vec();
        for p in &parts[1..] {
            rows = rows.kronecker(&p.rows);
            dims.extend_from_slice(p.shape.dims());
        }
        let name = parts.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join("*");
        Ok(Self::new(DomainShape::new(dims)?, rows)?.with_name(name))
    }
}

fn certify_full_rank(gram: &DMatrix<f64>) -> Result<()> {
    let eig = linalg::symmetric_eigenvalues(gram);
    let (min, max) = (eig[0], eig[eig.len() - 1]);
    if !(max > 0.0) || min <= RANK_THRESHOLD * max {
        return Err(Error::Rank(format!(
            "smallest Gram eigenvalue {min:e} is not above {RANK_THRESHOLD:e} x largest {max:e}"
        )));
    }
    Ok(())
}

/// Maximum column 2-norm.
pub fn l2_sensitivity(m: &DMatrix<f64>) -> f64 {
    linalg::column_norms(m, 2).into_iter().fold(0.0, f64::max)
}

/// Maximum column 1-norm.
pub fn l1_sensitivity(m: &DMatrix<f64>) -> f64 {
    linalg::column_norms(m, 1).into_iter().fold(0.0, f64::max)
}

/// True when every column `p`-norm is within `tol · max` of the largest.
pub fn is_column_uniform(m: &DMatrix<f64>, p: u8, tol: f64) -> bool {
    let norms = linalg::column_norms(m, p);
    let max = norms.iter().copied().fold(0.0, f64::max);
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    max - min <= tol * max
}

pub fn identity_strategy(n: usize) -> Result<Strategy> {
    let shape = DomainShape::line(n)?;
    Ok(Strategy::new(shape, DMatrix::identity(n, n))?.with_name("identity"))
}

/// Subtree-indicator queries of a `branching`-ary tree over the cells,
/// breadth-first from the root down to the unit leaves.
pub fn hierarchical_strategy(n: usize, branching: usize) -> Result<Strategy> {
    if branching < 2 {
        return Err(Error::Argument("branching factor must be at least 2".into()));
    }
    let shape = DomainShape::line(n)?;
    let mut nodes: Vec<(usize, usize)> = Vec::new();
    let mut frontier = vec![(0usize, n)];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &(lo, hi) in &frontier {
            nodes.push((lo, hi));
            let size = hi - lo;
            if size > 1 {
                let children = branching.min(size);
                let (base, extra) = (size / children, size % children);
                let mut start = lo;
                for c in 0..children {
                    let len = base + usize::from(c < extra);
                    next.push((start, start + len));
                    start += len;
                }
            }
        }
        frontier = next;
    }
    let mut rows = DMatrix::zeros(nodes.len(), n);
    for (r, &(lo, hi)) in nodes.iter().enumerate() {
        rows.row_mut(r).columns_mut(lo, hi - lo).fill(1.0);
    }
    Ok(Strategy::new(shape, rows)?.with_name("hierarchical"))
}

/// The ±1 Haar matrix: the total, then difference queries from coarse to fine.
pub fn wavelet_strategy(n: usize) -> Result<Strategy> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Argument(format!("wavelet strategy needs a power-of-two size, got {n}")));
    }
    let shape = DomainShape::line(n)?;
    let mut rows = DMatrix::zeros(n, n);
    rows.row_mut(0).fill(1.0);
    let mut r = 1;
    let mut block = n;
    while block > 1 {
        let half = block / 2;
        for start in (0..n).step_by(block) {
            rows.row_mut(r).columns_mut(start, half).fill(1.0);
            rows.row_mut(r).columns_mut(start + half, half).fill(-1.0);
            r += 1;
        }
        block = half;
    }
    Ok(Strategy::new(shape, rows)?.with_name("wavelet"))
}

/// Merges pairwise-parallel rows: a group `{cᵢ·q̂}` becomes `√(Σcᵢ²)·q̂`.
/// Zero rows are dropped. The Gram is preserved.
pub fn reduce_redundancy(strategy: &Strategy, tol: f64) -> Result<Strategy> {
    let reduced = reduce_rows(strategy.rows(), tol);
    Ok(Strategy::new(strategy.shape().clone(), reduced)?.with_name(strategy.name()))
}

/// The row merge of [`reduce_redundancy`] on a bare matrix.
pub fn reduce_rows(rows: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = rows.ncols();
    struct Group {
        unit: DVector<f64>,
        sum_sq: f64,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut by_support: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for row in rows.row_iter() {
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let unit: DVector<f64> = row.transpose() / norm;
        let support: Vec<usize> = (0..n).filter(|&j| unit[j].abs() > 1e-12).collect();
        let candidates = by_support.entry(support).or_default();
        let hit = candidates.iter().copied().find(|&g| {
            let cos = groups[g].unit.dot(&unit);
            cos.abs() >= 1.0 - tol
        });
        match hit {
            Some(g) => {
                let c = row.transpose().dot(&groups[g].unit);
                groups[g].sum_sq += c * c;
            }
            None => {
                candidates.push(groups.len());
                groups.push(Group { unit, sum_sq: norm * norm });
            }
        }
    }
    let mut reduced = DMatrix::zeros(groups.len(), n);
    for (r, g) in groups.iter().enumerate() {
        reduced.set_row(r, &(g.unit.transpose() * g.sum_sq.sqrt()));
    }
    reduced
}

/// Gram of a variable-agnostic workload: `a` on the diagonal, `b` off it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableAgnosticForm {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl VariableAgnosticForm {
    /// Eigenvalues: `a + (n−1)b` once, `a − b` with multiplicity `n − 1`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        (self.a + (self.n as f64 - 1.0) * self.b, self.a - self.b)
    }

    /// `(1/n)(√(a+(n−1)b) + (n−1)√(a−b))²`.
    pub fn svd_bound(&self) -> f64 {
        let (top, rest) = self.eigenvalues();
        let nf = self.n as f64;
        (top.sqrt() + (nf - 1.0) * rest.max(0.0).sqrt()).powi(2) / nf
    }
}

/// Returns `(a, b)` when all diagonal entries agree and all off-diagonal
/// entries agree, each within `tol · max(1, max|entry|)`.
pub fn is_variable_agnostic(gram: &DMatrix<f64>, tol: f64) -> Option<VariableAgnosticForm> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return None;
    }
    let slack = tol * gram.amax().max(1.0);
    let a = gram[(0, 0)];
    let b = if n > 1 { gram[(0, 1)] } else { 0.0 };
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { a } else { b };
            if (gram[(i, j)] - target).abs() > slack {
                return None;
            }
        }
    }
    Some(VariableAgnosticForm { a, b, n })
}

/// Sylvester ±1 matrix of order `n = 2^k`.
pub fn sylvester_hadamard(n: usize) -> DMatrix<f64> {
    assert!(n.is_power_of_two());
    let mut q = DMatrix::from_element(1, 1, 1.0);
    while q.nrows() < n {
        let m = q.nrows();
        let mut next = DMatrix::zeros(2 * m, 2 * m);
        next.view_mut((0, 0), (m, m)).copy_from(&q);
        next.view_mut((0, m), (m, m)).copy_from(&q);
        next.view_mut((m, 0), (m, m)).copy_from(&q);
        next.view_mut((m, m), (m, m)).copy_from(&(-&q));
        q = next;
    }
    q
}

/// The strategy attaining the singular value bound for a variable-agnostic
/// workload: rows are the Sylvester eigenvectors scaled by the fourth root of
/// the matching Gram eigenvalue, giving `AᵀA = (WᵀW)^{1/2}`.
pub fn variable_agnostic_optimal(form: VariableAgnosticForm) -> Result<Strategy> {
    let n = form.n;
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Argument(format!("variable-agnostic construction needs n = 2^k, got {n}")));
    }
    if form.b < 0.0 {
        return Err(Error::Argument(format!("off-diagonal {} is negative", form.b)));
    }
    let (top, rest) = form.eigenvalues();
    if n > 1 && !(form.a > form.b) {
        return Err(Error::Rank(format!("degenerate form a = {}, b = {}", form.a, form.b)));
    }
    if !(top > 0.0) {
        return Err(Error::Rank("a + (n-1)b must be positive".into()));
    }
    let q = sylvester_hadamard(n);
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let mut rows = q;
    for (r, mut row) in rows.row_iter_mut().enumerate() {
        let lambda = if r == 0 { top } else { rest };
        row *= lambda.sqrt().sqrt() * inv_sqrt_n;
    }
    Ok(Strategy::new(DomainShape::line(n)?, rows)?.with_name("var-agnostic"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_all_range, gram_all_predicate, gram_all_range};

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn fig2_h() -> DMatrix<f64> {
        m(7, 4, &[
            1., 1., 1., 1., //
            1., 1., 0., 0., //
            0., 0., 1., 1., //
            1., 0., 0., 0., //
            0., 1., 0., 0., //
            0., 0., 1., 0., //
            0., 0., 0., 1.,
        ])
    }

    fn fig2_y() -> DMatrix<f64> {
        m(4, 4, &[1., 1., 1., 1., 1., 1., -1., -1., 1., -1., 0., 0., 0., 0., 1., -1.])
    }

    fn fig2_y1() -> DMatrix<f64> {
        let mut rows = vec![1., 1., 0., 0., 0., 0., 1., 1.];
        for _ in 0..2 {
            for i in 0..4 {
                let mut e = [0.; 4];
                e[i] = 1.;
                rows.extend_from_slice(&e);
            }
        }
        m(10, 4, &rows)
    }

    fn fig2_y2() -> DMatrix<f64> {
        let s = 2f64.sqrt();
        m(6, 4, &[
            1., 1., 0., 0., 0., 0., 1., 1., s, 0., 0., 0., 0., s, 0., 0., 0., 0., s, 0., 0., 0., 0., s,
        ])
    }

    #[test]
    fn identity_examples() {
        for n in [1, 3] {
            let s = identity_strategy(n).unwrap();
            assert_eq!(s.rows(), &DMatrix::identity(n, n));
            assert_eq!(s.gram(), &DMatrix::identity(n, n));
            assert_eq!(s.gram_inverse(), &DMatrix::identity(n, n));
            assert_eq!(s.l2_sensitivity(), 1.0);
        }
    }

    #[test]
    fn hierarchical_matches_figure() {
        let h = hierarchical_strategy(4, 2).unwrap();
        assert_eq!(h.rows(), &fig2_h());
        assert!((h.l2_sensitivity() - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(hierarchical_strategy(1, 2).unwrap().rows(), &DMatrix::from_element(1, 1, 1.0));
        assert!(hierarchical_strategy(4, 1).is_err());
    }

    #[test]
    fn hierarchical_handles_uneven_sizes() {
        let h = hierarchical_strategy(5, 2).unwrap();
        // Every cell is a leaf exactly once.
        let leaves: Vec<_> = h.rows().row_iter().filter(|r| r.sum() == 1.0).collect();
        assert_eq!(leaves.len(), 5);
        let h3 = hierarchical_strategy(9, 3).unwrap();
        assert_eq!(h3.row_count(), 1 + 3 + 9);
        assert!(is_column_uniform(h3.rows(), 2, 1e-12));
    }

    #[test]
    fn wavelet_matches_figure() {
        let y = wavelet_strategy(4).unwrap();
        assert_eq!(y.rows(), &fig2_y());
        assert!((y.l2_sensitivity() - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(wavelet_strategy(2).unwrap().rows(), &m(2, 2, &[1., 1., 1., -1.]));
        assert!(matches!(wavelet_strategy(6), Err(Error::Argument(_))));
    }

    #[test]
    fn sensitivities() {
        assert_eq!(l2_sensitivity(&DMatrix::identity(5, 5)), 1.0);
        assert_eq!(l1_sensitivity(&DMatrix::identity(5, 5)), 1.0);
        let all_range = build_all_range(&DomainShape::line(4).unwrap(), true).unwrap();
        assert!((l2_sensitivity(all_range.rows().unwrap()) - 6f64.sqrt()).abs() < 1e-15);
        assert!((l2_sensitivity(&fig2_y2()) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(l1_sensitivity(&fig2_y1()), 3.0);
        assert!((l1_sensitivity(&fig2_y2()) - (1.0 + 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn column_uniformity() {
        assert!(is_column_uniform(&fig2_h(), 2, 1e-12));
        let all_range = build_all_range(&DomainShape::line(4).unwrap(), true).unwrap();
        assert!(!is_column_uniform(all_range.rows().unwrap(), 2, 1e-6));
        assert!(is_column_uniform(&DMatrix::identity(4, 4), 2, 0.0));
    }

    #[test]
    fn zero_one_matrices_have_l2_squared_equal_l1() {
        for s in [hierarchical_strategy(16, 2).unwrap(), hierarchical_strategy(27, 3).unwrap()] {
            assert!((s.l2_sensitivity().powi(2) - s.l1_sensitivity()).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_redundancy_fig2() {
        let y1 = Strategy::new(DomainShape::line(4).unwrap(), fig2_y1()).unwrap();
        let y2 = reduce_redundancy(&y1, PARALLEL_TOL).unwrap();
        assert!((y2.rows() - fig2_y2()).amax() < 1e-15);
        assert!(linalg::relative_frobenius_diff(y1.gram(), y2.gram()) < 1e-12);
        assert!(y2.l1_sensitivity() < y1.l1_sensitivity());
    }

    #[test]
    fn reduce_redundancy_without_parallels_is_identity() {
        let h = hierarchical_strategy(8, 2).unwrap();
        assert_eq!(reduce_redundancy(&h, PARALLEL_TOL).unwrap().rows(), h.rows());
    }

    #[test]
    fn reduce_redundancy_signed_copies() {
        let rows = m(4, 2, &[1., 2., -1., -2., 1., 0., 0., 0.]);
        let s = Strategy::new(DomainShape::line(2).unwrap(), rows).unwrap();
        let r = reduce_redundancy(&s, PARALLEL_TOL).unwrap();
        assert_eq!(r.row_count(), 2);
        let expected = m(1, 2, &[2f64.sqrt(), 2.0 * 2f64.sqrt()]);
        assert!((r.rows().row(0) - expected.row(0)).amax() < 1e-14);
        assert!(linalg::relative_frobenius_diff(s.gram(), r.gram()) < 1e-14);
    }

    #[test]
    fn rank_deficient_rejected() {
        let rows = m(2, 2, &[1., 1., 2., 2.]);
        assert!(matches!(Strategy::new(DomainShape::line(2).unwrap(), rows), Err(Error::Rank(_))));
        let rows = m(1, 2, &[1., 1.]);
        assert!(matches!(Strategy::new(DomainShape::line(2).unwrap(), rows), Err(Error::Rank(_))));
    }

    #[test]
    fn variable_agnostic_detection() {
        let f = is_variable_agnostic(&gram_all_predicate(4), 1e-12).unwrap();
        assert_eq!((f.a, f.b, f.n), (8.0, 4.0, 4));
        assert!(is_variable_agnostic(&gram_all_range(&DomainShape::line(4).unwrap()), 1e-12).is_none());
        let id = is_variable_agnostic(&DMatrix::identity(5, 5), 1e-12).unwrap();
        assert_eq!((id.a, id.b), (1.0, 0.0));
    }

    #[test]
    fn variable_agnostic_construction() {
        let s = variable_agnostic_optimal(VariableAgnosticForm { a: 8.0, b: 4.0, n: 4 }).unwrap();
        assert!(is_column_uniform(s.rows(), 2, 1e-12));
        // AᵀA is the square root of the workload Gram.
        let sq = s.gram() * s.gram();
        assert!(linalg::relative_frobenius_diff(&sq, &gram_all_predicate(4)) < 1e-12);

        let ortho = variable_agnostic_optimal(VariableAgnosticForm { a: 1.0, b: 0.0, n: 8 }).unwrap();
        assert!(linalg::relative_frobenius_diff(ortho.gram(), &DMatrix::identity(8, 8)) < 1e-12);

        assert!(matches!(
            variable_agnostic_optimal(VariableAgnosticForm { a: 2.0, b: 2.0, n: 4 }),
            Err(Error::Rank(_))
        ));
        assert!(matches!(
            variable_agnostic_optimal(VariableAgnosticForm { a: 2.0, b: 1.0, n: 6 }),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn closed_form_bound_examples() {
        let f = VariableAgnosticForm { a: 8.0, b: 4.0, n: 4 };
        assert!((f.svd_bound() - 0.25 * (20f64.sqrt() + 6.0).powi(2)).abs() < 1e-12);
        let f = VariableAgnosticForm { a: 2.0, b: 1.0, n: 2 };
        assert!((f.svd_bound() - 0.5 * (3f64.sqrt() + 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn kronecker_shape_and_rows() {
        let y = wavelet_strategy(2).unwrap();
        let k = Strategy::kronecker(&[y.clone(), y]).unwrap();
        assert_eq!(k.shape().dims(), &[2, 2]);
        assert_eq!(k.row_count(), 4);
        assert_eq!(k.rows()[(3, 3)], 1.0);
        assert_eq!(k.rows()[(1, 1)], -1.0);
    }

    #[test]
    fn gram_factor_is_equivalent() {
        let g = gram_all_range(&DomainShape::line(6).unwrap());
        let s = Strategy::from_gram(DomainShape::line(6).unwrap(), &g).unwrap();
        assert!(linalg::relative_frobenius_diff(s.gram(), &linalg::gram(s.rows())) < 1e-12);
        assert!((s.l2_sensitivity() - l2_sensitivity(s.rows())).abs() < 1e-12);
    }
}
