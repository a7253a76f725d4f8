//! Closed-form Gram matrices for the regular workload families.

use nalgebra::DMatrix;

use super::{check_dense_budget, DomainShape};
use crate::errors::{Error, Result};

/// Largest domain for which every predicate row is materialized.
pub const MAX_DENSE_PREDICATE_N: usize = 30;

/// Number of ranges over `1..=d` containing both 1-based cells `i` and `j`.
fn ranges_covering_pair(d: u64, i: u64, j: u64) -> u64 {
    i.min(j) * (d - i.max(j) + 1)
}

/// `WᵀW` of all axis-aligned ranges. Entry `(a, b)` counts the ranges holding
/// both cells; the count factorizes over dimensions. Computed in exact
/// integer arithmetic and converted at the end.
pub fn gram_all_range(shape: &DomainShape) -> DMatrix<f64> {
    let n = shape.n();
    let tables: Vec<Vec<u64>> = shape
        .dims()
        .iter()
        .map(|&d| {
            let d64 = d as u64;
            let mut t = vec![0u64; d * d];
            for i in 0..d {
                for j in 0..d {
                    t[i * d + j] = ranges_covering_pair(d64, i as u64 + 1, j as u64 + 1);
                }
            }
            t
        })
        .collect();
    let coords: Vec<Vec<usize>> = (0..n).map(|c| shape.coords_of(c)).collect();
    let mut gram = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let mut count: u128 = 1;
            for (dim, &d) in shape.dims().iter().enumerate() {
                count *= tables[dim][coords[a][dim] * d + coords[b][dim]] as u128;
            }
            let v = count as f64;
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    gram
}

/// `WᵀW` of all `2ⁿ` predicate queries: `2ⁿ⁻¹` on the diagonal, `2ⁿ⁻²` off it.
pub fn gram_all_predicate(n: usize) -> DMatrix<f64> {
    assert!(n >= 1, "predicate domain needs at least one cell");
    let diag = 2f64.powi(n as i32 - 1);
    let off = if n >= 2 { 2f64.powi(n as i32 - 2) } else { 0.0 };
    DMatrix::from_fn(n, n, |i, j| if i == j { diag } else { off })
}

/// Every 0/1 row over `n` cells; row `r` includes cell `j` iff bit `j` of `r` is set.
pub fn all_predicate_rows(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 || n > MAX_DENSE_PREDICATE_N {
        return Err(Error::Capacity(format!(
            "dense predicate enumeration supports 1 <= n <= {MAX_DENSE_PREDICATE_N}, got {n}"
        )));
    }
    let m = 1usize << n;
    check_dense_budget(m, n)?;
    Ok(DMatrix::from_fn(m, n, |r, j| ((r >> j) & 1) as f64))
}

/// `WᵀW` of an explicit list of ranges, accumulated without dense rows.
pub fn range_gram(shape: &DomainShape, ranges: &[super::RangeQuery]) -> DMatrix<f64> {
    let n = shape.n();
    let mut gram = DMatrix::zeros(n, n);
    for r in ranges {
        let cells = r.cells(shape);
        for &a in &cells {
            for &b in &cells {
                gram[(a, b)] += 1.0;
            }
        }
    }
    gram
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::all_ranges;

    /// Brute-force `WᵀW` by enumerating every range, in integers.
    fn enumerated_range_gram(shape: &DomainShape) -> Vec<Vec<u64>> {
        let n = shape.n();
        let mut g = vec![vec![0u64; n]; n];
        for r in all_ranges(shape) {
            let cells = r.cells(shape);
            for &a in &cells {
                for &b in &cells {
                    g[a][b] += 1;
                }
            }
        }
        g
    }

    fn as_ints(m: &DMatrix<f64>) -> Vec<Vec<u64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)] as u64).collect())
            .collect()
    }

    #[test]
    fn all_range_line_examples() {
        let g = gram_all_range(&DomainShape::line(4).unwrap());
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[4., 3., 2., 1., 3., 6., 4., 2., 2., 4., 6., 3., 1., 2., 3., 4.],
        );
        assert_eq!(g, expected);
        let g2 = gram_all_range(&DomainShape::line(2).unwrap());
        assert_eq!(g2, DMatrix::from_row_slice(2, 2, &[2., 1., 1., 2.]));
        let g22 = gram_all_range(&DomainShape::new(vec![2, 2]).unwrap());
        assert!(g22.diagonal().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn all_range_matches_enumeration_up_to_64_cells() {
        let shapes: Vec<Vec<usize>> = vec![
            vec![1],
            vec![7],
            vec![64],
            vec![2, 2],
            vec![3, 5],
            vec![8, 8],
            vec![2, 3, 4],
            vec![4, 4, 4],
            vec![2, 2, 2, 2, 2, 2],
        ];
        for dims in shapes {
            let shape = DomainShape::new(dims).unwrap();
            assert_eq!(
                as_ints(&gram_all_range(&shape)),
                enumerated_range_gram(&shape),
                "shape {shape}"
            );
        }
    }

    #[test]
    fn all_predicate_matches_enumeration() {
        for n in 1..=12 {
            let rows = all_predicate_rows(n).unwrap();
            let brute = rows.tr_mul(&rows);
            assert_eq!(gram_all_predicate(n), brute, "n = {n}");
        }
        let g4 = gram_all_predicate(4);
        assert_eq!((g4[(0, 0)], g4[(0, 1)]), (8.0, 4.0));
        assert_eq!(gram_all_predicate(1), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(gram_all_predicate(2), DMatrix::from_row_slice(2, 2, &[2., 1., 1., 2.]));
    }

    #[test]
    fn dense_predicates_are_capped() {
        assert!(all_predicate_rows(31).is_err());
        assert!(all_predicate_rows(0).is_err());
    }

    #[test]
    fn range_gram_of_all_ranges_is_the_closed_form() {
        let shape = DomainShape::new(vec![3, 4]).unwrap();
        assert_eq!(range_gram(&shape, &all_ranges(&shape)), gram_all_range(&shape));
    }
}
