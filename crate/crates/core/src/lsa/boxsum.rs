//! Sums of a symmetric matrix over pairs of sub-boxes of one query box.
//!
//! For a box with local extents `e`, the entries `X[a, b]` for cells `a, b`
//! in the box form a `2k`-dimensional array. Its prefix sums give any
//! sub-box × sub-box sum in `2^{2k}` lookups.

use nalgebra::DMatrix;

/// Half-open, 0-based box of cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Span {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Span {
    pub fn extents(&self) -> Vec<usize> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn len(&self) -> usize {
        self.extents().iter().product()
    }

    /// Global cell indices in row-major order.
    pub fn cells(&self, strides: &[usize]) -> Vec<usize> {
        let k = self.lo.len();
        let mut out = Vec::with_capacity(self.len());
        let mut coord = self.lo.clone();
        if self.len() == 0 {
            return out;
        }
        loop {
            out.push(coord.iter().zip(strides).map(|(c, s)| c * s).sum());
            let mut d = k;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                coord[d] += 1;
                if coord[d] < self.hi[d] {
                    break;
                }
                coord[d] = self.lo[d];
            }
        }
    }

    /// The two halves of a threshold split at `offset` cells along `dim`.
    pub fn split(&self, dim: usize, offset: usize) -> (Span, Span) {
        let mut first = self.clone();
        let mut second = self.clone();
        first.hi[dim] = self.lo[dim] + offset;
        second.lo[dim] = self.lo[dim] + offset;
        (first, second)
    }
}

pub(crate) struct BoxTable {
    k: usize,
    strides: Vec<usize>,
    table: Vec<f64>,
}

impl BoxTable {
    /// `cells` must be the box's cells in row-major order of `extents`.
    pub fn new(mat: &DMatrix<f64>, cells: &[usize], extents: &[usize]) -> Self {
        let k = extents.len();
        let padded: Vec<usize> = extents.iter().chain(extents).map(|e| e + 1).collect();
        let mut strides = vec![1usize; 2 * k];
        for t in (0..2 * k - 1).rev() {
            strides[t] = strides[t + 1] * padded[t + 1];
        }
        let size = strides[0] * padded[0];
        let mut table = vec![0.0; size];

        // Padded offset of each local cell, for the row half and the column half.
        let local_offsets = |half: usize| -> Vec<usize> {
            let mut offs = Vec::with_capacity(cells.len());
            let mut coord = vec![0usize; k];
            for _ in 0..cells.len() {
                offs.push(coord.iter().enumerate().map(|(d, &c)| (c + 1) * strides[half * k + d]).sum());
                for d in (0..k).rev() {
                    coord[d] += 1;
                    if coord[d] < extents[d] {
                        break;
                    }
                    coord[d] = 0;
                }
            }
            offs
        };
        let row_offs = local_offsets(0);
        let col_offs = local_offsets(1);
        for (b, &cb) in cells.iter().enumerate() {
            let column = mat.column(cb);
            for (a, &ca) in cells.iter().enumerate() {
                table[row_offs[a] + col_offs[b]] = column[ca];
            }
        }

        for t in 0..2 * k {
            let stride = strides[t];
            let extent = padded[t];
            for idx in 0..size {
                if !(idx / stride).is_multiple_of(extent) {
                    table[idx] += table[idx - stride];
                }
            }
        }
        Self { k, strides, table }
    }

    /// Sum over `a ∈ [a_lo, a_hi)`, `b ∈ [b_lo, b_hi)` in local coordinates.
    pub fn sum(&self, a_lo: &[usize], a_hi: &[usize], b_lo: &[usize], b_hi: &[usize]) -> f64 {
        let axes = 2 * self.k;
        let mut total = 0.0;
        for mask in 0..(1usize << axes) {
            let mut idx = 0;
            let mut negative = false;
            for t in 0..axes {
                let (lo, hi) = if t < self.k {
                    (a_lo[t], a_hi[t])
                } else {
                    (b_lo[t - self.k], b_hi[t - self.k])
                };
                let upper = mask & (1 << t) == 0;
                let c = if upper { hi } else { lo };
                if !upper {
                    negative = !negative;
                }
                idx += c * self.strides[t];
            }
            total += if negative { -self.table[idx] } else { self.table[idx] };
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(m: &DMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
        a.iter().flat_map(|&i| b.iter().map(move |&j| m[(i, j)])).sum()
    }

    #[test]
    fn matches_brute_force_2d() {
        let strides = [4usize, 1];
        let n = 20;
        let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + (i == j) as u8 as f64);
        let span = Span { lo: vec![1, 0], hi: vec![5, 3] };
        let ext = span.extents();
        let cells = span.cells(&strides);
        assert_eq!(cells.len(), 12);
        let t = BoxTable::new(&m, &cells, &ext);
        for dim in 0..2 {
            for off in 1..ext[dim] {
                let (p, q) = span.split(dim, off);
                let to_local = |s: &Span| -> (Vec<usize>, Vec<usize>) {
                    (
                        s.lo.iter().zip(&span.lo).map(|(a, b)| a - b).collect(),
                        s.hi.iter().zip(&span.lo).map(|(a, b)| a - b).collect(),
                    )
                };
                let (plo, phi) = to_local(&p);
                let (qlo, qhi) = to_local(&q);
                let got = t.sum(&plo, &phi, &qlo, &qhi);
                let want = brute(&m, &p.cells(&strides), &q.cells(&strides));
                assert!((got - want).abs() < 1e-9, "dim {dim} off {off}: {got} vs {want}");
            }
        }
    }
}
