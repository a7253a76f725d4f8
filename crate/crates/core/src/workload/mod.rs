//! Query workloads over a multi-dimensional cell domain.
//!
//! Cells are ordered row-major over the domain dimensions (last dimension
//! fastest). Every builder, the ingestion path, and the lifted marginals use
//! this order.

mod descriptor;
mod gram;
mod ingest;
mod sample;

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::errors::{Error, Result};
use crate::linalg;

pub use descriptor::{DescriptorParams, WorkloadDescriptor, WorkloadKind};
pub use gram::{all_predicate_rows, gram_all_predicate, gram_all_range, range_gram};
pub use ingest::{ingest_cells, Buckets, Partition, Table};
pub use sample::{sample_range_workload, sample_ranges, SamplingMode, DEFAULT_BIAS};

/// Upper bound on `rows × columns` for any dense matrix a builder materializes.
pub const DENSE_ENTRY_BUDGET: usize = 1 << 26;

/// Tolerance for the rows/Gram consistency check.
const GRAM_CONSISTENCY_TOL: f64 = 1e-9;

/// The cell grid `d₁ × … × d_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DomainShape {
    dims: Vec<usize>,
    n: usize,
}

impl DomainShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Argument("domain needs at least one dimension".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Argument(format!("dimension {pos} has size 0")));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Capacity(format!("domain {dims:?} overflows")))?;
        Ok(Self { dims, n })
    }

    /// One-dimensional domain of `n` cells.
    pub fn line(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total number of cells.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of dimensions.
    pub fn k(&self) -> usize {
        self.dims.len()
    }

    /// Row-major strides: `stride[i]` is the index step of dimension `i`.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }

    /// Cell index of 0-based coordinates.
    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        coords.iter().zip(&self.dims).fold(0, |acc, (&c, &d)| {
            debug_assert!(c < d);
            acc * d + c
        })
    }

    /// 0-based coordinates of a cell index.
    pub fn coords_of(&self, mut index: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dims.len()];
        for (slot, &d) in coords.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        coords
    }
}

impl TryFrom<Vec<usize>> for DomainShape {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<DomainShape> for Vec<usize> {
    fn from(shape: DomainShape) -> Self {
        shape.dims
    }
}

impl fmt::Display for DomainShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// An axis-aligned range: one closed, 1-based interval `[l, u]` per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RangeQuery {
    bounds: Vec<(usize, usize)>,
}

impl RangeQuery {
    pub fn new(shape: &DomainShape, bounds: Vec<(usize, usize)>) -> Result<Self> {
        if bounds.len() != shape.k() {
            return Err(Error::Shape(format!(
                "range has {} intervals for a {}-dimensional domain",
                bounds.len(),
                shape.k()
            )));
        }
        for (i, (&(l, u), &d)) in bounds.iter().zip(shape.dims()).enumerate() {
            if !(1 <= l && l <= u && u <= d) {
                return Err(Error::Argument(format!(
                    "interval [{l}, {u}] invalid on dimension {i} of size {d}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// The range covering the whole domain.
    pub fn full(shape: &DomainShape) -> Self {
        Self {
            bounds: shape.dims().iter().map(|&d| (1, d)).collect(),
        }
    }

    pub(crate) fn from_bounds_unchecked(bounds: Vec<(usize, usize)>) -> Self {
        Self { bounds }
    }

    pub fn bounds(&self) -> &[(usize, usize)] {
        &self.bounds
    }

    /// Per-dimension interval lengths.
    pub fn extents(&self) -> Vec<usize> {
        self.bounds.iter().map(|&(l, u)| u - l + 1).collect()
    }

    /// Number of cells covered.
    pub fn cell_count(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn contains(&self, coords: &[usize]) -> bool {
        self.bounds
            .iter()
            .zip(coords)
            .all(|(&(l, u), &c)| l <= c + 1 && c < u)
    }

    /// Centre of the range in 1-based coordinates.
    pub fn center(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(l, u)| (l + u) as f64 / 2.0)
            .collect()
    }

    /// Indices of the covered cells, ascending.
    pub fn cells(&self, shape: &DomainShape) -> Vec<usize> {
        let strides = shape.strides();
        let mut out = vec![0usize];
        for (&(l, u), &stride) in self.bounds.iter().zip(&strides) {
            let mut next = Vec::with_capacity(out.len() * (u - l + 1));
            for &base in &out {
                for c in (l - 1)..u {
                    next.push(base + c * stride);
                }
            }
            out = next;
        }
        out
    }

    /// The 0/1 indicator row over the domain.
    pub fn to_row(&self, shape: &DomainShape) -> DVector<f64> {
        let mut row = DVector::zeros(shape.n());
        for cell in self.cells(shape) {
            row[cell] = 1.0;
        }
        row
    }
}

/// Every axis-aligned range over `shape`, dimensions enumerated row-major and
/// intervals within a dimension in lexicographic `(l, u)` order.
pub fn all_ranges(shape: &DomainShape) -> Vec<RangeQuery> {
    let per_dim: Vec<Vec<(usize, usize)>> = shape
        .dims()
        .iter()
        .map(|&d| {
            (1..=d)
                .flat_map(|l| (l..=d).map(move |u| (l, u)))
                .collect()
        })
        .collect();
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for intervals in &per_dim {
        let mut next = Vec::with_capacity(out.len() * intervals.len());
        for prefix in &out {
            for &iv in intervals {
                let mut b = prefix.clone();
                b.push(iv);
                next.push(b);
            }
        }
        out = next;
    }
    out.into_iter().map(RangeQuery::from_bounds_unchecked).collect()
}

/// Number of axis-aligned ranges, `∏ dᵢ(dᵢ+1)/2`, or `None` on overflow.
pub fn all_range_count(shape: &DomainShape) -> Option<usize> {
    shape
        .dims()
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d * (d + 1) / 2))
}

/// A batch of linear queries, held as dense rows, as its Gram matrix `WᵀW`, or both.
#[derive(Debug, Clone)]
pub struct Workload {
    shape: DomainShape,
    rows: Option<DMatrix<f64>>,
    gram: OnceLock<DMatrix<f64>>,
    m: Option<usize>,
}

impl Workload {
    pub fn from_rows(shape: DomainShape, rows: DMatrix<f64>) -> Result<Self> {
        if rows.ncols() != shape.n() {
            return Err(Error::Shape(format!(
                "workload rows have {} columns, domain has {} cells",
                rows.ncols(),
                shape.n()
            )));
        }
        let m = rows.nrows();
        Ok(Self {
            shape,
            rows: Some(rows),
            gram: OnceLock::new(),
            m: Some(m),
        })
    }

    /// Workload known only through `WᵀW`; `m` is the row count when known.
    pub fn from_gram(shape: DomainShape, gram: DMatrix<f64>, m: Option<usize>) -> Result<Self> {
        check_gram(&shape, &gram)?;
        Ok(Self {
            shape,
            rows: None,
            gram: OnceLock::from(gram),
            m,
        })
    }

    /// Both forms; the Gram must match `rowsᵀ·rows`.
    pub fn from_rows_and_gram(
        shape: DomainShape,
        rows: DMatrix<f64>,
        gram: DMatrix<f64>,
    ) -> Result<Self> {
        check_gram(&shape, &gram)?;
        let w = Self::from_rows(shape, rows)?;
        let direct = linalg::gram(w.rows.as_ref().expect("rows just set"));
        if linalg::relative_frobenius_diff(&direct, &gram) > GRAM_CONSISTENCY_TOL {
            return Err(Error::Argument("gram does not equal rowsᵀ·rows".into()));
        }
        let _ = w.gram.set(gram);
        Ok(w)
    }

    pub fn from_ranges(shape: DomainShape, ranges: &[RangeQuery]) -> Result<Self> {
        check_dense_budget(ranges.len(), shape.n())?;
        let mut rows = DMatrix::zeros(ranges.len(), shape.n());
        for (i, r) in ranges.iter().enumerate() {
            for cell in r.cells(&shape) {
                rows[(i, cell)] = 1.0;
            }
        }
        Self::from_rows(shape, rows)
    }

    pub fn identity(shape: DomainShape) -> Self {
        let n = shape.n();
        Self::from_rows(shape, DMatrix::identity(n, n)).expect("square identity")
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn rows(&self) -> Option<&DMatrix<f64>> {
        self.rows.as_ref()
    }

    pub fn require_rows(&self) -> Result<&DMatrix<f64>> {
        self.rows
            .as_ref()
            .ok_or_else(|| Error::MissingRows("workload holds only its Gram form".into()))
    }

    /// `WᵀW`, computed from the rows on first use when not supplied.
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| {
            linalg::gram(self.rows.as_ref().expect("workload has rows or gram"))
        })
    }

    /// Number of queries, when known.
    pub fn query_count(&self) -> Option<usize> {
        self.m
    }

    /// A new workload with `extra` appended below the existing rows.
    pub fn with_appended_rows(&self, extra: &DMatrix<f64>) -> Result<Self> {
        let rows = self.require_rows()?;
        if extra.ncols() != rows.ncols() {
            return Err(Error::Shape("appended rows have the wrong width".into()));
        }
        let mut stacked = DMatrix::zeros(rows.nrows() + extra.nrows(), rows.ncols());
        stacked.rows_mut(0, rows.nrows()).copy_from(rows);
        stacked.rows_mut(rows.nrows(), extra.nrows()).copy_from(extra);
        Self::from_rows(self.shape.clone(), stacked)
    }
}

fn check_gram(shape: &DomainShape, gram: &DMatrix<f64>) -> Result<()> {
    let n = shape.n();
    if gram.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "gram is {}x{}, domain has {n} cells",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let scale = gram.amax().max(1.0);
    for i in 0..n {
        if gram[(i, i)] < -1e-12 * scale {
            return Err(Error::Argument(format!("gram diagonal entry {i} is negative")));
        }
        for j in (i + 1)..n {
            if (gram[(i, j)] - gram[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Argument(format!("gram is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_dense_budget(m: usize, n: usize) -> Result<()> {
    match m.checked_mul(n) {
        Some(e) if e <= DENSE_ENTRY_BUDGET => Ok(()),
        _ => Err(Error::Capacity(format!(
            "{m} x {n} dense matrix exceeds the {DENSE_ENTRY_BUDGET}-entry budget"
        ))),
    }
}

/// All axis-aligned range queries. The Gram form is always filled from the
/// closed form; dense rows only when `dense` is set.
pub fn build_all_range(shape: &DomainShape, dense: bool) -> Result<Workload> {
    let m = all_range_count(shape);
    let gram = gram_all_range(shape);
    if !dense {
        return Workload::from_gram(shape.clone(), gram, m);
    }
    let m = m.ok_or_else(|| Error::Capacity("range count overflows".into()))?;
    check_dense_budget(m, shape.n())?;
    let dense_rows = Workload::from_ranges(shape.clone(), &all_ranges(shape))?;
    let rows = dense_rows.rows.expect("from_ranges sets rows");
    Workload::from_rows_and_gram(shape.clone(), rows, gram)
}

/// Lifts per-dimension marginal queries to the full domain: a query `q` on
/// dimension `i` becomes the row whose value at a cell is `q[coordᵢ(cell)]`.
pub fn build_marginal_workload(shape: &DomainShape, per_dim: &[Vec<Vec<f64>>]) -> Result<Workload> {
    if per_dim.len() != shape.k() {
        return Err(Error::Shape(format!(
            "{} per-dimension query sets for a {}-dimensional domain",
            per_dim.len(),
            shape.k()
        )));
    }
    let total: usize = per_dim.iter().map(Vec::len).sum();
    check_dense_budget(total, shape.n())?;
    let mut rows = DMatrix::zeros(total, shape.n());
    let mut r = 0;
    for (dim, queries) in per_dim.iter().enumerate() {
        let d = shape.dims()[dim];
        for q in queries {
            if q.len() != d {
                return Err(Error::Shape(format!(
                    "marginal query of length {} on dimension {dim} of size {d}",
                    q.len()
                )));
            }
            for cell in 0..shape.n() {
                rows[(r, cell)] = q[shape.coords_of(cell)[dim]];
            }
            r += 1;
        }
    }
    Workload::from_rows(shape.clone(), rows)
}

/// All one-dimensional ranges on each listed dimension, lifted to the full domain.
pub fn range_marginals(shape: &DomainShape, dims: &[usize]) -> Result<Workload> {
    let mut per_dim = vec![Vec::new(); shape.k()];
    for &dim in dims {
        let d = *shape
            .dims()
            .get(dim)
            .ok_or_else(|| Error::Argument(format!("no dimension {dim}")))?;
        for l in 0..d {
            for u in l..d {
                let mut q = vec![0.0; d];
                q[l..=u].iter_mut().for_each(|v| *v = 1.0);
                per_dim[dim].push(q);
            }
        }
    }
    build_marginal_workload(shape, &per_dim)
}

/// Gram equality within `tol · max(1, ‖W₁ᵀW₁‖_F)`.
pub fn equivalent(w1: &Workload, w2: &Workload, tol: f64) -> Result<bool> {
    if w1.shape() != w2.shape() {
        return Err(Error::Shape(format!(
            "cannot compare workloads over {} and {}",
            w1.shape(),
            w2.shape()
        )));
    }
    Ok(linalg::relative_frobenius_diff(w1.gram(), w2.gram()) <= tol)
}
