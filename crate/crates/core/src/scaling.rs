//! Splitting large design problems: separation of one-way marginal workloads
//! and two-phase generalization over merged cells.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{total_error, PrivacyParams};
use crate::errors::{Error, Result};
use crate::linalg;
use crate::lsa::{design_levels, LsaConfig, LsaLog, LsaOutcome, LsaProblem};
use crate::strategy::{reduce_rows, Strategy, PARALLEL_TOL};
use crate::workload::{DomainShape, Workload};

/// Relative tolerance for deciding that a row is constant along a dimension.
const CONSTANT_TOL: f64 = 1e-12;

/// The queries of one dimension, expressed over that dimension's marginal domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub dimension: usize,
    /// Input row indices assigned to this component.
    pub rows: Vec<usize>,
    /// One marginal query per assigned row, each of length `shape[dimension]`.
    pub queries: Vec<Vec<f64>>,
}

impl Component {
    pub fn workload(&self, size: usize) -> Result<Workload> {
        let shape = DomainShape::line(size)?;
        if self.queries.is_empty() {
            return Workload::from_gram(shape, DMatrix::zeros(size, size), Some(0));
        }
        let flat: Vec<f64> = self.queries.iter().flatten().copied().collect();
        Workload::from_rows(shape, DMatrix::from_row_slice(self.queries.len(), size, &flat))
    }
}

/// A one-way marginal workload split by dimension, linked by the total query `q₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationPlan {
    pub shape: Vec<usize>,
    /// Share of the squared-sensitivity budget spent on `q₀`. When absent it
    /// is chosen after the components are designed, see [`design_separated`].
    pub q0_fraction: Option<f64>,
    pub components: Vec<Component>,
}

impl SeparationPlan {
    pub fn domain(&self) -> Result<DomainShape> {
        DomainShape::new(self.shape.clone())
    }

    pub fn with_q0_fraction(mut self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Argument(format!("q0 fraction must lie in (0, 1), got {fraction}")));
        }
        self.q0_fraction = Some(fraction);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Groups the rows of `w` by the single dimension each one varies along.
///
/// A row that is constant everywhere is assigned to dimension 0. A row that
/// varies along two or more dimensions is not a lifted one-way marginal.
pub fn separate(w: &Workload) -> Result<SeparationPlan> {
    let shape = w.shape();
    let rows = w.require_rows()?;
    let dims = shape.dims();
    let strides = shape.strides();
    let k = dims.len();
    let mut components: Vec<Component> = (0..k)
        .map(|d| Component {
            dimension: d,
            rows: Vec::new(),
            queries: Vec::new(),
        })
        .collect();
    for (r, row) in rows.row_iter().enumerate() {
        let tol = CONSTANT_TOL * row.amax().max(1.0);
        let varying: Vec<usize> = (0..k)
            .filter(|&d| {
                (0..shape.n()).any(|c| {
                    !(c / strides[d]).is_multiple_of(dims[d]) && (row[c] - row[c - strides[d]]).abs() > tol
                })
            })
            .collect();
        if varying.len() > 1 {
            return Err(Error::NotSeparable {
                row: r,
                reason: format!("varies along dimensions {varying:?}"),
            });
        }
        let d = varying.first().copied().unwrap_or(0);
        let marginal: Vec<f64> = (0..dims[d]).map(|i| row[i * strides[d]]).collect();
        components[d].rows.push(r);
        components[d].queries.push(marginal);
    }
    Ok(SeparationPlan {
        shape: dims.to_vec(),
        q0_fraction: None,
        components,
    })
}

/// Error of one separated component at its budget share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub dimension: usize,
    pub queries: usize,
    pub budget_fraction: f64,
    /// Error of the component's own design at the full budget, `P = 1`.
    pub standalone_error: f64,
    /// `standalone_error / budget_fraction`.
    pub error: f64,
    pub log: LsaLog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparatedDesign {
    pub plan: SeparationPlan,
    /// The `q₀` share actually used.
    pub q0_fraction: f64,
    pub components: Vec<ComponentReport>,
    /// Error of answering `q₀` directly at its share of the budget.
    pub q0_error: f64,
    /// `q0_error + Σ component errors`.
    pub component_total: f64,
    /// Total error of the stacked strategy on the original workload, by
    /// least squares over the cell domain.
    pub composite_error: f64,
    pub wall_seconds: f64,
    /// Stacked strategy over the full domain: the weighted `q₀`, then each
    /// component's strategy lifted and weighted. Not full rank when `k ≥ 2`.
    #[serde(skip)]
    pub rows: DMatrix<f64>,
}

/// Designs each component over its marginal domain and stacks the results.
pub fn design_separated(
    plan: &SeparationPlan,
    w: &Workload,
    config: &LsaConfig,
    privacy: &PrivacyParams,
) -> Result<SeparatedDesign> {
    let started = Instant::now();
    let shape = plan.domain()?;
    if w.shape() != &shape {
        return Err(Error::Shape("workload does not match the plan".into()));
    }
    let active: Vec<&Component> = plan.components.iter().filter(|c| !c.queries.is_empty()).collect();
    let p = privacy.factor();
    let n = shape.n();
    let strides = shape.strides();

    let designed = active
        .par_iter()
        .map(|comp| {
            let sub = comp.workload(shape.dims()[comp.dimension])?;
            let outcome = design_levels(&LsaProblem::new(&sub), config)?;
            let strategy = outcome.strategy()?;
            let standalone = total_error(&sub, &strategy, privacy)?;
            Ok((strategy, standalone, outcome.log))
        })
        .collect::<Result<Vec<_>>>()?;

    // With component errors Eᵢ at full budget, the split error
    // 1/f + k·ΣEᵢ/(1 − f) is smallest at f = 1/(1 + √(k·ΣEᵢ)).
    let k = active.len().max(1) as f64;
    let q0_fraction = plan.q0_fraction.unwrap_or_else(|| {
        let sum: f64 = designed.iter().map(|(_, e, _)| e / p).sum();
        1.0 / (1.0 + (k * sum).sqrt())
    });
    let share = (1.0 - q0_fraction) / k;

    let mut reports = Vec::new();
    let mut lifted: Vec<DMatrix<f64>> = Vec::new();
    for (comp, (strategy, standalone, log)) in active.iter().zip(designed) {
        let size = shape.dims()[comp.dimension];
        let s2 = strategy.l2_sensitivity().powi(2);
        // Weight so that this component's squared column norm equals its share.
        let weight = (share / s2).sqrt();
        let mut rows = DMatrix::zeros(strategy.row_count(), n);
        for c in 0..n {
            let coord = (c / strides[comp.dimension]) % size;
            rows.column_mut(c).copy_from(&(strategy.rows().column(coord) * weight));
        }
        lifted.push(rows);
        reports.push(ComponentReport {
            dimension: comp.dimension,
            queries: comp.queries.len(),
            budget_fraction: share,
            standalone_error: standalone,
            error: standalone / share,
            log,
        });
    }

    let total_rows = 1 + lifted.iter().map(|r| r.nrows()).sum::<usize>();
    let mut rows = DMatrix::zeros(total_rows, n);
    rows.row_mut(0).fill(q0_fraction.sqrt());
    let mut r = 1;
    for block in &lifted {
        rows.rows_mut(r, block.nrows()).copy_from(block);
        r += block.nrows();
    }
    let q0_error = p / q0_fraction;
    let component_total = q0_error + reports.iter().map(|c| c.error).sum::<f64>();
    let composite_error = p * least_squares_error(w.gram(), &rows);
    Ok(SeparatedDesign {
        plan: plan.clone(),
        q0_fraction,
        components: reports,
        q0_error,
        component_total,
        composite_error,
        wall_seconds: started.elapsed().as_secs_f64(),
        rows,
    })
}

/// `‖A‖₂² · trace(WᵀW (AᵀA)⁺)`; exact when the workload rows lie in the row
/// space of `A`.
pub fn least_squares_error(workload_gram: &DMatrix<f64>, rows: &DMatrix<f64>) -> f64 {
    let gram = linalg::gram(rows);
    let s2 = gram.diagonal().max();
    let eig = gram.clone().symmetric_eigen();
    let cutoff = 1e-10 * eig.eigenvalues.max();
    let mut pinv = DMatrix::zeros(gram.nrows(), gram.ncols());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            let v = eig.eigenvectors.column(i);
            pinv.ger(1.0 / l, &v, &v, 1.0);
        }
    }
    s2 * linalg::trace_of_product(workload_gram, &pinv)
}

/// Contiguous blocks of cells, in flat cell order, sizes differing by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizationPlan {
    pub n: usize,
    pub m: usize,
    /// `(first cell, length)` per block.
    pub blocks: Vec<(usize, usize)>,
}

/// `round(n^{1/3})`, at least 1.
pub fn default_group_count(n: usize) -> usize {
    ((n as f64).cbrt().round() as usize).clamp(1, n.max(1))
}

impl GeneralizationPlan {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::Argument(format!("group count must lie in 1..={n}, got {m}")));
        }
        let (base, extra) = (n / m, n % m);
        let mut blocks = Vec::with_capacity(m);
        let mut start = 0;
        for b in 0..m {
            let len = base + usize::from(b < extra);
            blocks.push((start, len));
            start += len;
        }
        Ok(Self { n, m, blocks })
    }

    /// `B`: cells × blocks, `B[c, b] = 1` when cell `c` lies in block `b`.
    pub fn aggregation(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.m);
        for (j, &(start, len)) in self.blocks.iter().enumerate() {
            b.view_mut((start, j), (len, 1)).fill(1.0);
        }
        b
    }

    /// Gram of the generalized workload, `Bᵀ WᵀW B`.
    pub fn phase1_gram(&self, w: &Workload) -> DMatrix<f64> {
        let b = self.aggregation();
        b.transpose() * w.gram() * b
    }

    /// Rows of the generalized workload, `W B`.
    pub fn phase1_rows(&self, w: &Workload) -> Result<DMatrix<f64>> {
        Ok(w.require_rows()? * self.aggregation())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn generalize(w: &Workload, m: usize) -> Result<GeneralizationPlan> {
    GeneralizationPlan::new(w.n(), m)
}

#[derive(Debug, Clone)]
pub struct GeneralizedDesign {
    pub plan: GeneralizationPlan,
    pub strategy: Strategy,
    pub phase1: LsaLog,
    /// Uncapped per-block runs; only the first `phase2_levels` levels are used.
    pub phase2: Vec<LsaLog>,
    pub phase2_levels: usize,
    pub wall_seconds: f64,
}

/// Phase 1 designs over the `m` merged cells. Phase 2 designs inside each
/// block with the phase-1 strategy's restriction to the block as a fixed
/// base, so block totals already answered in phase 1 are accounted for.
pub fn design_generalized(
    plan: &GeneralizationPlan,
    w: &Workload,
    config: &LsaConfig,
) -> Result<GeneralizedDesign> {
    let started = Instant::now();
    if plan.n != w.n() {
        return Err(Error::Shape("workload does not match the plan".into()));
    }
    if plan.m == plan.n {
        let plain = design_levels(&LsaProblem::new(w), config)?;
        return Ok(GeneralizedDesign {
            plan: plan.clone(),
            strategy: plain.strategy()?,
            phase1: plain.log,
            phase2: Vec::new(),
            phase2_levels: 0,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    let phase1_shape = DomainShape::line(plan.m)?;
    let p1 = LsaProblem::with_base(
        phase1_shape,
        plan.phase1_gram(w),
        DMatrix::identity(plan.m, plan.m),
        1.0,
    )?;
    let outcome1 = design_levels(&p1, config)?;
    let a1 = outcome1.rows();
    let expanded = &a1 * plan.aggregation().transpose();
    let a1_gram = linalg::gram(&a1);

    let mut phase2: Vec<(usize, f64, LsaOutcome)> = plan
        .blocks
        .par_iter()
        .enumerate()
        .map(|(b, &(start, len))| {
            let c = a1_gram[(b, b)];
            let gram = w.gram().view((start, start), (len, len)).into_owned();
            let base = DMatrix::identity(len, len) + DMatrix::from_element(len, len, c);
            let problem = LsaProblem::with_base(DomainShape::line(len)?, gram, base, 1.0 + c)?;
            Ok((start, c, design_levels(&problem, config)?))
        })
        .collect::<Result<_>>()?;

    // Sensitivity is the largest column norm over all blocks, so the blocks
    // share one level cap: the one minimizing max sensitivity × Σ block trace.
    let deepest = phase2.iter().map(|(_, _, o)| o.levels.len()).max().unwrap_or(0);
    let objective = |cap: usize| {
        let mut s2 = 0.0f64;
        let mut trace = 0.0;
        for (_, c, o) in &phase2 {
            let l = cap.min(o.levels.len());
            s2 = s2.max(1.0 + c + l as f64);
            trace += o.log.error_trajectory[l] / (1.0 + c + l as f64);
        }
        s2 * trace
    };
    let cap = (0..=deepest)
        .min_by(|&a, &b| objective(a).total_cmp(&objective(b)))
        .unwrap_or(0);
    for (_, _, o) in &mut phase2 {
        o.levels.truncate(cap);
    }

    let n = plan.n;
    let phase2_rows: usize = phase2.iter().map(|(_, _, o)| o.shape.n() + o.level_rows().nrows()).sum();
    let mut rows = DMatrix::zeros(expanded.nrows() + phase2_rows, n);
    rows.rows_mut(0, expanded.nrows()).copy_from(&expanded);
    let mut r = expanded.nrows();
    for (start, _, outcome) in &phase2 {
        let local = outcome.rows();
        rows.view_mut((r, *start), (local.nrows(), local.ncols())).copy_from(&local);
        r += local.nrows();
    }
    let rows = reduce_rows(&pad_columns(rows), PARALLEL_TOL);
    let strategy = Strategy::new(w.shape().clone(), rows)?.with_name(format!("lsa-generalized-{}", plan.m));
    Ok(GeneralizedDesign {
        plan: plan.clone(),
        strategy,
        phase1: outcome1.log,
        phase2: phase2.into_iter().map(|(_, _, o)| o.log).collect(),
        phase2_levels: cap,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Appends `√(s² − ‖a_j‖²)·e_j` for every column below the largest squared
/// norm `s²`. Sensitivity is unchanged and the Gram only grows.
pub fn pad_columns(rows: DMatrix<f64>) -> DMatrix<f64> {
    let norms = linalg::column_norms(&rows, 2);
    let max = norms.iter().copied().fold(0.0, f64::max);
    let short: Vec<(usize, f64)> = norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| max * max - v * v > 1e-12 * max * max)
        .map(|(j, &v)| (j, (max * max - v * v).sqrt()))
        .collect();
    let r0 = rows.nrows();
    let mut out = rows.resize_vertically(r0 + short.len(), 0.0);
    for (i, &(j, weight)) in short.iter().enumerate() {
        out[(r0 + i, j)] = weight;
    }
    out
}
