//! Experiment sweeps: error-ratio tables over (workload × strategy) and
//! singular value bound curves for sampled range workloads.
//!
//! A config is plain JSON:
//!
//! ```json
//! {
//!   "rows": [
//!     {"workload": {"kind": "allrange", "shape": [64]},
//!      "strategies": ["workload", "identity", "hierarchical", "wavelet", "lsa"]}
//!   ],
//!   "sampling": {"shape": [256], "sizes": [100, 1000, 10000],
//!                "modes": [{"mode": "uniform"}, {"mode": "biased", "beta": 8.0}]},
//!   "seeds": [1, 2, 3]
//! }
//! ```
//!
//! Rows are evaluated in parallel and written in config order. A failing row
//! is recorded with its message and the sweep continues.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{svd_bound, ErrorReport, PrivacyParams};
use crate::errors::{Error, Result};
use crate::io::{self, fmt_sig};
use crate::lsa::{self, LsaConfig};
use crate::scaling;
use crate::strategy::{
    hierarchical_strategy, identity_strategy, is_variable_agnostic, variable_agnostic_optimal,
    wavelet_strategy, Strategy,
};
use crate::workload::{
    build_all_range, sample_range_workload, DomainShape, SamplingMode, Workload, WorkloadDescriptor,
    WorkloadKind,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MATMECH_THREADS";

/// Where a strategy comes from. Serialized as a bare name, or `{"file": path}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategySource {
    /// The workload itself, represented by a factor of its Gram.
    Workload,
    Identity,
    /// Binary tree per dimension; a Kronecker product on multi-dimensional shapes.
    Hierarchical,
    /// Haar per dimension; a Kronecker product on multi-dimensional shapes.
    Wavelet,
    Lsa,
    VarAgnostic,
    File(PathBuf),
}

impl StrategySource {
    pub fn label(&self) -> String {
        match self {
            StrategySource::Workload => "workload".into(),
            StrategySource::Identity => "identity".into(),
            StrategySource::Hierarchical => "hierarchical".into(),
            StrategySource::Wavelet => "wavelet".into(),
            StrategySource::Lsa => "lsa".into(),
            StrategySource::VarAgnostic => "var-agnostic".into(),
            StrategySource::File(p) => format!(
                "file:{}",
                p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default()
            ),
        }
    }

    /// Parses a bare name, falling back to a file path.
    pub fn parse(arg: &str) -> Self {
        match arg {
            "workload" => StrategySource::Workload,
            "identity" => StrategySource::Identity,
            "hierarchical" => StrategySource::Hierarchical,
            "wavelet" => StrategySource::Wavelet,
            "lsa" => StrategySource::Lsa,
            "var-agnostic" => StrategySource::VarAgnostic,
            path => StrategySource::File(PathBuf::from(path)),
        }
    }
}

/// Options applied to every `lsa` strategy in a sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingOptions {
    pub separate: bool,
    pub generalize: Option<usize>,
    pub q0_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub workload: WorkloadDescriptor,
    pub strategies: Vec<StrategySource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSweep {
    pub shape: Vec<usize>,
    pub sizes: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<SamplingMode>,
}

fn default_modes() -> Vec<SamplingMode> {
    vec![
        SamplingMode::Uniform,
        SamplingMode::Biased {
            beta: crate::workload::DEFAULT_BIAS,
        },
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub table: Option<PathBuf>,
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub rows: Vec<SweepRow>,
    pub sampling: Option<SamplingSweep>,
    pub privacy: PrivacyParams,
    /// Seeds for randomized steps. Sampled descriptors without their own seed
    /// take the first; sampling curves average over all of them.
    pub seeds: Vec<u64>,
    pub lsa: LsaConfig,
    pub scaling: ScalingOptions,
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks that referenced files exist and that seeds cover randomized steps.
    pub fn validate(&self, base: Option<&Path>) -> Result<()> {
        let needs_seed = self.sampling.is_some()
            || self.rows.iter().any(|r| {
                r.workload.kind == WorkloadKind::SampledRange && r.workload.seed.is_none()
            });
        if needs_seed && self.seeds.is_empty() {
            return Err(Error::Argument("config has randomized steps but no seeds".into()));
        }
        for row in &self.rows {
            let mut paths: Vec<&PathBuf> = row
                .strategies
                .iter()
                .filter_map(|s| match s {
                    StrategySource::File(p) => Some(p),
                    _ => None,
                })
                .collect();
            if row.workload.kind == WorkloadKind::Explicit {
                paths.extend(row.workload.params.path.as_ref());
            }
            for p in paths {
                let resolved = resolve(base, p);
                if !resolved.exists() {
                    return Err(Error::Argument(format!("{} does not exist", resolved.display())));
                }
            }
        }
        Ok(())
    }
}

fn resolve(base: Option<&Path>, path: &Path) -> PathBuf {
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.to_path_buf(),
    }
}

/// One (workload, strategy) cell of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub workload: String,
    pub strategy: String,
    pub outcome: std::result::Result<ErrorReport, String>,
}

/// Mean sampled-to-full ratio of per-query bounds at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: String,
    pub size: usize,
    pub ratio: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub table: Vec<RowResult>,
    pub curves: Vec<CurvePoint>,
}

pub const TABLE_HEADER: &str = "workload,strategy,n,total_error,svdb,ratio,sensitivity,status";
pub const CURVE_HEADER: &str = "mode,size,ratio,min,max";

impl ExperimentOutput {
    pub fn all_succeeded(&self) -> bool {
        self.table.iter().all(|r| r.outcome.is_ok())
    }

    pub fn table_csv(&self) -> Result<String> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        out.write_record(TABLE_HEADER.split(','))?;
        for row in &self.table {
            match &row.outcome {
                Ok(r) => out.write_record([
                    r.workload.clone(),
                    r.strategy.clone(),
                    r.n.to_string(),
                    fmt_sig(r.total_error),
                    fmt_sig(r.svdb),
                    fmt_sig(r.ratio),
                    fmt_sig(r.sensitivity),
                    "ok".into(),
                ])?,
                Err(msg) => out.write_record([
                    row.workload.as_str(),
                    row.strategy.as_str(),
                    "",
                    "",
                    "",
                    "",
                    "",
                    &format!("error: {msg}"),
                ])?,
            }
        }
        finish(out)
    }

    pub fn curves_csv(&self) -> Result<String> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        out.write_record(CURVE_HEADER.split(','))?;
        for p in &self.curves {
            out.write_record([
                p.mode.clone(),
                p.size.to_string(),
                fmt_sig(p.ratio),
                fmt_sig(p.min),
                fmt_sig(p.max),
            ])?;
        }
        finish(out)
    }

    /// Points of one sampling mode, in increasing sample size.
    pub fn curve(&self, mode: &str) -> Vec<&CurvePoint> {
        let mut pts: Vec<&CurvePoint> = self.curves.iter().filter(|p| p.mode == mode).collect();
        pts.sort_by_key(|p| p.size);
        pts
    }
}

fn finish(out: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Builds a pool honoring `MATMECH_THREADS` and runs `f` inside it.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("{THREADS_ENV}={v} is not a thread count")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn kronecker_of(shape: &DomainShape, build: impl Fn(usize) -> Result<Strategy>, name: &str) -> Result<Strategy> {
    let parts = shape.dims().iter().map(|&d| build(d)).collect::<Result<Vec<_>>>()?;
    let s = if parts.len() == 1 {
        parts.into_iter().next().expect("one factor")
    } else {
        Strategy::kronecker(&parts)?
    };
    Ok(s.with_name(name))
}

/// Strategy for `source` on `w`. LSA with separation yields a rank-deficient
/// composite, so that case is handled by [`evaluate`] instead.
pub fn build_strategy(
    source: &StrategySource,
    w: &Workload,
    config: &ExperimentConfig,
    base: Option<&Path>,
) -> Result<Strategy> {
    let shape = w.shape();
    match source {
        StrategySource::Workload => Ok(Strategy::from_gram(shape.clone(), w.gram())?.with_name("workload")),
        StrategySource::Identity => Ok(Strategy::new(
            shape.clone(),
            identity_strategy(shape.n())?.rows().clone(),
        )?
        .with_name("identity")),
        StrategySource::Hierarchical => {
            kronecker_of(shape, |d| hierarchical_strategy(d, 2), "hierarchical")
        }
        StrategySource::Wavelet => kronecker_of(shape, wavelet_strategy, "wavelet"),
        StrategySource::VarAgnostic => {
            let form = is_variable_agnostic(w.gram(), 1e-9)
                .ok_or_else(|| Error::Argument("workload Gram is not variable-agnostic".into()))?;
            Ok(variable_agnostic_optimal(form)?.with_name("var-agnostic"))
        }
        StrategySource::File(path) => {
            let rows = io::read_matrix_csv(&resolve(base, path))?;
            Ok(Strategy::new(shape.clone(), rows)?.with_name(source.label()))
        }
        StrategySource::Lsa => match config.scaling.generalize {
            Some(m) => {
                let plan = scaling::generalize(w, m)?;
                Ok(scaling::design_generalized(&plan, w, &config.lsa)?
                    .strategy
                    .with_name("lsa"))
            }
            None => Ok(lsa::design(w, &config.lsa)?.with_name("lsa")),
        },
    }
}

/// Error report for one (workload, strategy) pair.
pub fn evaluate(
    label: &str,
    source: &StrategySource,
    w: &Workload,
    config: &ExperimentConfig,
    base: Option<&Path>,
) -> Result<ErrorReport> {
    if *source == StrategySource::Lsa && config.scaling.separate {
        let mut plan = scaling::separate(w)?;
        if let Some(f) = config.scaling.q0_fraction {
            plan = plan.with_q0_fraction(f)?;
        }
        let design = scaling::design_separated(&plan, w, &config.lsa, &config.privacy)?;
        let svdb = svd_bound(w, &config.privacy);
        return Ok(ErrorReport {
            workload: label.to_string(),
            strategy: "lsa-separated".into(),
            n: w.n(),
            total_error: design.composite_error,
            svdb,
            ratio: design.composite_error / svdb,
            sensitivity: crate::strategy::l2_sensitivity(&design.rows),
            per_query: None,
        });
    }
    let a = build_strategy(source, w, config, base)?;
    let mut report = ErrorReport::evaluate(label, w, &a, &config.privacy)?;
    report.strategy = source.label();
    Ok(report)
}

fn descriptor_with_seed(d: &WorkloadDescriptor, seeds: &[u64]) -> WorkloadDescriptor {
    let mut d = d.clone();
    if d.seed.is_none() {
        d.seed = seeds.first().copied();
    }
    d
}

/// Runs the sweep; `base` resolves relative paths in the config.
pub fn run(config: &ExperimentConfig, base: Option<&Path>) -> Result<ExperimentOutput> {
    config.validate(base)?;
    let table = config
        .rows
        .par_iter()
        .flat_map_iter(|row| {
            let descriptor = descriptor_with_seed(&row.workload, &config.seeds);
            let label = descriptor.label();
            let built = descriptor.build_in(base).map_err(|e| e.to_string());
            row.strategies
                .iter()
                .map(|s| (label.clone(), built.clone(), s.clone()))
                .collect::<Vec<_>>()
        })
        .map(|(label, built, source)| {
            let outcome = built.and_then(|w| {
                evaluate(&label, &source, &w, config, base).map_err(|e| e.to_string())
            });
            RowResult {
                workload: label,
                strategy: source.label(),
                outcome,
            }
        })
        .collect();
    let curves = match &config.sampling {
        Some(sweep) => sampled_curves(sweep, &config.seeds)?,
        None => Vec::new(),
    };
    Ok(ExperimentOutput { table, curves })
}

fn mode_label(mode: &SamplingMode) -> String {
    match mode {
        SamplingMode::Uniform => "uniform".into(),
        SamplingMode::Biased { .. } => "biased".into(),
    }
}

/// Per-query singular value bound of sampled range workloads relative to the
/// full range workload: `(svdb(S)/|S|) / (svdb(W)/|W|)`, averaged over seeds.
pub fn sampled_curves(sweep: &SamplingSweep, seeds: &[u64]) -> Result<Vec<CurvePoint>> {
    if seeds.is_empty() {
        return Err(Error::Argument("sampling curves need at least one seed".into()));
    }
    let shape = DomainShape::new(sweep.shape.clone())?;
    let full = build_all_range(&shape, false)?;
    let m_full = full
        .query_count()
        .ok_or_else(|| Error::Capacity("range count overflows".into()))?;
    let privacy = PrivacyParams::Normalized;
    let per_query_full = svd_bound(&full, &privacy) / m_full as f64;

    let jobs: Vec<(SamplingMode, usize, u64)> = sweep
        .modes
        .iter()
        .flat_map(|&m| sweep.sizes.iter().flat_map(move |&s| seeds.iter().map(move |&seed| (m, s, seed))))
        .collect();
    let ratios = jobs
        .par_iter()
        .map(|&(mode, size, seed)| {
            let w = sample_range_workload(&shape, size, mode, seed)?;
            Ok(svd_bound(&w, &privacy) / size as f64 / per_query_full)
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(ratios
        .chunks(seeds.len())
        .zip(jobs.chunks(seeds.len()))
        .map(|(rs, js)| {
            let (mode, size, _) = js[0];
            CurvePoint {
                mode: mode_label(&mode),
                size,
                ratio: rs.iter().sum::<f64>() / rs.len() as f64,
                min: rs.iter().copied().fold(f64::INFINITY, f64::min),
                max: rs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

/// Writes the table and curve CSVs to the configured paths, if any.
pub fn write_outputs(output: &ExperimentOutput, paths: &OutputPaths, base: Option<&Path>) -> Result<()> {
    if let Some(p) = &paths.table {
        std::fs::write(resolve(base, p), output.table_csv()?)?;
    }
    if let Some(p) = &paths.curves {
        std::fs::write(resolve(base, p), output.curves_csv()?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_header_only() {
        let out = run(&ExperimentConfig::default(), None).unwrap();
        assert_eq!(out.table_csv().unwrap(), format!("{TABLE_HEADER}\n"));
        assert!(out.all_succeeded());
    }

    #[test]
    fn sources_round_trip_through_json() {
        let json = r#"["workload", "lsa", "var-agnostic", {"file": "a/b.csv"}]"#;
        let s: Vec<StrategySource> = serde_json::from_str(json).unwrap();
        assert_eq!(s[2], StrategySource::VarAgnostic);
        assert_eq!(s[3].label(), "file:b");
        assert_eq!(StrategySource::parse("wavelet"), StrategySource::Wavelet);
        assert_eq!(StrategySource::parse("x.csv"), StrategySource::File("x.csv".into()));
    }

    #[test]
    fn failures_are_recorded_and_order_is_kept() {
        let config = ExperimentConfig::from_json(
            r#"{"rows": [
                {"workload": {"kind": "allrange", "shape": [6]},
                 "strategies": ["identity", "wavelet", "hierarchical"]},
                {"workload": {"kind": "allrange", "shape": [8]},
                 "strategies": ["workload", "var-agnostic"]}
            ]}"#,
        )
        .unwrap();
        let out = run(&config, None).unwrap();
        let names: Vec<_> = out.table.iter().map(|r| r.strategy.as_str()).collect();
        assert_eq!(names, ["identity", "wavelet", "hierarchical", "workload", "var-agnostic"]);
        // Six cells is not a power of two; AllRange is not variable-agnostic.
        assert!(out.table[1].outcome.is_err());
        assert!(out.table[4].outcome.is_err());
        assert!(out.table[0].outcome.is_ok());
        assert!(!out.all_succeeded());
        let csv = out.table_csv().unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(2).unwrap().contains("error: "));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let config = ExperimentConfig::from_json(
            r#"{"rows": [{"workload": {"kind": "sampled-range", "shape": [16], "params": {"count": 20}},
                         "strategies": ["identity", "lsa"]}],
                "sampling": {"shape": [16], "sizes": [5, 50]},
                "seeds": [4, 5]}"#,
        )
        .unwrap();
        let a = run(&config, None).unwrap();
        let b = run(&config, None).unwrap();
        assert_eq!(a.table_csv().unwrap(), b.table_csv().unwrap());
        assert_eq!(a.curves_csv().unwrap(), b.curves_csv().unwrap());
        assert_eq!(a.curves.len(), 4);
        assert_eq!(a.table[0].workload, "sampled-range[16]:uniform:20");
    }

    #[test]
    fn missing_seed_and_missing_file_rejected() {
        let config = ExperimentConfig::from_json(r#"{"sampling": {"shape": [8], "sizes": [4]}}"#).unwrap();
        assert!(run(&config, None).is_err());
        let config = ExperimentConfig::from_json(
            r#"{"rows": [{"workload": {"kind": "identity", "shape": [4]},
                         "strategies": [{"file": "/nonexistent/strategy.csv"}]}]}"#,
        )
        .unwrap();
        assert!(run(&config, None).is_err());
    }

    #[test]
    fn kronecker_sources_on_a_grid() {
        let config = ExperimentConfig::default();
        let w = build_all_range(&DomainShape::new(vec![4, 4]).unwrap(), false).unwrap();
        let h = build_strategy(&StrategySource::Hierarchical, &w, &config, None).unwrap();
        assert_eq!(h.row_count(), 49);
        let r = evaluate("g", &StrategySource::Identity, &w, &config, None).unwrap();
        assert!(r.ratio > 1.0);
    }

    #[test]
    fn separated_lsa_row() {
        let config = ExperimentConfig::from_json(r#"{"scaling": {"separate": true}}"#).unwrap();
        let shape = DomainShape::new(vec![4, 4]).unwrap();
        let w = crate::workload::range_marginals(&shape, &[0, 1]).unwrap();
        let r = evaluate("m", &StrategySource::Lsa, &w, &config, None).unwrap();
        assert_eq!(r.strategy, "lsa-separated");
        assert!(r.ratio >= 1.0 - 1e-9);
    }
}
