use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    all_predicate_rows, build_all_range, build_marginal_workload, gram_all_predicate,
    range_marginals, sample_range_workload, DomainShape, SamplingMode, Workload, DEFAULT_BIAS,
};
use crate::errors::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    Allrange,
    Allpredicate,
    Marginals,
    SampledRange,
    Explicit,
    Identity,
}

/// Kind-specific parameters; unused fields are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorParams {
    /// Materialize dense rows where the kind allows it.
    pub dense: Option<bool>,
    /// `sampled-range`: number of ranges drawn.
    pub count: Option<usize>,
    /// `sampled-range`: `"uniform"` or `"biased"`.
    pub mode: Option<String>,
    /// `sampled-range`: bias strength for the biased mode.
    pub beta: Option<f64>,
    /// `explicit`: CSV file with one query per line.
    pub path: Option<PathBuf>,
    /// `marginals`: dimensions that receive all one-dimensional ranges.
    pub range_dims: Option<Vec<usize>>,
    /// `marginals`: explicit per-dimension query sets.
    pub queries: Option<Vec<Vec<Vec<f64>>>>,
}

/// JSON description of a workload: `{"kind", "shape", "params", "seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadDescriptor {
    pub kind: WorkloadKind,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub params: DescriptorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl WorkloadDescriptor {
    pub fn new(kind: WorkloadKind, shape: Vec<usize>) -> Self {
        Self {
            kind,
            shape,
            params: DescriptorParams::default(),
            seed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a descriptor from a file, or parses `arg` directly when it is inline JSON.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if arg.trim_start().starts_with('{') {
            Self::from_json(arg)
        } else {
            Self::from_json(&std::fs::read_to_string(arg)?)
        }
    }

    /// Short label used in report rows, e.g. `allrange[32x32]`.
    pub fn label(&self) -> String {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let kind = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let mut label = format!("{kind}[{}]", dims.join("x"));
        if self.kind == WorkloadKind::SampledRange {
            let mode = self.params.mode.as_deref().unwrap_or("uniform");
            label.push_str(&format!(":{mode}:{}", self.params.count.unwrap_or(0)));
        }
        label
    }

    pub fn shape(&self) -> Result<DomainShape> {
        DomainShape::new(self.shape.clone())
    }

    fn sampling_mode(&self) -> Result<SamplingMode> {
        match self.params.mode.as_deref().unwrap_or("uniform") {
            "uniform" => Ok(SamplingMode::Uniform),
            "biased" => Ok(SamplingMode::Biased {
                beta: self.params.beta.unwrap_or(DEFAULT_BIAS),
            }),
            other => Err(Error::Argument(format!("unknown sampling mode `{other}`"))),
        }
    }

    /// Builds the workload, resolving relative `explicit` paths against `base`.
    pub fn build_in(&self, base: Option<&Path>) -> Result<Workload> {
        let shape = self.shape()?;
        let dense = self.params.dense.unwrap_or(false);
        match self.kind {
            WorkloadKind::Allrange => build_all_range(&shape, dense),
            WorkloadKind::Allpredicate => {
                if shape.k() != 1 {
                    return Err(Error::Argument("allpredicate takes a one-dimensional shape".into()));
                }
                let n = shape.n();
                if dense {
                    Workload::from_rows_and_gram(shape, all_predicate_rows(n)?, gram_all_predicate(n))
                } else {
                    let m = u32::try_from(n).ok().and_then(|e| 1usize.checked_shl(e));
                    Workload::from_gram(shape, gram_all_predicate(n), m)
                }
            }
            WorkloadKind::Marginals => match (&self.params.queries, &self.params.range_dims) {
                (Some(q), _) => build_marginal_workload(&shape, q),
                (None, Some(dims)) => range_marginals(&shape, dims),
                (None, None) => {
                    let all: Vec<usize> = (0..shape.k()).collect();
                    range_marginals(&shape, &all)
                }
            },
            WorkloadKind::SampledRange => {
                let count = self
                    .params
                    .count
                    .ok_or_else(|| Error::Argument("sampled-range needs params.count".into()))?;
                let seed = self
                    .seed
                    .ok_or_else(|| Error::Argument("sampled-range needs a seed".into()))?;
                sample_range_workload(&shape, count, self.sampling_mode()?, seed)
            }
            WorkloadKind::Explicit => {
                let path = self
                    .params
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Argument("explicit workload needs params.path".into()))?;
                let resolved = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let rows = io::read_matrix_csv(&resolved)?;
                Workload::from_rows(shape, rows)
            }
            WorkloadKind::Identity => Ok(Workload::identity(shape)),
        }
    }

    pub fn build(&self) -> Result<Workload> {
        self.build_in(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_build_allrange() {
        let d = WorkloadDescriptor::from_json(r#"{"kind": "allrange", "shape": [4]}"#).unwrap();
        assert_eq!(d.label(), "allrange[4]");
        let w = d.build().unwrap();
        assert_eq!(w.query_count(), Some(10));
    }

    #[test]
    fn sampled_needs_seed_and_count() {
        let d = WorkloadDescriptor::from_json(
            r#"{"kind": "sampled-range", "shape": [16], "params": {"count": 5}}"#,
        )
        .unwrap();
        assert!(d.build().is_err());
        let d = WorkloadDescriptor::from_json(
            r#"{"kind": "sampled-range", "shape": [16], "params": {"count": 5, "mode": "biased"}, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(d.build().unwrap().query_count(), Some(5));
        assert_eq!(d.label(), "sampled-range[16]:biased:5");
    }

    #[test]
    fn allpredicate_requires_line() {
        let d = WorkloadDescriptor::new(WorkloadKind::Allpredicate, vec![2, 2]);
        assert!(d.build().is_err());
        let d = WorkloadDescriptor::new(WorkloadKind::Allpredicate, vec![4]);
        assert_eq!(d.build().unwrap().query_count(), Some(16));
    }

    #[test]
    fn malformed_json_is_an_error() {
        assert!(WorkloadDescriptor::from_json(r#"{"kind": "nope", "shape": [4]}"#).is_err());
        assert!(WorkloadDescriptor::from_json("{").is_err());
    }
}
