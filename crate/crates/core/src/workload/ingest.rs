//! Reduce relational records to a vector of cell counts.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainShape;
use crate::errors::{Error, Result};
use crate::mechanism::{CellVector, Provenance};

/// Buckets for one attribute.
///
/// Numeric boundaries `[b₀, …, b_k]` define `k` buckets `[bᵢ, bᵢ₊₁)`, the last
/// one closed on the right. Categorical buckets are single values matched by
/// string equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Buckets {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Buckets {
    fn len(&self) -> usize {
        match self {
            Buckets::Numeric(b) => b.len().saturating_sub(1),
            Buckets::Categorical(v) => v.len(),
        }
    }

    fn validate(&self, attribute: &str) -> Result<()> {
        let err = |reason: &str| Error::Ingestion {
            attribute: attribute.to_string(),
            reason: reason.to_string(),
        };
        match self {
            Buckets::Numeric(b) => {
                if b.len() < 2 {
                    return Err(err("numeric buckets need at least two boundaries"));
                }
                if b.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(err("boundaries must be strictly increasing"));
                }
            }
            Buckets::Categorical(v) => {
                if v.is_empty() {
                    return Err(err("no categories"));
                }
                for (i, a) in v.iter().enumerate() {
                    if v[..i].contains(a) {
                        return Err(err(&format!("category `{a}` listed twice")));
                    }
                }
            }
        }
        Ok(())
    }

    fn bucket_of(&self, value: &str) -> Option<usize> {
        match self {
            Buckets::Numeric(b) => {
                let x: f64 = value.trim().parse().ok()?;
                let last = b.len() - 1;
                if x < b[0] || x > b[last] {
                    return None;
                }
                Some(b.partition_point(|&edge| edge <= x).saturating_sub(1).min(last - 1))
            }
            Buckets::Categorical(v) => v.iter().position(|c| c == value.trim()),
        }
    }
}

/// Ordered attribute → buckets map. Attribute order fixes the cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    attributes: Vec<(String, Buckets)>,
}

impl Partition {
    pub fn new(attributes: Vec<(String, Buckets)>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Argument("partition has no attributes".into()));
        }
        for (name, buckets) in &attributes {
            buckets.validate(name)?;
        }
        Ok(Self { attributes })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let attributes = map
            .into_iter()
            .map(|(k, v)| {
                let b: Buckets = serde_json::from_value(v).map_err(|e| Error::Ingestion {
                    attribute: k.clone(),
                    reason: format!("bad bucket list: {e}"),
                })?;
                Ok((k, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(attributes)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn shape(&self) -> DomainShape {
        DomainShape::new(self.attributes.iter().map(|(_, b)| b.len()).collect())
            .expect("validated buckets are nonempty")
    }

    pub fn attributes(&self) -> &[(String, Buckets)] {
        &self.attributes
    }
}

/// Records with a header row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }
}

/// Counts the records falling in each cell of `partition`.
pub fn ingest_cells(table: &Table, partition: &Partition) -> Result<CellVector> {
    let shape = partition.shape();
    let columns = partition
        .attributes()
        .iter()
        .map(|(name, _)| {
            table
                .headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Ingestion {
                    attribute: name.clone(),
                    reason: "column missing from the data".into(),
                })
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut counts = vec![0.0; shape.n()];
    let mut coords = vec![0usize; shape.k()];
    for (line, row) in table.rows.iter().enumerate() {
        for (slot, ((name, buckets), &col)) in
            coords.iter_mut().zip(partition.attributes().iter().zip(&columns))
        {
            let value = row.get(col).map(String::as_str).unwrap_or("");
            *slot = buckets.bucket_of(value).ok_or_else(|| Error::Ingestion {
                attribute: name.clone(),
                reason: format!("record {} value `{value}` is outside every bucket", line + 1),
            })?;
        }
        counts[shape.index_of(&coords)] += 1.0;
    }
    CellVector::new(shape, counts, Provenance::Ingested)
}
