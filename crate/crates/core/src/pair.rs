//! Graph pairs with ground truth, and their JSON form.
//!
//! On disk the ground truth is `gt_permutation`, one entry per node of graph
//! A holding its match in graph B or `-1` for a node without a counterpart.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::KeypointSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPair {
    pub graph_a: KeypointSet,
    pub graph_b: KeypointSet,
    #[serde(
        rename = "gt_permutation",
        serialize_with = "write_gt",
        deserialize_with = "read_gt"
    )]
    pub gt: Vec<Option<usize>>,
}

fn write_gt<S: Serializer>(gt: &[Option<usize>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw: Vec<i64> = gt.iter().map(|g| g.map_or(-1, |j| j as i64)).collect();
    raw.serialize(s)
}

fn read_gt<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Option<usize>>, D::Error> {
    let raw = Vec::<i64>::deserialize(d)?;
    raw.into_iter()
        .map(|j| match j {
            -1 => Ok(None),
            j if j >= 0 => Ok(Some(j as usize)),
            j => Err(serde::de::Error::custom(format!(
                "ground-truth entry {j} must be -1 or a node index"
            ))),
        })
        .collect()
}

impl GraphPair {
    /// Checks both keypoint sets and that the ground truth is a partial
    /// injection from A into B.
    pub fn validate(&self) -> Result<()> {
        self.graph_a.validate()?;
        self.graph_b.validate()?;
        if self.graph_a.len() != self.graph_b.len() {
            return Err(Error::invalid(format!(
                "graphs have {} and {} nodes; only square matching is supported",
                self.graph_a.len(),
                self.graph_b.len()
            )));
        }
        if self.graph_a.feature_dim() != self.graph_b.feature_dim() {
            return Err(Error::invalid("graphs have different feature dimensions"));
        }
        if self.gt.len() != self.graph_a.len() {
            return Err(Error::invalid(format!(
                "gt_permutation has {} entries for {} nodes",
                self.gt.len(),
                self.graph_a.len()
            )));
        }
        let mut seen = vec![false; self.graph_b.len()];
        for &j in self.gt.iter().flatten() {
            if j >= seen.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid(format!(
                    "gt_permutation entry {j} is out of range or repeated"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.graph_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph_a.is_empty()
    }

    pub fn n_matches(&self) -> usize {
        self.gt.iter().flatten().count()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let pair: Self = serde_json::from_str(&read_text(path.as_ref())?)?;
        pair.validate()?;
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub pairs: Vec<GraphPair>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::invalid(format!("pair {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let ds: Self = serde_json::from_str(&read_text(path.as_ref())?)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

/// Reads a whole file, naming it in the error.
pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
