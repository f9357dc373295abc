//! Checkpoint file format: one JSON document with named parameter tensors.
//!
//! Layout (version 1):
//!
//! ```json
//! {
//!   "format": "ppsebm-checkpoint",
//!   "version": 1,
//!   "meta": { ... free-form, e.g. experiment config and prompt slots ... },
//!   "tensors": { "base.embedding": { "shape": [75, 32], "data": [...] }, ... }
//! }
//! ```
//!
//! Tensor names are dotted paths (`base.*`, `ebm.decoder.*`, `ebm.alpha.*`,
//! `ebm.infer.*`). Values are written as JSON numbers; serde_json emits the
//! shortest representation that round-trips the exact f64.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::Tensor;

pub const CHECKPOINT_FORMAT: &str = "ppsebm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named tensor in the document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Tensor> for TensorEntry {
    fn from(t: &Tensor) -> TensorEntry {
        TensorEntry {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

impl TryFrom<&TensorEntry> for Tensor {
    type Error = CoreError;

    fn try_from(e: &TensorEntry) -> Result<Tensor> {
        Tensor::from_vec(e.shape.clone(), e.data.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, TensorEntry>,
}

impl Default for CheckpointDoc {
    fn default() -> Self {
        Self::new()
    }
}

impl CheckpointDoc {
    pub fn new() -> Self {
        CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: &Tensor) {
        self.tensors.insert(name.to_string(), tensor.into());
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let entry = self
            .tensors
            .get(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing tensor `{name}`")))?;
        Tensor::try_from(entry)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CheckpointDoc> {
        let file = BufReader::new(File::open(path)?);
        let doc: CheckpointDoc = serde_json::from_reader(file)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(CoreError::Checkpoint(format!(
                "unexpected format `{}`",
                doc.format
            )));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported version {} (expected {})",
                doc.version, CHECKPOINT_VERSION
            )));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trips_exactly() {
        let t = Tensor::from_vec(vec![2, 2], vec![0.1, -1.0 / 3.0, 2.5e-17, 7.0]).unwrap();
        let entry = TensorEntry::from(&t);
        let json = serde_json::to_string(&entry).unwrap();
        let back: TensorEntry = serde_json::from_str(&json).unwrap();
        let t2 = Tensor::try_from(&back).unwrap();
        for (a, b) in t.data().iter().zip(t2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let doc = CheckpointDoc::new();
        assert!(doc.tensor("nope").is_err());
    }
}
