//! Model checkpoint container shared by every trainable module.
//!
//! A checkpoint is a single JSON document: module name, the config hash of
//! the experiment that produced it, free-form metadata (dimensions and
//! hyperparameters) and every parameter tensor with its shape. `f64` values
//! are written in shortest round-trip form, so save/load is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::Mat;
use super::params::ParamStore;
use crate::error::{PhdError, Result};

pub const CHECKPOINT_FORMAT: &str = "phd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub module: String,
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub params: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_store(
        module: impl Into<String>,
        config_hash: impl Into<String>,
        meta: serde_json::Value,
        store: &ParamStore,
    ) -> Self {
        let params = store
            .iter()
            .map(|(name, v)| TensorRecord {
                name: name.to_string(),
                rows: v.nrows(),
                cols: v.ncols(),
                data: v.iter().copied().collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            module: module.into(),
            config_hash: config_hash.into(),
            meta,
            params,
        }
    }

    /// Copies stored tensors into `store`, which must have the same layout.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(PhdError::invalid(format!(
                "checkpoint `{}` has {} tensors, model expects {}",
                self.module,
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (rec, id) in self.params.iter().zip(ids) {
            if rec.name != store.name(id) {
                return Err(PhdError::invalid(format!(
                    "checkpoint tensor `{}` does not match model tensor `{}`",
                    rec.name,
                    store.name(id)
                )));
            }
            let dst = store.value_mut(id);
            if dst.dim() != (rec.rows, rec.cols) || rec.data.len() != rec.rows * rec.cols {
                return Err(PhdError::invalid(format!("shape mismatch for `{}`", rec.name)));
            }
            dst.assign(
                &Mat::from_shape_vec((rec.rows, rec.cols), rec.data.clone())
                    .expect("validated shape"),
            );
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PhdError::io(parent, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| PhdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PhdError::Dependency(format!(
                "checkpoint file {} not found",
                path.display()
            )));
        }
        let text = fs::read_to_string(path).map_err(|e| PhdError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| PhdError::Parse {
            source_name: path.display().to_string(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(PhdError::invalid(format!(
                "{} is not a checkpoint (format `{}`)",
                path.display(),
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(PhdError::UnsupportedVersion {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ckpt)
    }
}
