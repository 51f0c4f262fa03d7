//! Checkpoints: a JSON manifest next to a flat little-endian `f64` file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, ModelConfig, ModelParams};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data file, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub learning_rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub tau: f64,
    pub feature_names: Vec<String>,
    /// File name of the value store, relative to the manifest.
    pub data_file: String,
    pub n_values: usize,
    pub tensors: Vec<TensorEntry>,
    /// Moment tensors are stored as `adam.m/<name>` and `adam.v/<name>`.
    pub optimizer: Option<OptimizerManifest>,
}

/// Writes `path` (manifest) and `path` with extension `bin` (values).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bin_path = path.with_extension("bin");
    let mut entries = Vec::new();
    let mut bytes = Vec::new();
    let mut push = |name: String, t: &Tensor, entries: &mut Vec<TensorEntry>| {
        entries.push(TensorEntry { name, shape: t.shape().to_vec(), offset: bytes.len() / 8 });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in params.store.iter() {
        push(name.to_string(), t, &mut entries);
    }
    let optimizer = params.optimizer.as_ref().map(|adam| {
        for (name, t) in params.store.names().iter().zip(&adam.m) {
            push(format!("adam.m/{name}"), t, &mut entries);
        }
        for (name, t) in params.store.names().iter().zip(&adam.v) {
            push(format!("adam.v/{name}"), t, &mut entries);
        }
        OptimizerManifest {
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            step: adam.step,
            learning_rates: adam.learning_rates.clone(),
        }
    });
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: params.config,
        tau: params.tau,
        feature_names: params.feature_names.clone(),
        data_file: bin_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Artifact(format!("bad checkpoint path {}", path.display())))?
            .to_string(),
        n_values: bytes.len() / 8,
        tensors: entries,
        optimizer,
    };
    std::fs::write(&bin_path, &bytes)?;
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Artifact(format!("cannot read checkpoint {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("malformed checkpoint manifest: {e}")))
}

/// Loads a checkpoint written by [`save_checkpoint`] and checks it against
/// the parameter layout its config implies.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let m = read_manifest(path)?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Artifact(format!("unsupported checkpoint version {}", m.version)));
    }
    let bin_path = path.with_file_name(&m.data_file);
    let bytes = std::fs::read(&bin_path)
        .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", bin_path.display())))?;
    if bytes.len() != m.n_values * 8 {
        return Err(Error::Artifact(format!("data file holds {} bytes, manifest expects {}", bytes.len(), m.n_values * 8)));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let read = |e: &TensorEntry| -> Result<Tensor> {
        let len: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Artifact(format!("tensor {} lies outside the data file", e.name)))?;
        Tensor::new(e.shape.clone(), slice.to_vec()).map_err(|err| Error::Artifact(format!("tensor {}: {err}", e.name)))
    };

    let template = ModelParams::init(m.config, m.tau, m.feature_names.clone(), 0)
        .map_err(|e| Error::Artifact(format!("checkpoint config rejected: {e}")))?;
    let lookup = |name: &str| m.tensors.iter().find(|e| e.name == name);
    let mut store = ParamStore::new();
    for (name, t) in template.store.iter() {
        let entry = lookup(name).ok_or_else(|| Error::Artifact(format!("checkpoint lacks parameter {name}")))?;
        if entry.shape != t.shape() {
            return Err(Error::Artifact(format!("parameter {name} has shape {:?}, expected {:?}", entry.shape, t.shape())));
        }
        store.insert(name, read(entry)?);
    }
    let optimizer = match &m.optimizer {
        None => None,
        Some(o) => {
            let mut adam = Adam::new(0.0, &store);
            if o.learning_rates.len() != store.len() {
                return Err(Error::Artifact("optimizer state does not match parameters".into()));
            }
            adam.beta1 = o.beta1;
            adam.beta2 = o.beta2;
            adam.eps = o.eps;
            adam.step = o.step;
            adam.learning_rates = o.learning_rates.clone();
            for (i, name) in store.names().iter().enumerate() {
                for (kind, dst) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                    let key = format!("adam.{kind}/{name}");
                    let entry = lookup(&key).ok_or_else(|| Error::Artifact(format!("checkpoint lacks {key}")))?;
                    if entry.shape != dst.shape() {
                        return Err(Error::Artifact(format!("{key} has wrong shape")));
                    }
                    *dst = read(entry)?;
                }
            }
            Some(adam)
        }
    };
    Ok(ModelParams { config: m.config, store, tau: m.tau, feature_names: m.feature_names, optimizer })
}
