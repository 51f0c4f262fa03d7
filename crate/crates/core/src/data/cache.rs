use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split, Standardization};
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

/// JSON side of the dataset cache. The values live in a separate file,
/// column after column, as little-endian `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_samples: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub labels: Vec<f64>,
    pub splits: Vec<Split>,
    pub informative: Option<Vec<usize>>,
    pub standardization: Option<Standardization>,
    pub data_file: String,
}

/// Writes `path` (manifest) and `path` with extension `bin` (columns).
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let bin = path.with_extension("bin");
    let (n, f) = (ds.n_samples(), ds.n_features());
    let mut bytes = Vec::with_capacity(n * f * 8);
    for j in 0..f {
        for i in 0..n {
            bytes.extend_from_slice(&ds.row(i)[j].to_le_bytes());
        }
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        n_samples: n,
        n_features: f,
        feature_names: ds.feature_names.clone(),
        labels: ds.labels.clone(),
        splits: ds.splits.clone(),
        informative: ds.informative.clone(),
        standardization: ds.standardization.clone(),
        data_file: bin
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("bad dataset path {}", path.display())))?
            .to_string(),
    };
    std::fs::write(&bin, bytes)?;
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data { line: e.line(), message: format!("bad dataset manifest: {e}") })?;
    if m.version != DATASET_VERSION {
        return Err(Error::Data { line: 0, message: format!("unsupported dataset version {}", m.version) });
    }
    let bytes = std::fs::read(path.with_file_name(&m.data_file))?;
    let (n, f) = (m.n_samples, m.n_features);
    if bytes.len() != n * f * 8 || m.labels.len() != n || m.feature_names.len() != f {
        return Err(Error::Data { line: 0, message: "dataset files are inconsistent".into() });
    }
    let cols: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut data = vec![0.0; n * f];
    for j in 0..f {
        for i in 0..n {
            data[i * f + j] = cols[j * n + i];
        }
    }
    let ds = Dataset {
        features: Tensor::new(vec![n, f], data)?,
        labels: m.labels,
        feature_names: m.feature_names,
        informative: m.informative,
        splits: m.splits,
        standardization: m.standardization,
    };
    ds.validate().map_err(|e| Error::Data { line: 0, message: e.to_string() })?;
    Ok(ds)
}
