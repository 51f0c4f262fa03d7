//! Datasets: synthetic generation with planted informative features, CSV
//! ingestion, temporal windowing, stratified splits and an on-disk cache.

mod cache;
mod csv_ingest;
mod split;
mod synthetic;
mod temporal;

pub use cache::{load_dataset, save_dataset, DatasetManifest, DATASET_VERSION};
pub use csv_ingest::{ingest_csv, read_csv, IngestOptions, RawTable, MASK_PREFIX};
pub use split::{split, SplitFractions};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use temporal::{window_temporal, TemporalRecord, Windowed};

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}, expected train, val or test"))),
        }
    }
}

/// Per-feature affine standardisation, `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics of the non-missing values in the given rows.
    /// Constant or empty columns get `std = 1`.
    pub fn fit(columns: &[Vec<Option<f64>>], rows: &[usize]) -> Self {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for col in columns {
            let vals: Vec<f64> = rows.iter().filter_map(|&r| col[r]).collect();
            let n = vals.len() as f64;
            let m = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / n };
            let var = if vals.is_empty() { 0.0 } else { vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n };
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }

    pub fn invert(&self, j: usize, v: f64) -> f64 {
        v * self.std[j] + self.mean[j]
    }
}

/// A labelled feature matrix with a split assignment per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `[samples × features]`.
    pub features: Tensor,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Ground-truth informative indices, known for synthetic data only.
    pub informative: Option<Vec<usize>>,
    pub splits: Vec<Split>,
    /// Statistics applied to the first `standardization.mean.len()` columns.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    /// Builds a dataset with every sample in the training split.
    pub fn new(features: Tensor, labels: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let n = labels.len();
        let ds = Self {
            splits: vec![Split::Train; n],
            features,
            labels,
            feature_names,
            informative: None,
            standardization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_features();
        &self.features.data()[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|i| self.row(i)[j]).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1.0).count()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Features and labels of the rows in `rows`, in that order.
    pub fn take(&self, rows: &[usize]) -> Result<(Tensor, Vec<f64>)> {
        if rows.is_empty() {
            return Err(Error::Validation("selection contains no samples".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * self.n_features());
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(vec![rows.len(), self.n_features()], data)?, labels))
    }

    pub fn subset(&self, split: Split) -> Result<(Tensor, Vec<f64>)> {
        self.take(&self.indices(split))
            .map_err(|_| Error::Validation(format!("split {split:?} is empty")))
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let (n, f) = (self.n_samples(), self.n_features());
        if self.features.shape() != [n, f] {
            return Err(Error::Validation(format!(
                "feature matrix has shape {:?}, expected [{n}, {f}]",
                self.features.shape()
            )));
        }
        if self.splits.len() != n {
            return Err(Error::Validation("one split label per sample required".into()));
        }
        if !self.features.all_finite() {
            return Err(Error::Validation("features contain non-finite values".into()));
        }
        if self.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        if let Some(inf) = &self.informative {
            if inf.iter().any(|&i| i >= f) {
                return Err(Error::Validation("informative index out of range".into()));
            }
        }
        Ok(())
    }
}
