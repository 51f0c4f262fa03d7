use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::{assign, SplitFractions};
use super::{Dataset, Standardization};
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Name prefix of the missingness indicator appended for a feature.
pub const MASK_PREFIX: &str = "mask→";

/// Parsed CSV before standardisation. Empty cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    /// One vector per feature.
    pub columns: Vec<Vec<Option<f64>>>,
    pub labels: Vec<f64>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn missing_cells(&self) -> usize {
        self.columns.iter().flatten().filter(|v| v.is_none()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct IngestOptions {
    pub fractions: SplitFractions,
    pub seed: u64,
}


fn data_err(line: u64, message: String) -> Error {
    Error::Data { line: line as usize, message }
}

/// Reads a comma-separated file with a header row.
pub fn read_csv(path: &Path, label_column: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => data_err(1, format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(data_err(1, "missing header row".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Config(format!("label column {label_column:?} not found in header")))?;
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    let feature_names = feature_idx.iter().map(|&i| headers[i].trim().to_string()).collect();
    let mut columns = vec![Vec::new(); feature_idx.len()];
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = rec[label_idx].trim();
        match label.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => labels.push(v),
            _ => return Err(data_err(line, format!("label {label:?} is not 0 or 1"))),
        }
        for (col, &i) in columns.iter_mut().zip(&feature_idx) {
            let cell = rec[i].trim();
            if cell.is_empty() {
                col.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => col.push(Some(v)),
                _ => {
                    return Err(data_err(line, format!("non-numeric value {cell:?} in column {:?}", &headers[i])));
                }
            }
        }
    }
    if labels.is_empty() {
        return Err(data_err(2, "no data rows".into()));
    }
    Ok(RawTable { feature_names, columns, labels })
}

/// Reads, splits and standardises a CSV file.
///
/// Statistics come from the training split only. Missing cells become 0
/// after standardisation, and every feature with at least one missing cell
/// gains a `mask→<feature>` indicator column at the end.
pub fn ingest_csv(path: &Path, label_column: &str, opts: &IngestOptions) -> Result<Dataset> {
    let raw = read_csv(path, label_column)?;
    let n = raw.n_rows();
    let splits = assign(&raw.labels, &opts.fractions, opts.seed)?;
    let train: Vec<usize> = (0..n).filter(|&i| splits[i] == super::Split::Train).collect();
    let stats = Standardization::fit(&raw.columns, &train);
    let with_missing: Vec<usize> = (0..raw.columns.len()).filter(|&j| raw.columns[j].iter().any(Option::is_none)).collect();
    let width = raw.columns.len() + with_missing.len();
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        for (j, col) in raw.columns.iter().enumerate() {
            data.push(col[i].map_or(0.0, |v| stats.apply(j, v)));
        }
        for &j in &with_missing {
            data.push(if raw.columns[j][i].is_none() { 1.0 } else { 0.0 });
        }
    }
    let mut names = raw.feature_names.clone();
    for &j in &with_missing {
        names.push(format!("{MASK_PREFIX}{}", raw.feature_names[j]));
    }
    let ds = Dataset {
        features: Tensor::new(vec![n, width], data)?,
        labels: raw.labels,
        feature_names: names,
        informative: None,
        splits,
        standardization: Some(stats),
    };
    ds.validate()?;
    Ok(ds)
}
