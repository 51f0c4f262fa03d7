use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// One timestamped observation of one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalRecord {
    pub patient: String,
    pub time: f64,
    pub values: Vec<f64>,
    /// Outcome observed at `time`.
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Windowed {
    pub dataset: Dataset,
    /// Time steps dropped because no observation preceded them.
    pub skipped: usize,
}

/// Turns per-patient series into fixed-length samples.
///
/// The sample for step `t` summarises the (at most `horizon`) observations
/// strictly before `t`: the last values, then `mean, min, max` per feature.
/// It carries the label observed at `t`. Records must be grouped by patient
/// and sorted by time within each patient.
pub fn window_temporal(records: &[TemporalRecord], feature_names: &[String], horizon: usize) -> Result<Windowed> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let f = feature_names.len();
    if let Some(bad) = records.iter().position(|r| r.values.len() != f) {
        return Err(Error::Data { line: bad + 1, message: format!("record has {} values, expected {f}", records[bad].values.len()) });
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    let mut start = 0;
    while start < records.len() {
        let mut end = start + 1;
        while end < records.len() && records[end].patient == records[start].patient {
            if records[end].time < records[end - 1].time {
                return Err(Error::Data { line: end + 1, message: "records are not sorted by time".into() });
            }
            end += 1;
        }
        for t in start..end {
            let window = &records[t.saturating_sub(horizon).max(start)..t];
            if window.is_empty() {
                skipped += 1;
                continue;
            }
            data.extend_from_slice(&window[window.len() - 1].values);
            for j in 0..f {
                let col = window.iter().map(|r| r.values[j]);
                let mean = col.clone().sum::<f64>() / window.len() as f64;
                let min = col.clone().fold(f64::INFINITY, f64::min);
                let max = col.fold(f64::NEG_INFINITY, f64::max);
                data.extend_from_slice(&[mean, min, max]);
            }
            labels.push(records[t].label);
        }
        start = end;
    }
    if labels.is_empty() {
        return Err(Error::Validation("no windowed samples could be formed".into()));
    }
    let mut names: Vec<String> = feature_names.iter().map(|n| format!("{n}:last")).collect();
    for n in feature_names {
        for stat in ["mean", "min", "max"] {
            names.push(format!("{n}:{stat}"));
        }
    }
    let rows = labels.len();
    let dataset = Dataset::new(Tensor::new(vec![rows, 4 * f], data)?, labels, names)?;
    Ok(Windowed { dataset, skipped })
}
