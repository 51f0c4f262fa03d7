use serde::{Deserialize, Serialize};

use super::metrics::MetricSet;
use super::mi::{MiReport, DEFAULT_BINS};
use super::pca::{pca_project, Pca};
use super::ttest::{feature_significance, FeatureSignificance};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::{embed, predict, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub bins: usize,
    pub pca_components: usize,
    /// Known informative indices, if any; enables the recovery summary.
    pub informative: Option<Vec<usize>>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, pca_components: 2, informative: None }
    }
}

/// Comparison against a known set of informative features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub informative: Vec<usize>,
    pub recovered: Vec<usize>,
    pub recall: f64,
    pub mean_mi_informative_zr: f64,
    pub mean_mi_nuisance_zr: f64,
    pub mean_mi_informative_zs: f64,
    pub mean_mi_nuisance_zs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub feature_names: Vec<String>,
    pub importance: Vec<f64>,
    pub support: Vec<usize>,
    pub mi_zr: MiReport,
    pub mi_zs: MiReport,
    pub significance: Vec<FeatureSignificance>,
    /// `None` when the matrix has too low a rank for the requested components.
    pub pca_raw: Option<Pca>,
    pub pca_zr: Option<Pca>,
    pub pca_zs: Option<Pca>,
    pub recovery: Option<Recovery>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `feature,importance,selected,mi_zr,mi_zs,t,p` per feature.
    pub fn features_csv(&self) -> String {
        let (a, b) = (self.mi_zr.feature_scores(), self.mi_zs.feature_scores());
        let mut s = String::from("feature,importance,selected,mi_zr,mi_zs,t,p\n");
        for (j, name) in self.feature_names.iter().enumerate() {
            let sig = &self.significance[j];
            s.push_str(&format!(
                "{name},{},{},{},{},{},{}\n",
                self.importance[j],
                self.support.contains(&j) as u8,
                a[j],
                b[j],
                sig.t,
                sig.p
            ));
        }
        s
    }
}

fn pca_or_none(x: &Tensor, k: usize, what: &str) -> Option<Pca> {
    match pca_project(x, k) {
        Ok(p) => Some(p),
        Err(e) => {
            log::warn!("skipping PCA of {what}: {e}");
            None
        }
    }
}

fn mean_over(scores: &[f64], idx: impl Iterator<Item = usize>) -> f64 {
    let v: Vec<f64> = idx.map(|i| scores[i]).collect();
    if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
}

/// Post-hoc analysis of a trained model on `x[samples × N]`.
pub fn analyze(params: &ModelParams, x: &Tensor, labels: &[f64], opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let n = params.config.n_features();
    if x.ndim() != 2 || x.shape()[1] != n || x.shape()[0] != labels.len() {
        return Err(Error::shape("analyze", x.shape(), &[labels.len(), n]));
    }
    let names = &params.feature_names;
    let support = params.selection()?.support;
    let emb = embed(params, x)?;
    let mi_zr = MiReport::compute(x, &emb.z_r, names, opts.bins)?;
    let mi_zs = MiReport::compute(x, &emb.z_s, names, opts.bins)?;
    let significance = feature_significance(x, labels, names, &support)?;
    let k = opts.pca_components;
    let recovery = match &opts.informative {
        Some(inf) => {
            if let Some(&bad) = inf.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!("informative index {bad} out of range")));
            }
            let recovered: Vec<usize> = support.iter().copied().filter(|i| inf.contains(i)).collect();
            let (a, b) = (mi_zr.feature_scores(), mi_zs.feature_scores());
            let nuisance = || (0..n).filter(|i| !inf.contains(i));
            Some(Recovery {
                recall: recovered.len() as f64 / inf.len().max(1) as f64,
                mean_mi_informative_zr: mean_over(&a, inf.iter().copied()),
                mean_mi_nuisance_zr: mean_over(&a, nuisance()),
                mean_mi_informative_zs: mean_over(&b, inf.iter().copied()),
                mean_mi_nuisance_zs: mean_over(&b, nuisance()),
                informative: inf.clone(),
                recovered,
            })
        }
        None => None,
    };
    Ok(AnalysisReport {
        feature_names: names.clone(),
        importance: params.importance(),
        support,
        mi_zr,
        mi_zs,
        significance,
        pca_raw: pca_or_none(x, k, "inputs"),
        pca_zr: pca_or_none(&emb.z_r, k, "z_r"),
        pca_zs: pca_or_none(&emb.z_s, k, "z_s"),
        recovery,
    })
}

/// Classification metrics of the model's deterministic predictions.
pub fn evaluate(params: &ModelParams, x: &Tensor, labels: &[f64], threshold: f64) -> Result<MetricSet> {
    let pred = predict(params, x)?;
    MetricSet::compute(labels, &pred.probabilities, threshold)
}
