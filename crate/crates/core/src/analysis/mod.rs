//! Post-hoc evaluation: classification metrics, mutual information,
//! per-feature significance tests and PCA projections.

pub mod metrics;
pub mod mi;
pub mod pca;
pub mod report;
pub mod ttest;

pub use metrics::{auprc, auroc, f1, min_se_pplus, Confusion, MetricSet};
pub use mi::{mutual_information, MiEstimate, MiReport, DEFAULT_BINS};
pub use pca::{pca_project, projections_csv, Pca};
pub use report::{analyze, evaluate, AnalysisOptions, AnalysisReport, Recovery};
pub use ttest::{feature_significance, welch_ttest, FeatureSignificance, TTest};
