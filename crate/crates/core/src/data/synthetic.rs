use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::split::{assign, SplitFractions};
use super::{Dataset, MASK_PREFIX};
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Parameters of the planted-feature benchmark.
///
/// Informative features are independent standard normals. The label is
/// `1[Σ s_j·tanh(1.5·x_j) + ½·Σ tanh(x_a)·tanh(x_b) + noise·ε ≥ 0]` where
/// `s_j = ±1` and the product terms pair up consecutive informative
/// features. Nuisance features share one latent factor with loading
/// `sqrt(correlation)` and never enter the label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_features: usize,
    pub n_informative: usize,
    pub n_samples: usize,
    /// Standard deviation of the Gaussian label noise.
    pub noise: f64,
    /// Pairwise correlation among nuisance features.
    pub correlation: f64,
    /// Probability that a cell is missing.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_features: 64,
            n_informative: 8,
            n_samples: 4000,
            noise: 0.5,
            correlation: 0.3,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_informative == 0 || self.n_informative > self.n_features {
            return Err(Error::Config(format!(
                "need 1 <= informative <= features, got {} informative of {}",
                self.n_informative, self.n_features
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("need at least 2 samples".into()));
        }
        for (name, v) in [("correlation", self.correlation), ("missing_rate", self.missing_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Noise-free label score of one row given the informative columns and signs.
pub(crate) fn label_score(row: &[f64], informative: &[usize], signs: &[f64]) -> f64 {
    let main: f64 = informative.iter().zip(signs).map(|(&j, s)| s * (1.5 * row[j]).tanh()).sum();
    let pairs: f64 = informative.chunks_exact(2).map(|p| row[p[0]].tanh() * row[p[1]].tanh()).sum();
    main + 0.5 * pairs
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, f, k) = (spec.n_samples, spec.n_features, spec.n_informative);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut informative = sample(&mut rng, f, k).into_vec();
    informative.sort_unstable();
    let signs: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let is_informative: Vec<bool> = (0..f).map(|j| informative.binary_search(&j).is_ok()).collect();

    let (load, own) = (spec.correlation.sqrt(), (1.0 - spec.correlation).sqrt());
    let mut data = vec![0.0; n * f];
    let mut labels = Vec::with_capacity(n);
    for row in data.chunks_mut(f) {
        let shared: f64 = rng.sample(StandardNormal);
        for (j, v) in row.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *v = if is_informative[j] { e } else { load * shared + own * e };
        }
        let eps: f64 = rng.sample(StandardNormal);
        let score = label_score(row, &informative, &signs) + spec.noise * eps;
        labels.push(if score >= 0.0 { 1.0 } else { 0.0 });
    }
    let mut names: Vec<String> = (0..f).map(|j| format!("x{j:03}")).collect();

    if spec.missing_rate > 0.0 {
        let mut missing = vec![false; n * f];
        for m in missing.iter_mut() {
            *m = rng.random::<f64>() < spec.missing_rate;
        }
        let with_missing: Vec<usize> = (0..f).filter(|&j| (0..n).any(|i| missing[i * f + j])).collect();
        let width = f + with_missing.len();
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            for j in 0..f {
                out.push(if missing[i * f + j] { 0.0 } else { data[i * f + j] });
            }
            for &j in &with_missing {
                out.push(if missing[i * f + j] { 1.0 } else { 0.0 });
            }
        }
        for &j in &with_missing {
            names.push(format!("{MASK_PREFIX}{}", names[j]));
        }
        data = out;
    }

    let splits = assign(&labels, &SplitFractions::default(), spec.seed)?;
    let width = names.len();
    let ds = Dataset {
        features: Tensor::new(vec![n, width], data)?,
        labels,
        feature_names: names,
        informative: Some(informative),
        splits,
        standardization: None,
    };
    ds.validate()?;
    Ok(ds)
}
