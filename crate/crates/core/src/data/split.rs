use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// Train, validation and test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|v| !(0.0..=1.0).contains(v)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split fractions {parts:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }
}

/// Stratified assignment: each class is shuffled and cut by the fractions,
/// with the test split taking the rounding remainder.
pub(crate) fn assign(labels: &[f64], fr: &SplitFractions, seed: u64) -> Result<Vec<Split>> {
    fr.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; labels.len()];
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = ((fr.train * n).round() as usize).min(idx.len());
        let n_val = ((fr.val * n).round() as usize).min(idx.len() - n_train);
        for (r, &i) in idx.iter().enumerate() {
            out[i] = if r < n_train {
                Split::Train
            } else if r < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    for (split, frac) in [(Split::Train, fr.train), (Split::Val, fr.val), (Split::Test, fr.test)] {
        if frac == 0.0 {
            continue;
        }
        for class in [0.0, 1.0] {
            if !labels.iter().zip(&out).any(|(&y, &s)| y == class && s == split) {
                return Err(Error::Validation(format!("{split:?} split has no samples of class {class}")));
            }
        }
    }
    Ok(out)
}

/// Reassigns the split of every sample, stratified by label and
/// deterministic under `seed`.
pub fn split(dataset: &Dataset, fractions: &SplitFractions, seed: u64) -> Result<Dataset> {
    let mut out = dataset.clone();
    out.splits = assign(&dataset.labels, fractions, seed)?;
    Ok(out)
}
