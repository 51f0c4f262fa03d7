use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 16;

/// Plug-in mutual information estimate in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    /// Set when either column is constant; the value is then 0.
    pub degenerate: bool,
}

fn bin_indices(x: &[f64], bins: usize) -> Option<Vec<usize>> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let w = (hi - lo) / bins as f64;
    Some(x.iter().map(|&v| (((v - lo) / w) as usize).min(bins - 1)).collect())
}

/// `Σ p(x,y)·ln(p(x,y) / (p(x)·p(y)))` over a `bins × bins` equal-width
/// histogram spanning each column's range.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<MiEstimate> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation(format!("need two equal columns of length >= 2, got {} and {}", x.len(), y.len())));
    }
    if bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("mutual information needs finite values".into()));
    }
    let (bx, by) = match (bin_indices(x, bins), bin_indices(y, bins)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(MiEstimate { value: 0.0, degenerate: true }),
    };
    let mut joint = vec![0usize; bins * bins];
    let (mut px, mut py) = (vec![0usize; bins], vec![0usize; bins]);
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * bins + j] += 1;
        px[i] += 1;
        py[j] += 1;
    }
    let n = x.len() as f64;
    let mut terms = Vec::new();
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let c = c as f64;
                terms.push(c / n * (c * n / (px[i] as f64 * py[j] as f64)).ln());
            }
        }
    }
    // A fixed summation order makes the estimate exactly symmetric.
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    Ok(MiEstimate { value: mi.max(0.0), degenerate: false })
}

/// Mutual information between every input column and every latent column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub bins: usize,
    pub feature_names: Vec<String>,
    /// `[features][latent dims]`, nats.
    pub values: Vec<Vec<f64>>,
    pub degenerate: Vec<Vec<bool>>,
}

impl MiReport {
    /// `inputs[samples × N]` against `latents[samples × d]`.
    pub fn compute(inputs: &Tensor, latents: &Tensor, feature_names: &[String], bins: usize) -> Result<Self> {
        if inputs.ndim() != 2 || latents.ndim() != 2 || inputs.shape()[0] != latents.shape()[0] {
            return Err(Error::shape("mi_report", inputs.shape(), latents.shape()));
        }
        let (n, f, d) = (inputs.shape()[0], inputs.shape()[1], latents.shape()[1]);
        if feature_names.len() != f {
            return Err(Error::Validation(format!("{} names for {f} features", feature_names.len())));
        }
        let col = |t: &Tensor, j: usize, w: usize| -> Vec<f64> { (0..n).map(|i| t.data()[i * w + j]).collect() };
        let lat: Vec<Vec<f64>> = (0..d).map(|k| col(latents, k, d)).collect();
        let (mut values, mut degenerate) = (Vec::with_capacity(f), Vec::with_capacity(f));
        for j in 0..f {
            let x = col(inputs, j, f);
            let row: Vec<MiEstimate> = lat.iter().map(|z| mutual_information(&x, z, bins)).collect::<Result<_>>()?;
            values.push(row.iter().map(|e| e.value).collect());
            degenerate.push(row.iter().map(|e| e.degenerate).collect());
        }
        Ok(Self { bins, feature_names: feature_names.to_vec(), values, degenerate })
    }

    /// Mean over latent dimensions, one score per feature.
    pub fn feature_scores(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64).collect()
    }

    /// Features whose score exceeds `threshold`.
    pub fn above(&self, threshold: f64) -> Vec<usize> {
        self.feature_scores().iter().enumerate().filter(|(_, &s)| s > threshold).map(|(i, _)| i).collect()
    }

    pub fn to_csv(&self) -> String {
        let d = self.values.first().map_or(0, Vec::len);
        let mut s = String::from("feature");
        for k in 0..d {
            s.push_str(&format!(",dim{k}"));
        }
        s.push('\n');
        for (name, row) in self.feature_names.iter().zip(&self.values) {
            s.push_str(name);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Columns realising a 2×2 joint table with exact counts.
    fn from_counts(counts: [[usize; 2]; 2]) -> (Vec<f64>, Vec<f64>) {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (a, row) in counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    x.push(a as f64);
                    y.push(b as f64);
                }
            }
        }
        (x, y)
    }

    fn direct(p: [[f64; 2]; 2]) -> f64 {
        let px = [p[0][0] + p[0][1], p[1][0] + p[1][1]];
        let py = [p[0][0] + p[1][0], p[0][1] + p[1][1]];
        let mut mi = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                if p[a][b] > 0.0 {
                    mi += p[a][b] * (p[a][b] / (px[a] * py[b])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn independent_coins_have_zero_mi() {
        let (x, y) = from_counts([[25, 25], [25, 25]]);
        assert_eq!(mutual_information(&x, &y, DEFAULT_BINS).unwrap().value, 0.0);
    }

    #[test]
    fn identity_coupling_is_ln2() {
        let (x, y) = from_counts([[50, 0], [0, 50]]);
        let mi = mutual_information(&x, &y, DEFAULT_BINS).unwrap().value;
        assert!((mi - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn correlated_table_matches_direct_formula() {
        let (x, y) = from_counts([[40, 10], [10, 40]]);
        let mi = mutual_information(&x, &y, DEFAULT_BINS).unwrap().value;
        // 0.6·ln(1.6)·... evaluated directly: 0.192745 nats.
        assert!((mi - direct([[0.4, 0.1], [0.1, 0.4]])).abs() < 1e-12);
        assert!((mi - 0.192_745).abs() < 1e-6);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let e = mutual_information(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], 4).unwrap();
        assert_eq!(e, MiEstimate { value: 0.0, degenerate: true });
        assert!(mutual_information(&[1.0], &[1.0], 4).is_err());
        assert!(mutual_information(&[1.0, 2.0], &[1.0], 4).is_err());
    }

    #[test]
    fn report_shapes_and_csv() {
        let x = Tensor::new(vec![4, 2], vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let z = Tensor::new(vec![4, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = MiReport::compute(&x, &z, &["a".into(), "b".into()], 2).unwrap();
        assert!((r.values[0][0] - 2f64.ln()).abs() < 1e-12);
        assert!(r.degenerate[1][0]);
        assert_eq!(r.above(0.5), vec![0]);
        assert!(r.to_csv().starts_with("feature,dim0\na,"));
    }

    proptest! {
        #[test]
        fn exact_count_tables_match_direct_formula(c in prop::array::uniform4(0usize..60)) {
            prop_assume!(c.iter().sum::<usize>() >= 2);
            let counts = [[c[0], c[1]], [c[2], c[3]]];
            let (x, y) = from_counts(counts);
            let n = x.len() as f64;
            let p = [[c[0] as f64 / n, c[1] as f64 / n], [c[2] as f64 / n, c[3] as f64 / n]];
            let e = mutual_information(&x, &y, DEFAULT_BINS).unwrap();
            if !e.degenerate {
                prop_assert!((e.value - direct(p)).abs() < 1e-9);
            }
        }

        #[test]
        fn mi_is_symmetric_and_bounded_by_self_information(
            x in prop::collection::vec(-3.0f64..3.0, 2..200),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let xy = mutual_information(&x, &y, 8).unwrap().value;
            prop_assert_eq!(xy, mutual_information(&y, &x, 8).unwrap().value);
            prop_assert!(xy >= 0.0);
            prop_assert!(mutual_information(&x, &x, 8).unwrap().value >= xy - 1e-12);
        }
    }
}
