use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance two-sample t-test.
///
/// If both groups have zero variance the result is `t = 0, p = 1` for equal
/// means and `t = ±∞, p = 0` otherwise.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Validation(format!("each group needs 2 samples, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-test needs finite values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTest { t: 0.0, df: f64::NAN, p: 1.0 }
        } else {
            TTest { t: (ma - mb).signum() * f64::INFINITY, df: f64::NAN, p: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

/// Class-separation test of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSignificance {
    pub index: usize,
    pub name: String,
    pub t: f64,
    pub p: f64,
    pub selected: bool,
    /// Constant within both classes; `p` is reported as 1.
    pub degenerate: bool,
    pub p_below_001: bool,
    pub p_below_005: bool,
}

/// Welch test of every column of `x[samples × N]` between label 1 and
/// label 0.
pub fn feature_significance(x: &Tensor, labels: &[f64], names: &[String], support: &[usize]) -> Result<Vec<FeatureSignificance>> {
    if x.ndim() != 2 || x.shape()[0] != labels.len() || x.shape()[1] != names.len() {
        return Err(Error::shape("feature_significance", x.shape(), &[labels.len(), names.len()]));
    }
    let (n, f) = (labels.len(), names.len());
    let mut out = Vec::with_capacity(f);
    for j in 0..f {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for i in 0..n {
            let v = x.data()[i * f + j];
            if labels[i] == 1.0 { pos.push(v) } else { neg.push(v) }
        }
        let r = welch_ttest(&pos, &neg)?;
        let degenerate = !r.df.is_finite();
        let (t, p) = if degenerate { (0.0, 1.0) } else { (r.t, r.p) };
        out.push(FeatureSignificance {
            index: j,
            name: names[j].clone(),
            t,
            p,
            selected: support.contains(&j),
            degenerate,
            p_below_001: p < 0.01,
            p_below_005: p < 0.05,
        });
    }
    Ok(out)
}
