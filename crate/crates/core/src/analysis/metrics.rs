use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(labels: &[f64], scores: &[f64], need_negatives: bool) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(Error::Validation(format!("{} labels but {} scores", labels.len(), scores.len())));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || (need_negatives && neg == 0) {
        return Err(Error::UndefinedMetric(format!("need both classes, got {pos} positive and {neg} negative")));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, plus the boundaries of tie groups.
fn tie_groups(scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ends = Vec::new();
    for k in 1..=order.len() {
        if k == order.len() || scores[order[k]] != scores[order[k - 1]] {
            ends.push(k);
        }
    }
    (order, ends)
}

/// Area under the ROC curve as the Mann–Whitney statistic,
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auroc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check(labels, scores, true)?;
    let (order, ends) = tie_groups(scores);
    // Count, for every positive, the negatives strictly below it plus half the tied ones.
    let mut wins = 0.0;
    let mut neg_above = 0usize;
    let mut start = 0;
    for &end in &ends {
        let group = &order[start..end];
        let p = group.iter().filter(|&&i| labels[i] == 1.0).count();
        let n = group.len() - p;
        let below = neg - neg_above - n;
        wins += p as f64 * (below as f64 + 0.5 * n as f64);
        neg_above += n;
        start = end;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision: `Σ (R_k − R_{k−1})·P_k` over descending distinct
/// score thresholds.
pub fn auprc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    let (pos, _) = check(labels, scores, false)?;
    let (order, ends) = tie_groups(scores);
    let (mut tp, mut ap, mut start) = (0usize, 0.0, 0);
    for &end in &ends {
        let new_tp = order[start..end].iter().filter(|&&i| labels[i] == 1.0).count();
        if new_tp > 0 {
            tp += new_tp;
            ap += (new_tp as f64 / pos as f64) * (tp as f64 / end as f64);
        }
        start = end;
    }
    Ok(ap)
}

/// Largest `min(sensitivity, precision)` over thresholds at every distinct
/// score and at ±∞. Precision with no predicted positives counts as 0.
pub fn min_se_pplus(labels: &[f64], scores: &[f64]) -> Result<f64> {
    let (pos, _) = check(labels, scores, true)?;
    let (order, ends) = tie_groups(scores);
    let (mut tp, mut best, mut start) = (0usize, 0.0f64, 0);
    for &end in &ends {
        tp += order[start..end].iter().filter(|&&i| labels[i] == 1.0).count();
        let se = tp as f64 / pos as f64;
        let pp = tp as f64 / end as f64;
        best = best.max(se.min(pp));
        start = end;
    }
    Ok(best)
}

/// Counts for predictions `score >= threshold`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn at(labels: &[f64], scores: &[f64], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&y, &s) in labels.iter().zip(scores) {
            match (s >= threshold, y == 1.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`, 0 when undefined.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }
}

pub fn f1(labels: &[f64], scores: &[f64], threshold: f64) -> Result<f64> {
    check(labels, scores, false)?;
    Ok(Confusion::at(labels, scores, threshold).f1())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auroc: f64,
    pub auprc: f64,
    pub f1: f64,
    pub min_se_pplus: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

impl MetricSet {
    pub fn compute(labels: &[f64], scores: &[f64], threshold: f64) -> Result<Self> {
        let confusion = Confusion::at(labels, scores, threshold);
        Ok(Self {
            auroc: auroc(labels, scores)?,
            auprc: auprc(labels, scores)?,
            f1: confusion.f1(),
            min_se_pplus: min_se_pplus(labels, scores)?,
            threshold,
            confusion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pair counting.
    fn auroc_oracle(y: &[f64], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in (0..y.len()).filter(|&i| y[i] == 1.0) {
            for j in (0..y.len()).filter(|&j| y[j] == 0.0) {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
        num / den
    }

    fn thresholds(s: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = s.to_vec();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    }

    fn counts(y: &[f64], s: &[f64], t: f64) -> (f64, f64) {
        let tp = (0..y.len()).filter(|&i| s[i] >= t && y[i] == 1.0).count() as f64;
        let pp = (0..y.len()).filter(|&i| s[i] >= t).count() as f64;
        (tp, pp)
    }

    /// Step integration of the precision-recall curve over every threshold.
    fn auprc_oracle(y: &[f64], s: &[f64]) -> f64 {
        let pos = y.iter().sum::<f64>();
        let mut prev_r = 0.0;
        let mut ap = 0.0;
        for t in thresholds(s) {
            let (tp, pp) = counts(y, s, t);
            let r = tp / pos;
            ap += (r - prev_r) * (tp / pp);
            prev_r = r;
        }
        ap
    }

    fn min_se_oracle(y: &[f64], s: &[f64]) -> f64 {
        let pos = y.iter().sum::<f64>();
        let mut ts = thresholds(s);
        ts.push(f64::INFINITY);
        ts.push(f64::NEG_INFINITY);
        ts.iter()
            .map(|&t| {
                let (tp, pp) = counts(y, s, t);
                let prec = if pp == 0.0 { 0.0 } else { tp / pp };
                (tp / pos).min(prec)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.0, 0.0, 1.0, 1.0], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.0, 1.0, 0.0, 1.0], &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.8, 0.7, 0.1]).unwrap(), 0.75);
        assert!(matches!(auroc(&[1.0, 1.0], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[1.0, 1.0, 0.0], &[0.9, 0.8, 0.1]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.0, 0.0, 0.0, 1.0], &[0.9, 0.8, 0.7, 0.1]).unwrap(), 0.25);
        assert!(matches!(auprc(&[0.0, 0.0], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn min_se_pplus_examples() {
        assert_eq!(min_se_pplus(&[0.0, 1.0, 1.0], &[0.1, 0.7, 0.9]).unwrap(), 1.0);
        assert_eq!(min_se_pplus(&[0.0, 1.0, 0.0, 0.0], &[0.3; 4]).unwrap(), 0.25);
    }

    #[test]
    fn metric_set_counts() {
        let y = [1.0, 0.0, 1.0, 0.0, 1.0];
        let s = [0.9, 0.6, 0.4, 0.2, 0.7];
        let m = MetricSet::compute(&y, &s, 0.5).unwrap();
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(m.confusion.total(), 5);
        assert!((m.f1 - 4.0 / 6.0).abs() < 1e-15);
        for v in [m.auroc, m.auprc, m.f1, m.min_se_pplus] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(serde_json::to_string(&m).unwrap().contains("\"fn\":1"));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=12).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n),
                // Coarse grid so ties are common.
                prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn metrics_match_brute_force((y, s) in instance()) {
            let pos = y.iter().filter(|&&v| v == 1.0).count();
            prop_assume!(pos > 0 && pos < y.len());
            prop_assert!((auroc(&y, &s).unwrap() - auroc_oracle(&y, &s)).abs() < 1e-12);
            prop_assert!((auprc(&y, &s).unwrap() - auprc_oracle(&y, &s)).abs() < 1e-12);
            prop_assert!((min_se_pplus(&y, &s).unwrap() - min_se_oracle(&y, &s)).abs() < 1e-12);
        }

        #[test]
        fn auroc_is_invariant_to_monotone_maps((y, s) in instance()) {
            let pos = y.iter().filter(|&&v| v == 1.0).count();
            prop_assume!(pos > 0 && pos < y.len());
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&y, &s).unwrap(), auroc(&y, &t).unwrap());
        }
    }
}
