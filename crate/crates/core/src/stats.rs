//! Order statistics and decision-quality metrics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Midpoint average for even lengths. `None` on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    let v = sorted(values);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

/// Mean after dropping `floor(frac * n)` values from each end.
pub fn trimmed_mean(values: &[f64], frac: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..0.5).contains(&frac) {
        return None;
    }
    let v = sorted(values);
    let k = libm::floor(frac * v.len() as f64 + 1e-9) as usize;
    let kept = &v[k..v.len() - k];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Median over the per-pair ratios `a / b`. Pairs with a non-positive
/// denominator are skipped.
pub fn median_of_ratios(pairs: &[(f64, f64)]) -> Option<f64> {
    let ratios: Vec<f64> = pairs
        .iter()
        .filter(|(_, b)| *b > 0.0)
        .map(|(a, b)| a / b)
        .collect();
    median(&ratios)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Tallies `(should_hit, did_hit)` observations.
    pub fn tally(observations: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut m = Self::default();
        for (actual, predicted) in observations {
            match (actual, predicted) {
                (true, true) => m.tp += 1,
                (false, true) => m.fp += 1,
                (true, false) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn metrics(&self) -> DecisionMetrics {
        DecisionMetrics {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            specificity: self.specificity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median_of_ratios(&[(1.0, 1.0), (4.0, 2.0), (9.0, 3.0)]), Some(2.0));
    }

    #[test]
    fn trimmed_mean_drops_one_each_end_of_twenty() {
        let mut v: Vec<f64> = (1..=18).map(f64::from).collect();
        v.push(-1000.0);
        v.push(1000.0);
        assert_eq!(trimmed_mean(&v, 0.05), Some(9.5));
        // 19 values: floor(0.95) = 0, nothing dropped
        let w: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(trimmed_mean(&w, 0.05), Some(10.0));
        assert_eq!(trimmed_mean(&[], 0.05), None);
    }

    #[test]
    fn median_of_ratios_is_not_ratio_of_medians() {
        let pairs = [(2.0, 1.0), (3.0, 1.0), (100.0, 50.0), (1.0, 100.0)];
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mor = median_of_ratios(&pairs).unwrap();
        let rom = median(&a).unwrap() / median(&b).unwrap();
        // ratios {2,3,2,0.01} -> 2; medians 2.5 / 25.5
        assert_eq!(mor, 2.0);
        assert!((rom - 2.5 / 25.5).abs() < 1e-12);
    }

    #[test]
    fn reported_counts() {
        let m = ConfusionMatrix::new(27, 9, 21, 23);
        assert_eq!(m.total(), 80);
        assert!((m.precision() - 0.75).abs() < 1e-12);
        assert!((m.recall() - 0.5625).abs() < 1e-12);
        assert!((m.f1() - 0.6429).abs() < 1e-4);
        assert!((m.specificity() - 0.7188).abs() < 1e-4);
    }

    #[test]
    fn degenerate_counts() {
        let perfect = ConfusionMatrix::new(5, 0, 0, 5);
        assert_eq!((perfect.precision(), perfect.recall()), (1.0, 1.0));
        let no_hits = ConfusionMatrix::new(0, 0, 4, 6);
        assert_eq!(no_hits.precision(), 0.0);
        assert_eq!(no_hits.f1(), 0.0);
        assert_eq!(no_hits.specificity(), 1.0);
        assert_eq!(ConfusionMatrix::default().metrics().specificity, 0.0);
    }

    #[test]
    fn tally_matches_counts() {
        let m = ConfusionMatrix::tally(vec![(true, true), (true, false), (false, true), (false, false), (true, true)]);
        assert_eq!(m, ConfusionMatrix::new(2, 1, 1, 1));
    }

    #[test]
    fn serialises_fn_field() {
        let s = serde_json::to_string(&ConfusionMatrix::new(1, 2, 3, 4)).unwrap();
        assert_eq!(s, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }

    proptest! {
        #[test]
        fn confusion_identities(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let m = ConfusionMatrix::new(tp, fp, fn_, tn);
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let s = if tn + fp == 0 { 0.0 } else { tn as f64 / (tn + fp) as f64 };
            prop_assert_eq!(m.precision(), p);
            prop_assert_eq!(m.recall(), r);
            prop_assert_eq!(m.specificity(), s);
            let f1 = m.f1();
            prop_assert!((0.0..=1.0).contains(&f1));
            if p > 0.0 && r > 0.0 {
                // harmonic mean: 1/f1 = (1/p + 1/r) / 2
                prop_assert!((1.0 / f1 - (1.0 / p + 1.0 / r) / 2.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(f1, 0.0);
            }
        }

        #[test]
        fn median_brackets(values in proptest::collection::vec(-1e6f64..1e6, 1..60)) {
            let m = median(&values).unwrap();
            let below = values.iter().filter(|&&v| v <= m).count();
            let above = values.iter().filter(|&&v| v >= m).count();
            prop_assert!(2 * below >= values.len());
            prop_assert!(2 * above >= values.len());
        }
    }
}
