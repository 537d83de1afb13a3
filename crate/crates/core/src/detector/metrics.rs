//! Threshold metrics and the area under the precision-recall curve.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// Counts with `score >= threshold` predicted positive.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Indices sorted by descending score, ties by index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `(recall, precision)` at every distinct score threshold, highest first.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let total_pos = labels.iter().filter(|l| **l).count();
    let idx = ranked(scores);
    let mut out = Vec::new();
    let (mut tp, mut k) = (0usize, 0usize);
    while k < idx.len() {
        let s = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == s {
            tp += usize::from(labels[idx[k]]);
            k += 1;
        }
        out.push((ratio(tp, total_pos), tp as f64 / k as f64));
    }
    out
}

/// Area under the step-interpolated precision-recall curve: each recall
/// increment is credited with the precision at the threshold that achieved
/// it. Tied scores form one step. 0 when there are no positives.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in pr_curve(scores, labels) {
        area += (r - prev_recall) * p;
        prev_recall = r;
    }
    area
}

/// Threshold maximizing F1 (predict positive when `score >= threshold`).
/// Returns the midpoint between the chosen score and the next lower one;
/// ties in F1 keep the higher threshold.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let total_pos = labels.iter().filter(|l| **l).count();
    let idx = ranked(scores);
    let (mut best_f1, mut best_t) = (-1.0, f64::INFINITY);
    let (mut tp, mut k) = (0usize, 0usize);
    while k < idx.len() {
        let s = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == s {
            tp += usize::from(labels[idx[k]]);
            k += 1;
        }
        let f = f1(tp as f64 / k as f64, ratio(tp, total_pos));
        if f > best_f1 {
            best_f1 = f;
            best_t = match idx.get(k) {
                Some(&next) => 0.5 * (s + scores[next]),
                None => s,
            };
        }
    }
    (best_t, best_f1.max(0.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::rng;

    /// Mean over positives of the precision among rows scoring at least as
    /// high as that positive.
    fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
        let pos: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
        if pos.is_empty() {
            return 0.0;
        }
        pos.iter()
            .map(|&i| {
                let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
                let hits = above.iter().filter(|&&j| labels[j]).count();
                hits as f64 / above.len() as f64
            })
            .sum::<f64>()
            / pos.len() as f64
    }

    #[test]
    fn perfect_scorer_scores_one() {
        let labels = [true, false, true, false, false];
        let scores = [0.9, 0.1, 0.8, 0.2, 0.3];
        assert_eq!(pr_auc(&scores, &labels), 1.0);
        let (t, f) = best_f1_threshold(&scores, &labels);
        assert_eq!(f, 1.0);
        let c = Confusion::at(&scores, &labels, t);
        assert_eq!((c.precision(), c.recall(), c.f1()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn flag_all_has_precision_equal_to_rate() {
        let labels: Vec<bool> = (0..1000).map(|i| i % 1000 < 47).collect();
        let c = Confusion::at(&vec![1.0; 1000], &labels, 0.5);
        assert!((c.precision() - 0.047).abs() < 1e-12);
        assert_eq!(c.recall(), 1.0);
        assert!((c.f1() - 2.0 * 0.047 / 1.047).abs() < 1e-12);
    }

    #[test]
    fn random_scorer_pr_auc_is_near_the_positive_rate() {
        let p = 0.1;
        let mut total = 0.0;
        for seed in 0..50 {
            let mut r = rng::stream(seed, 1);
            let labels: Vec<bool> = (0..2000).map(|_| rng::unit(&mut r) < p).collect();
            let scores: Vec<f64> = (0..2000).map(|_| rng::unit(&mut r)).collect();
            total += pr_auc(&scores, &labels);
        }
        assert!((total / 50.0 - p).abs() < 0.02, "{}", total / 50.0);
    }

    #[test]
    fn inverted_scorer_recalls_no_better_than_random() {
        let mut r = rng::stream(5, 1);
        let labels: Vec<bool> = (0..2000).map(|_| rng::unit(&mut r) < 0.05).collect();
        let good: Vec<f64> = labels
            .iter()
            .map(|&l| f64::from(u8::from(l)) + 0.8 * rng::unit(&mut r))
            .collect();
        let inverted: Vec<f64> = good.iter().map(|s| -s).collect();
        let random: Vec<f64> = (0..2000).map(|_| rng::unit(&mut r)).collect();
        // Compare at the same alert budget: the number of rows the good
        // scorer flags at its F1-optimal threshold.
        let (t, _) = best_f1_threshold(&good, &labels);
        let budget = good.iter().filter(|&&s| s >= t).count();
        let recall_at_budget = |s: &[f64]| {
            let idx = ranked(s);
            let hits = idx[..budget].iter().filter(|&&i| labels[i]).count();
            hits as f64 / labels.iter().filter(|l| **l).count() as f64
        };
        assert!(recall_at_budget(&inverted) <= recall_at_budget(&random));
        assert!(recall_at_budget(&good) > recall_at_budget(&random));
        assert!(pr_auc(&inverted, &labels) < pr_auc(&random, &labels) + 0.02);
    }

    #[test]
    fn f1_of_zero_precision_and_recall_is_zero() {
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!(Confusion::at(&[0.0, 0.0], &[true, false], 0.5).f1(), 0.0);
    }

    proptest! {
        #[test]
        fn pr_auc_equals_exhaustive_average_precision(
            rows in proptest::collection::vec((0u8..20, any::<bool>()), 1..1000),
        ) {
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = rows.iter().map(|r| f64::from(r.0) / 20.0).collect();
            let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
            prop_assert!((pr_auc(&scores, &labels) - average_precision(&scores, &labels)).abs() < 1e-9);
        }

        #[test]
        fn f1_is_the_harmonic_mean(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let c = Confusion { tp, fp, fn_, tn: 0 };
            let (p, r) = (c.precision(), c.recall());
            let expected = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            prop_assert!((c.f1() - expected).abs() < 1e-12);
        }
    }
}
