//! Fraud scoring: a gradient-boosted tree ensemble, a threshold-rule
//! baseline of the kind ERP systems ship with, and stratified
//! cross-validation that reports precision, recall, F1 and PR-AUC.

mod dataset;
mod gbdt;
pub mod metrics;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{feature, Dataset, ENTERPRISE_FEATURES};
pub use gbdt::{sigmoid, train, train_rows, Node, TrainParams, Tree, TreeEnsemble};
use metrics::{best_f1_threshold, pr_auc, Confusion};

use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("dataset needs both classes")]
    DegenerateDataset,
    #[error("expected {expected} features, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Anything that maps a feature row to a fraud score.
pub trait Scorer: Send + Sync {
    fn score(&self, x: &[f64]) -> f64;
}

impl Scorer for TreeEnsemble {
    fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin_unchecked(x))
    }
}

/// Produces a scorer from training rows.
pub trait Learner: Sync {
    type Model: Scorer;

    fn fit(&self, data: &Dataset, rows: &[usize], seed: u64) -> Result<Self::Model, DetectorError>;

    /// A threshold that is applied as-is instead of being tuned for F1.
    fn fixed_threshold(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Default)]
pub struct GbdtLearner {
    pub params: TrainParams,
}

impl Learner for GbdtLearner {
    type Model = TreeEnsemble;

    fn fit(&self, data: &Dataset, rows: &[usize], seed: u64) -> Result<TreeEnsemble, DetectorError> {
        train_rows(data, rows, &self.params, seed)
    }
}

/// Threshold rules over the enterprise schema. A row is flagged when any
/// configured rule trips.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleThresholds {
    /// Flag every row.
    pub flag_all: bool,
    /// Flag when `amount_zscore` exceeds this.
    pub amount_zscore_limit: Option<f64>,
    /// Flag a new vendor whose `amount_to_budget_ratio` exceeds this.
    pub new_vendor_ratio_limit: Option<f64>,
    /// Flag submissions with `hour_of_day` outside `[start, end)`.
    pub business_hours: Option<(f64, f64)>,
}

impl RuleThresholds {
    pub fn flag_all() -> Self {
        Self {
            flag_all: true,
            ..Self::default()
        }
    }

    /// The usual ERP configuration: large amounts, big first payments to new
    /// vendors, off-hours submissions.
    pub fn erp_default() -> Self {
        Self {
            flag_all: false,
            amount_zscore_limit: Some(3.0),
            new_vendor_ratio_limit: Some(0.25),
            business_hours: Some((7.0, 20.0)),
        }
    }
}

pub fn rule_baseline(x: &[f64], t: &RuleThresholds) -> bool {
    use feature::*;
    t.flag_all
        || t.amount_zscore_limit.is_some_and(|l| x[AMOUNT_ZSCORE] > l)
        || t
            .new_vendor_ratio_limit
            .is_some_and(|l| x[NEW_VENDOR_FLAG] >= 0.5 && x[AMOUNT_TO_BUDGET_RATIO] > l)
        || t
            .business_hours
            .is_some_and(|(start, end)| x[HOUR_OF_DAY] < start || x[HOUR_OF_DAY] >= end)
}

impl Scorer for RuleThresholds {
    fn score(&self, x: &[f64]) -> f64 {
        f64::from(u8::from(rule_baseline(x, self)))
    }
}

impl Learner for RuleThresholds {
    type Model = RuleThresholds;

    fn fit(&self, _: &Dataset, _: &[usize], _: u64) -> Result<RuleThresholds, DetectorError> {
        Ok(self.clone())
    }

    fn fixed_threshold(&self) -> Option<f64> {
        Some(0.5)
    }
}

/// Stratified k-fold assignment: positives and negatives are shuffled
/// separately and dealt round-robin, so each fold's class counts differ
/// from any other's by at most one.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    let mut r = rng::stream(seed, 0xf01d);
    let mut offset = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        for i in (1..idx.len()).rev() {
            let j = rng::range_inclusive(&mut r, 0, i as u64) as usize;
            idx.swap(i, j);
        }
        for (n, i) in idx.into_iter().enumerate() {
            folds[(offset + n) % k].push(i);
        }
        // Continue dealing where the positives stopped so fold sizes stay
        // within one of each other.
        offset = (offset + labels.iter().filter(|&&l| l == class).count()) % k;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub rows: usize,
    pub positives: usize,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pr_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pooled over all held-out folds.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Over the pooled out-of-fold scores.
    pub pr_auc: f64,
    /// F1-maximizing threshold over the pooled out-of-fold scores.
    pub threshold: f64,
    pub folds: Vec<FoldMetrics>,
}

/// Out-of-fold scores from `k`-fold stratified cross-validation.
pub fn cross_val_scores<L: Learner>(
    learner: &L,
    data: &Dataset,
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<Vec<f64>, DetectorError> {
    let per_fold: Vec<Result<Vec<(usize, f64)>, DetectorError>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, held)| {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let model = learner.fit(data, &train_idx, seed.wrapping_add(k as u64))?;
            Ok(held.iter().map(|&i| (i, model.score(&data.rows[i]))).collect())
        })
        .collect();
    let mut scores = vec![0.0; data.len()];
    for fold in per_fold {
        for (i, s) in fold? {
            scores[i] = s;
        }
    }
    Ok(scores)
}

/// Stratified k-fold evaluation. Fold `k` is scored at the threshold that
/// maximizes F1 on the out-of-fold scores of the other folds, so no row
/// influences the threshold applied to it.
pub fn evaluate<L: Learner>(
    learner: &L,
    data: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<MetricsReport, DetectorError> {
    if folds < 2 {
        return Err(DetectorError::InvalidParams(format!("{folds} folds")));
    }
    let pos = data.positives();
    if pos == 0 || pos == data.len() {
        return Err(DetectorError::DegenerateDataset);
    }
    let assignment = stratified_folds(&data.labels, folds, seed);
    let scores = cross_val_scores(learner, data, &assignment, seed)?;

    let mut pooled = Confusion::default();
    let mut fold_metrics = Vec::with_capacity(folds);
    for (k, held) in assignment.iter().enumerate() {
        let threshold = match learner.fixed_threshold() {
            Some(t) => t,
            None => {
                let others: Vec<usize> = assignment
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .flat_map(|(_, f)| f.iter().copied())
                    .collect();
                let s: Vec<f64> = others.iter().map(|&i| scores[i]).collect();
                let l: Vec<bool> = others.iter().map(|&i| data.labels[i]).collect();
                best_f1_threshold(&s, &l).0
            }
        };
        let s: Vec<f64> = held.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = held.iter().map(|&i| data.labels[i]).collect();
        let c = Confusion::at(&s, &l, threshold);
        pooled.add(&c);
        fold_metrics.push(FoldMetrics {
            fold: k,
            rows: held.len(),
            positives: l.iter().filter(|x| **x).count(),
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            pr_auc: pr_auc(&s, &l),
        });
    }
    let threshold = learner
        .fixed_threshold()
        .unwrap_or_else(|| best_f1_threshold(&scores, &data.labels).0);
    Ok(MetricsReport {
        precision: pooled.precision(),
        recall: pooled.recall(),
        f1: pooled.f1(),
        pr_auc: pr_auc(&scores, &data.labels),
        threshold,
        folds: fold_metrics,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn noisy(n: usize, rate: f64, seed: u64) -> Dataset {
        let mut ds = Dataset::enterprise();
        let mut r = rng::stream(seed, 9);
        for _ in 0..n {
            let y = rng::unit(&mut r) < rate;
            let mut row: Vec<f64> = (0..12).map(|_| rng::normal(&mut r)).collect();
            if y {
                row[0] += 2.5;
                row[8] += 1.5;
            }
            row[feature::HOUR_OF_DAY] = 12.0;
            ds.push(row, y);
        }
        ds
    }

    #[test]
    fn folds_are_stratified_and_partition_rows() {
        let ds = noisy(1003, 0.05, 1);
        let folds = stratified_folds(&ds.labels, 5, 3);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1003).collect::<Vec<_>>());
        let pos: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| ds.labels[i]).count()).collect();
        let neg: Vec<usize> = folds.iter().map(|f| f.len()).zip(&pos).map(|(a, b)| a - b).collect();
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
        assert!(neg.iter().max().unwrap() - neg.iter().min().unwrap() <= 1);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(folds, stratified_folds(&ds.labels, 5, 3));
    }

    #[test]
    fn flag_all_baseline_matches_the_analytic_identity() {
        let ds = noisy(2000, 0.047, 2);
        let p = ds.positive_rate();
        let m = evaluate(&RuleThresholds::flag_all(), &ds, 5, 0).unwrap();
        assert!((m.precision - p).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 * p / (1.0 + p)).abs() < 1e-12);
    }

    #[test]
    fn rules_that_never_trip_recall_nothing() {
        let ds = noisy(500, 0.1, 3);
        let m = evaluate(&RuleThresholds::default(), &ds, 5, 0).unwrap();
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn amount_rule_at_the_99th_percentile_misses_some_fraud() {
        let ds = noisy(3000, 0.05, 4);
        let mut z: Vec<f64> = ds.rows.iter().map(|r| r[feature::AMOUNT_ZSCORE]).collect();
        z.sort_by(f64::total_cmp);
        let rules = RuleThresholds {
            amount_zscore_limit: Some(z[z.len() * 99 / 100]),
            ..RuleThresholds::default()
        };
        let m = evaluate(&rules, &ds, 5, 0).unwrap();
        assert!(m.recall > 0.0 && m.recall < 1.0);
    }

    #[test]
    fn gbdt_learns_a_planted_signal() {
        let ds = noisy(3000, 0.05, 5);
        let learner = GbdtLearner {
            params: TrainParams {
                num_trees: 40,
                ..TrainParams::default()
            },
        };
        let m = evaluate(&learner, &ds, 5, 7).unwrap();
        assert!(m.pr_auc > 0.5, "{m:?}");
        assert_eq!(m, evaluate(&learner, &ds, 5, 7).unwrap());
        assert_eq!(m.folds.len(), 5);
    }

    #[test]
    fn heavier_positive_weight_never_lowers_recall_at_half() {
        let ds = noisy(3000, 0.05, 6);
        let mut last = -1.0;
        for w in [1.0, 5.0, 19.0] {
            let params = TrainParams {
                num_trees: 30,
                positive_class_weight: Some(w),
                ..TrainParams::default()
            };
            let m = train(&ds, &params, 0).unwrap();
            let scores: Vec<f64> = ds.rows.iter().map(|r| m.score(r)).collect();
            let recall = Confusion::at(&scores, &ds.labels, 0.5).recall();
            assert!(recall >= last, "w={w}: {recall} < {last}");
            last = recall;
        }
    }

    #[test]
    fn single_class_data_cannot_be_evaluated() {
        let mut ds = noisy(100, 0.0, 1);
        ds.labels.iter_mut().for_each(|l| *l = false);
        assert_eq!(
            evaluate(&RuleThresholds::flag_all(), &ds, 5, 0).unwrap_err(),
            DetectorError::DegenerateDataset
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fold_class_counts_differ_by_at_most_one(
            labels in proptest::collection::vec(any::<bool>(), 10..400),
            k in 2usize..8,
            seed in any::<u64>(),
        ) {
            let folds = stratified_folds(&labels, k, seed);
            let pos: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i]).count()).collect();
            let neg: Vec<usize> = folds.iter().zip(&pos).map(|(f, p)| f.len() - p).collect();
            prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
            prop_assert!(neg.iter().max().unwrap() - neg.iter().min().unwrap() <= 1);
        }
    }
}
