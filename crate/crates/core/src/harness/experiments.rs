use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::replay::median;
use super::{Detector, HarnessError, PREDICT_REFERENCE_MS, SHAPLEY_REFERENCE_MS};
use crate::costmodel::{reference_profiles, throughput_model};
use crate::datagen::{self, sample_row, FraudCategory, GeneratorConfig, RowKind};
use crate::detector::{evaluate, GbdtLearner};

/// Cross-validation folds used per rate.
const FOLDS: usize = 5;
/// The only latency gate: predict median must stay under this.
pub const PREDICT_GATE_MS: f64 = 10.0;
/// Published end-to-end throughput.
pub const END_TO_END_REFERENCE_PER_MIN: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub fraud_rate: f64,
    pub rows: usize,
    pub positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pr_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub seed: u64,
    pub rows: Vec<SensitivityRow>,
    /// Precision rises strictly with the fraud rate.
    pub precision_strictly_increasing: bool,
    pub min_recall: f64,
}

/// Rows generated at `rate`: at least 10,000, and enough for about a
/// hundred positives so the low rates are not decided by a handful of rows.
pub fn sensitivity_rows(rate: f64) -> usize {
    10_000usize.max((100.0 / rate).ceil() as usize)
}

/// For each rate: regenerate, retrain and cross-validate.
pub fn run_sensitivity(rates: &[f64], seed: u64) -> Result<SensitivityReport, HarnessError> {
    if let Some(&bad) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(HarnessError::InvalidRate(bad));
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let cfg = GeneratorConfig {
            n_rows: sensitivity_rows(rate),
            fraud_rate: rate,
            seed,
            ..GeneratorConfig::default()
        };
        let data = datagen::generate(&cfg)?.dataset;
        let m = evaluate(&GbdtLearner::default(), &data, FOLDS, seed)?;
        rows.push(SensitivityRow {
            fraud_rate: rate,
            rows: data.len(),
            positives: data.positives(),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            pr_auc: m.pr_auc,
        });
    }
    let mut by_rate: Vec<&SensitivityRow> = rows.iter().collect();
    by_rate.sort_by(|a, b| a.fraud_rate.total_cmp(&b.fraud_rate));
    let precision_strictly_increasing = by_rate
        .windows(2)
        .all(|w| w[0].fraud_rate == w[1].fraud_rate || w[0].precision < w[1].precision);
    let min_recall = rows.iter().map(|r| r.recall).fold(f64::INFINITY, f64::min);
    Ok(SensitivityReport {
        seed,
        rows,
        precision_strictly_increasing,
        min_recall,
    })
}

impl SensitivityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Fraud-rate sensitivity\n\n");
        let _ = writeln!(s, "| Fraud rate | Rows | Positives | Precision | Recall | F1 | PR-AUC |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} |",
                r.fraud_rate, r.rows, r.positives, r.precision, r.recall, r.f1, r.pr_auc
            );
        }
        let _ = writeln!(
            s,
            "\nPrecision strictly increasing with rate: {}. Minimum recall: {:.3}.",
            if self.precision_strictly_increasing { "yes" } else { "no" },
            self.min_recall
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub instances: usize,
    pub predict_median_ms: f64,
    pub predict_reference_ms: f64,
    pub shapley_median_ms: f64,
    pub shapley_reference_ms: f64,
    /// Simulated ledger throughput from the cost model's Polygon profile.
    pub end_to_end_per_min: f64,
    pub end_to_end_reference_per_min: f64,
    pub predict_gate_ms: f64,
    pub passes_gate: bool,
}

/// Median single-instance latencies over `n` generated payments, one in
/// twenty fraudulent.
pub fn bench(detector: &Arc<Detector>, n: usize, seed: u64) -> Result<BenchReport, HarnessError> {
    if n < 100 {
        return Err(HarnessError::TooFewInstances(n));
    }
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .map(|k| {
            let kind = if k % 20 == 0 {
                RowKind::Fraud(FraudCategory::ALL[(k / 20 % 4) as usize])
            } else {
                RowKind::Legit
            };
            sample_row(kind, seed, k)
        })
        .collect();
    let mut predict = Vec::with_capacity(n);
    let mut shapley = Vec::with_capacity(n);
    for x in &rows {
        let t = Instant::now();
        std::hint::black_box(detector.score(x)?);
        predict.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        std::hint::black_box(detector.explain(x)?);
        shapley.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let polygon = reference_profiles()
        .into_iter()
        .find(|p| p.name.starts_with("Polygon"))
        .expect("reference profiles include Polygon");
    let predict_median_ms = median(predict);
    Ok(BenchReport {
        instances: n,
        predict_median_ms,
        predict_reference_ms: PREDICT_REFERENCE_MS,
        shapley_median_ms: median(shapley),
        shapley_reference_ms: SHAPLEY_REFERENCE_MS,
        end_to_end_per_min: throughput_model(&polygon).tx_per_min,
        end_to_end_reference_per_min: END_TO_END_REFERENCE_PER_MIN,
        predict_gate_ms: PREDICT_GATE_MS,
        passes_gate: predict_median_ms < PREDICT_GATE_MS,
    })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("# Latency benchmark ({} instances)\n\n", self.instances);
        let _ = writeln!(s, "| Metric | Measured | Reference |\n|---|---|---|");
        let _ = writeln!(
            s,
            "| Predict median (ms) | {:.4} | {} |",
            self.predict_median_ms, self.predict_reference_ms
        );
        let _ = writeln!(
            s,
            "| Shapley median (ms) | {:.3} | {} |",
            self.shapley_median_ms, self.shapley_reference_ms
        );
        let _ = writeln!(
            s,
            "| End-to-end (tx/min) | {:.0} | {:.0} |",
            self.end_to_end_per_min, self.end_to_end_reference_per_min
        );
        let _ = writeln!(
            s,
            "\nPredict gate (< {} ms): {}",
            self.predict_gate_ms,
            if self.passes_gate { "PASS" } else { "FAIL" }
        );
        s
    }
}
