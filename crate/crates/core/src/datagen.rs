//! Seeded synthetic enterprise payments and CSV ingestion.
//!
//! Every row is drawn from its own PCG stream `(seed, row + 1)`; stream 0
//! decides which rows are fraud and of which category. A dataset is
//! therefore a pure function of its config, and rows can be generated in
//! parallel without changing a byte.
//!
//! Fraud counts are exact: `round(n · fraud_rate)` fraud rows, split across
//! categories by largest remainder. A small fixed share of legitimate rows
//! are drawn from fraud signatures (look-alikes), and a small share of fraud
//! rows look entirely legitimate (subtle fraud). The first sets a floor on
//! false positives that dominates at low fraud rates; the second caps recall.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{feature, Dataset, ENTERPRISE_FEATURES};
use crate::rng::{self, exponential, normal, unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FraudCategory {
    VendorFraud,
    Billing,
    ExpenseReimbursement,
    Other,
}

impl FraudCategory {
    pub const ALL: [FraudCategory; 4] = [
        FraudCategory::VendorFraud,
        FraudCategory::Billing,
        FraudCategory::ExpenseReimbursement,
        FraudCategory::Other,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_rows: usize,
    pub fraud_rate: f64,
    /// Share of fraud rows per category, in [`FraudCategory::ALL`] order.
    pub category_mix: [f64; 4],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_rows: 10_000,
            fraud_rate: 0.047,
            category_mix: [0.27, 0.22, 0.14, 0.37],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let sum: f64 = self.category_mix.iter().sum();
        if !(self.fraud_rate > 0.0 && self.fraud_rate < 1.0) {
            return Err(DatagenError::InvalidConfig(format!("fraud_rate {}", self.fraud_rate)));
        }
        if (sum - 1.0).abs() > 1e-9 || self.category_mix.iter().any(|m| *m < 0.0) {
            return Err(DatagenError::InvalidConfig(format!("category_mix sums to {sum}")));
        }
        Ok(())
    }

    pub fn fraud_count(&self) -> usize {
        (self.n_rows as f64 * self.fraud_rate).round() as usize
    }
}

/// Share of legitimate rows drawn from a fraud signature.
pub const LOOK_ALIKE_RATE: f64 = 0.0004;
/// Share of fraud rows drawn from the legitimate distribution.
pub const SUBTLE_FRAUD_RATE: f64 = 0.04;

/// How a row was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "category", rename_all = "snake_case")]
pub enum RowKind {
    Legit,
    LookAlike(FraudCategory),
    Fraud(FraudCategory),
    SubtleFraud(FraudCategory),
}

impl RowKind {
    pub fn is_fraud(self) -> bool {
        matches!(self, RowKind::Fraud(_) | RowKind::SubtleFraud(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub kinds: Vec<RowKind>,
}

impl Generated {
    pub fn category_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for k in &self.kinds {
            if let RowKind::Fraud(cat) | RowKind::SubtleFraud(cat) = k {
                c[*cat as usize] += 1;
            }
        }
        c
    }
}

/// Integer counts proportional to `shares` summing to `total`; leftover
/// units go to the largest remainders, ties to the earlier share.
pub fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn shuffle<T>(items: &mut [T], r: &mut rand_pcg::Pcg64) {
    for i in (1..items.len()).rev() {
        let j = rng::range_inclusive(r, 0, i as u64) as usize;
        items.swap(i, j);
    }
}

/// Row kinds for a config, from stream 0.
pub fn plan(cfg: &GeneratorConfig) -> Vec<RowKind> {
    let n = cfg.n_rows;
    let n_fraud = cfg.fraud_count().min(n);
    let mut r = rng::stream(cfg.seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut r);
    let (fraud_rows, legit_rows) = order.split_at(n_fraud);

    let mut kinds = vec![RowKind::Legit; n];
    let mut cats: Vec<FraudCategory> = largest_remainder(n_fraud, &cfg.category_mix)
        .into_iter()
        .zip(FraudCategory::ALL)
        .flat_map(|(c, cat)| std::iter::repeat_n(cat, c))
        .collect();
    shuffle(&mut cats, &mut r);
    let n_subtle = (n_fraud as f64 * SUBTLE_FRAUD_RATE).round() as usize;
    for (k, (&row, cat)) in fraud_rows.iter().zip(cats).enumerate() {
        kinds[row] = if k < n_subtle {
            RowKind::SubtleFraud(cat)
        } else {
            RowKind::Fraud(cat)
        };
    }
    let n_look = (legit_rows.len() as f64 * LOOK_ALIKE_RATE).round() as usize;
    for (k, &row) in legit_rows.iter().take(n_look).enumerate() {
        kinds[row] = RowKind::LookAlike(FraudCategory::ALL[k % 4]);
    }
    kinds
}

pub fn generate(cfg: &GeneratorConfig) -> Result<Generated, DatagenError> {
    cfg.validate()?;
    let kinds = plan(cfg);
    let rows: Vec<Vec<f64>> = kinds
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| sample_row(kind, cfg.seed, i as u64))
        .collect();
    let mut dataset = Dataset::enterprise();
    dataset.labels = kinds.iter().map(|k| k.is_fraud()).collect();
    dataset.rows = rows;
    Ok(Generated { dataset, kinds })
}

/// Log-amount distribution of legitimate payments (USD).
pub const LOG_AMOUNT_MEAN: f64 = 7.6;
pub const LOG_AMOUNT_SD: f64 = 0.9;

pub fn amount_from_zscore(z: f64) -> f64 {
    (LOG_AMOUNT_MEAN + LOG_AMOUNT_SD * z).exp()
}

pub fn zscore_from_amount(amount_usd: f64) -> f64 {
    (amount_usd.ln() - LOG_AMOUNT_MEAN) / LOG_AMOUNT_SD
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn bernoulli(r: &mut rand_pcg::Pcg64, p: f64) -> f64 {
    f64::from(u8::from(unit(r) < p))
}

fn legit(r: &mut rand_pcg::Pcg64) -> Vec<f64> {
    use feature::*;
    let mut x = vec![0.0; 12];
    x[AMOUNT_ZSCORE] = normal(r);
    x[BUDGET_UTILIZATION] = (0.15 + 0.6 * unit(r) + 0.08 * normal(r)).clamp(0.0, 1.2);
    x[VENDOR_AGE_DAYS] = 30.0 + exponential(r, 900.0);
    x[VENDOR_TX_COUNT] = (3.0 + exponential(r, 40.0)).floor();
    x[HOUR_OF_DAY] = if unit(r) < 0.92 {
        (13.0 + 2.2 * normal(r)).clamp(6.0, 21.0)
    } else {
        24.0 * unit(r)
    };
    x[WEEKEND_FLAG] = bernoulli(r, 0.06);
    x[APPROVAL_GAP_MINUTES] = 20.0 + exponential(r, 600.0);
    x[REQUESTER_TX_RATE] = (4.0 + 1.2 * normal(r)).max(0.0);
    x[AMOUNT_TO_BUDGET_RATIO] =
        (amount_from_zscore(x[AMOUNT_ZSCORE]) / 50_000.0 * (0.5 * normal(r)).exp()).min(5.0);
    x[VENDOR_COUNTRY_RISK] = if unit(r) < 0.95 {
        0.3 * unit(r)
    } else {
        0.5 + 0.5 * unit(r)
    };
    x[ROUND_AMOUNT_FLAG] = bernoulli(r, 0.08);
    x[NEW_VENDOR_FLAG] = f64::from(u8::from(x[VENDOR_AGE_DAYS] < 60.0));
    x
}

/// Applies a category's signature to a legitimate-looking base row.
/// `strength` in (0, 1] scales how far each signature feature moves.
/// Each category has one marker outside the legitimate range (vendor age
/// under 30 days, approval gap under 20 minutes, requester rate over 12/day),
/// so errors come from look-alike and subtle rows rather than tail overlap.
fn apply_signature(x: &mut [f64], cat: FraudCategory, strength: f64, r: &mut rand_pcg::Pcg64) {
    use feature::*;
    match cat {
        FraudCategory::VendorFraud => {
            x[VENDOR_AGE_DAYS] = 1.0 + 27.0 * unit(r).powf(strength);
            x[NEW_VENDOR_FLAG] = f64::from(u8::from(x[VENDOR_AGE_DAYS] < 60.0));
            x[VENDOR_TX_COUNT] = (1.0 + exponential(r, 3.0)).floor();
            x[AMOUNT_ZSCORE] = 1.2 * strength + 0.7 * normal(r);
            x[AMOUNT_TO_BUDGET_RATIO] = 0.08 + strength * (0.12 + 0.3 * unit(r));
            x[VENDOR_COUNTRY_RISK] = (0.35 * strength + 0.5 * unit(r)).min(1.0);
        }
        FraudCategory::Billing => {
            x[ROUND_AMOUNT_FLAG] = bernoulli(r, 0.5 + 0.45 * strength);
            x[VENDOR_TX_COUNT] = (90.0 + 80.0 * strength + exponential(r, 60.0)).floor();
            x[AMOUNT_ZSCORE] = 0.7 * strength + 0.8 * normal(r);
            x[APPROVAL_GAP_MINUTES] = 1.0 + 17.0 * unit(r).powf(strength);
            x[BUDGET_UTILIZATION] = (0.75 + 0.2 * strength * unit(r) + 0.05 * normal(r)).clamp(0.0, 1.2);
        }
        FraudCategory::ExpenseReimbursement => {
            x[HOUR_OF_DAY] = if unit(r) < 0.5 {
                20.5 + 3.4 * unit(r)
            } else {
                5.5 * unit(r)
            };
            x[WEEKEND_FLAG] = bernoulli(r, 0.25 + 0.3 * strength);
            x[AMOUNT_ZSCORE] = -strength + 0.5 * normal(r);
            x[AMOUNT_TO_BUDGET_RATIO] = amount_from_zscore(x[AMOUNT_ZSCORE]) / 50_000.0;
            x[REQUESTER_TX_RATE] = 12.0 + 4.0 * strength + 3.0 * unit(r);
        }
        FraudCategory::Other => {
            // Two of the three named signatures, at reduced strength.
            let skip = rng::range_inclusive(r, 0, 2) as usize;
            for (k, c) in FraudCategory::ALL[..3].iter().enumerate() {
                if k != skip {
                    apply_signature(x, *c, 0.6 * strength, r);
                }
            }
        }
    }
}

/// Draws one row of the given kind from stream `(seed, index + 1)`.
pub fn sample_row(kind: RowKind, seed: u64, index: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, index + 1);
    let mut x = legit(&mut r);
    match kind {
        RowKind::Legit | RowKind::SubtleFraud(_) => {}
        RowKind::Fraud(cat) | RowKind::LookAlike(cat) => {
            let strength = 0.75 + 0.25 * unit(&mut r);
            apply_signature(&mut x, cat, strength, &mut r);
        }
    }
    x.iter().map(|v| quantize(*v)).collect()
}

/// Features of a deliberately suspicious vendor payment of `amount_usd`:
/// new vendor, large share of budget, approved within minutes.
pub fn suspicious_vendor_payment(amount_usd: f64, seed: u64, attempt: u64) -> Vec<f64> {
    use feature::*;
    let mut x = sample_row(RowKind::Fraud(FraudCategory::VendorFraud), seed, attempt);
    x[AMOUNT_ZSCORE] = quantize(zscore_from_amount(amount_usd));
    x[APPROVAL_GAP_MINUTES] = quantize(1.0 + (attempt % 5) as f64);
    x
}

// ---- CSV ----

pub const LABEL_COLUMN: &str = "is_fraud";

/// Enterprise CSV: the twelve feature columns in schema order, then
/// `is_fraud` (0/1). Floats use the shortest round-trip representation.
pub fn write_csv<W: Write>(data: &Dataset, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    w.write_record(&header)?;
    for (row, &y) in data.rows.iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(if y { "1" } else { "0" }.into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// Twelve enterprise features then `is_fraud`.
    Enterprise,
    /// `Time, V1..V28, Amount, Class` (the public card-fraud benchmark).
    Kaggle,
}

impl Schema {
    pub fn columns(self) -> Vec<String> {
        match self {
            Schema::Enterprise => ENTERPRISE_FEATURES
                .iter()
                .map(|s| s.to_string())
                .chain([LABEL_COLUMN.to_string()])
                .collect(),
            Schema::Kaggle => std::iter::once("Time".to_string())
                .chain((1..=28).map(|i| format!("V{i}")))
                .chain(["Amount".to_string(), "Class".to_string()])
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("header does not match schema: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rows: usize,
    pub positive_rate: f64,
}

pub fn ingest_csv<R: Read>(source: R, schema: Schema) -> Result<Ingested, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let expected = schema.columns();
    let found: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != expected {
        return Err(IngestError::SchemaMismatch { expected, found });
    }
    let n_features = expected.len() - 1;
    let mut dataset = Dataset::new(expected[..n_features].to_vec());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("{} fields, expected {}", rec.len(), expected.len()),
            });
        }
        let mut row = Vec::with_capacity(n_features);
        for (field, name) in rec.iter().zip(&expected).take(n_features) {
            let v: f64 = field.trim().parse().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("{name}: {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(IngestError::MalformedRow {
                    line,
                    reason: format!("{name}: {field:?} is not finite"),
                });
            }
            row.push(v);
        }
        let label = match rec[n_features].trim() {
            "0" | "0.0" => false,
            "1" | "1.0" => true,
            other => {
                return Err(IngestError::MalformedRow {
                    line,
                    reason: format!("label {other:?} is not 0 or 1"),
                })
            }
        };
        dataset.push(row, label);
    }
    Ok(Ingested {
        rows: dataset.len(),
        positive_rate: dataset.positive_rate(),
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_has_exact_fraud_count() {
        let g = generate(&GeneratorConfig::default()).unwrap();
        assert_eq!(g.dataset.len(), 10_000);
        assert_eq!(g.dataset.positives(), 470);
        let tiny = GeneratorConfig {
            fraud_rate: 0.001,
            ..GeneratorConfig::default()
        };
        assert_eq!(generate(&tiny).unwrap().dataset.positives(), 10);
    }

    #[test]
    fn largest_remainder_allocation() {
        assert_eq!(largest_remainder(470, &[0.27, 0.22, 0.14, 0.37]), vec![127, 103, 66, 174]);
        assert_eq!(largest_remainder(10, &[0.27, 0.22, 0.14, 0.37]), vec![3, 2, 1, 4]);
        assert_eq!(largest_remainder(0, &[0.5, 0.5]), vec![0, 0]);
    }

    #[test]
    fn category_mix_passes_chi_squared() {
        let g = generate(&GeneratorConfig::default()).unwrap();
        let counts = g.category_counts();
        let total: usize = counts.iter().sum();
        let mix = GeneratorConfig::default().category_mix;
        let chi2: f64 = counts
            .iter()
            .zip(mix)
            .map(|(&c, p)| {
                let e = p * total as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // Critical value for p = 0.01 with 3 degrees of freedom.
        assert!(chi2 < 11.345, "{chi2}");
        for (c, p) in counts.iter().zip(mix) {
            assert!((*c as f64 / total as f64 - p).abs() <= 0.02);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GeneratorConfig {
            n_rows: 2000,
            ..GeneratorConfig::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&generate(&cfg).unwrap().dataset, &mut a).unwrap();
        write_csv(&generate(&cfg).unwrap().dataset, &mut b).unwrap();
        assert_eq!(a, b);
        let other = GeneratorConfig { seed: 43, ..cfg };
        let mut c = Vec::new();
        write_csv(&generate(&other).unwrap().dataset, &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let cfg = GeneratorConfig {
            n_rows: 500,
            ..GeneratorConfig::default()
        };
        let g = generate(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&g.dataset, &mut buf).unwrap();
        let back = ingest_csv(buf.as_slice(), Schema::Enterprise).unwrap();
        assert_eq!(back.dataset, g.dataset);
        assert_eq!(back.rows, 500);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            GeneratorConfig { fraud_rate: 0.0, ..GeneratorConfig::default() },
            GeneratorConfig { fraud_rate: 1.0, ..GeneratorConfig::default() },
            GeneratorConfig { category_mix: [0.3, 0.3, 0.3, 0.3], ..GeneratorConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(DatagenError::InvalidConfig(_))));
        }
    }

    #[test]
    fn ingest_reports_bad_input() {
        let header = Schema::Enterprise.columns().join(",");
        let empty = ingest_csv(format!("{header}\n").as_bytes(), Schema::Enterprise).unwrap();
        assert_eq!(empty.rows, 0);

        let good_row = vec!["1"; 12].join(",") + ",0";
        let mut bad_row: Vec<&str> = vec!["1"; 12];
        bad_row[0] = "abc";
        let text = format!("{header}\n{good_row}\n{},1\n", bad_row.join(","));
        match ingest_csv(text.as_bytes(), Schema::Enterprise) {
            Err(IngestError::MalformedRow { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("amount_zscore"));
            }
            other => panic!("{other:?}"),
        }

        let wrong = "a,b,c\n1,2,3\n";
        assert!(matches!(
            ingest_csv(wrong.as_bytes(), Schema::Enterprise),
            Err(IngestError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn kaggle_schema_is_accepted() {
        let cols = Schema::Kaggle.columns();
        assert_eq!(cols.len(), 31);
        let header = cols.iter().map(|c| format!("\"{c}\"")).collect::<Vec<_>>().join(",");
        let row = |label: &str| {
            std::iter::repeat_n("0.5".to_string(), 30)
                .chain([format!("\"{label}\"")])
                .collect::<Vec<_>>()
                .join(",")
        };
        let text = format!("{header}\n{}\n{}\n", row("0"), row("1"));
        let got = ingest_csv(text.as_bytes(), Schema::Kaggle).unwrap();
        assert_eq!(got.rows, 2);
        assert_eq!(got.positive_rate, 0.5);
        assert_eq!(got.dataset.n_features(), 30);
    }

    #[test]
    fn amount_zscore_roundtrip() {
        for amount in [50.0, 2000.0, 10_000.0] {
            assert!((amount_from_zscore(zscore_from_amount(amount)) - amount).abs() < 1e-6);
        }
    }
}
