use serde::{Deserialize, Serialize};

/// Column order of the enterprise payment schema.
pub const ENTERPRISE_FEATURES: [&str; 12] = [
    "amount_zscore",
    "budget_utilization",
    "vendor_age_days",
    "vendor_tx_count",
    "hour_of_day",
    "weekend_flag",
    "approval_gap_minutes",
    "requester_tx_rate",
    "amount_to_budget_ratio",
    "vendor_country_risk",
    "round_amount_flag",
    "new_vendor_flag",
];

/// Index of each enterprise feature, for readable rule and generator code.
pub mod feature {
    pub const AMOUNT_ZSCORE: usize = 0;
    pub const BUDGET_UTILIZATION: usize = 1;
    pub const VENDOR_AGE_DAYS: usize = 2;
    pub const VENDOR_TX_COUNT: usize = 3;
    pub const HOUR_OF_DAY: usize = 4;
    pub const WEEKEND_FLAG: usize = 5;
    pub const APPROVAL_GAP_MINUTES: usize = 6;
    pub const REQUESTER_TX_RATE: usize = 7;
    pub const AMOUNT_TO_BUDGET_RATIO: usize = 8;
    pub const VENDOR_COUNTRY_RISK: usize = 9;
    pub const ROUND_AMOUNT_FLAG: usize = 10;
    pub const NEW_VENDOR_FLAG: usize = 11;
}

/// Fixed-arity labelled rows. `labels[i]` is true for fraud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>) -> Self {
        Self {
            feature_names,
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn enterprise() -> Self {
        Self::new(ENTERPRISE_FEATURES.iter().map(|s| s.to_string()).collect())
    }

    pub fn push(&mut self, row: Vec<f64>, label: bool) {
        debug_assert_eq!(row.len(), self.n_features());
        self.rows.push(row);
        self.labels.push(label);
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.len() as f64
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
