//! Gas to USD.
//!
//! Per-transaction cost is `gas × gwei × 1e-9 × token_usd`. Displayed
//! figures are rounded in integer micro-dollars: the raw cost is snapped to
//! the nearest 1e-6, then rounded half-up to three decimals below one cent
//! and to two decimals otherwise. Monthly totals multiply the displayed
//! per-transaction cost, which is how the published table's monthly column
//! was evidently produced ($0.002 → $2 rather than $1.92).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gas metered by one full payment workflow.
pub const WORKFLOW_GAS: u64 = 751_000;
/// Lowest gas price Polygon PoS accepts.
pub const POLYGON_FLOOR_GWEI: f64 = 25.0;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid profile {name}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("snapshot at {timestamp}: {gwei} gwei is below the {floor} gwei floor")]
    BelowFloor { timestamp: String, gwei: f64, floor: f64 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which cost column a profile's price belongs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Typical,
    /// A congestion spike observation.
    Peak,
}

/// `profiles.json` is an array of these. `fixed_cost_usd`, when present,
/// replaces the gas formula: a rollup quoted as a flat cost per 751K-gas
/// workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub gas_price_gwei: f64,
    pub token_usd: f64,
    pub block_interval_s: f64,
    pub txs_per_block: u32,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub fixed_cost_usd: Option<f64>,
}

impl NetworkProfile {
    pub fn gas_priced(name: &str, gwei: f64, token_usd: f64, block_interval_s: f64, txs_per_block: u32) -> Self {
        NetworkProfile {
            name: name.to_string(),
            gas_price_gwei: gwei,
            token_usd,
            block_interval_s,
            txs_per_block,
            regime: Regime::Typical,
            fixed_cost_usd: None,
        }
    }

    /// Prices may be zero (a private chain has no fee market); timing must
    /// be positive.
    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |reason: &str| CostError::InvalidProfile {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.gas_price_gwei) || !finite_nonneg(self.token_usd) {
            return Err(bad("prices must be finite and non-negative"));
        }
        if self.fixed_cost_usd.is_some_and(|c| !finite_nonneg(c)) {
            return Err(bad("fixed cost must be finite and non-negative"));
        }
        if !(self.block_interval_s.is_finite() && self.block_interval_s > 0.0) || self.txs_per_block == 0 {
            return Err(bad("block interval and txs per block must be positive"));
        }
        Ok(())
    }

    /// USD for `gas`. A flat quote is per full workflow and scales with gas.
    pub fn cost_of_gas(&self, gas: u64) -> f64 {
        match self.fixed_cost_usd {
            Some(flat) => flat * gas as f64 / WORKFLOW_GAS as f64,
            None => usd_cost(gas, self.gas_price_gwei, self.token_usd),
        }
    }
}

/// `gas × gwei × 1e-9 × token_usd`.
pub fn usd_cost(gas: u64, gas_price_gwei: f64, token_usd: f64) -> f64 {
    gas as f64 * gas_price_gwei * 1e-9 * token_usd
}

pub fn monthly_cost(per_tx_usd: f64, volume: u64) -> f64 {
    per_tx_usd * volume as f64
}

fn to_micros(usd: f64) -> i64 {
    (usd * 1e6).round() as i64
}

/// Rounds as the cost table displays: three decimals below $0.01, two
/// otherwise, half-up on the 1e-6-snapped value.
pub fn display_round(usd: f64) -> f64 {
    let micros = to_micros(usd);
    let (step, _) = display_step(micros);
    let rounded = (micros.abs() + step / 2) / step * step * micros.signum();
    rounded as f64 / 1e6
}

/// Micro-dollars per displayed unit, and the number of decimals.
fn display_step(micros: i64) -> (i64, usize) {
    if micros.abs() < 10_000 {
        (1_000, 3)
    } else {
        (10_000, 2)
    }
}

/// `$0.002`, `$0.10`, `$56.33`; zero is `$0`.
pub fn format_usd(usd: f64) -> String {
    let micros = to_micros(usd);
    if micros == 0 {
        return "$0".into();
    }
    let shown = display_round(usd);
    let (_, decimals) = display_step(to_micros(shown));
    format!("${:.*}", decimals, shown)
}

/// Whole dollars with thousands separators when integral (`$56,330`),
/// otherwise two decimals.
pub fn format_monthly(usd: f64) -> String {
    let cents = (usd * 100.0).round() as i64;
    let dollars = cents / 100;
    let mut digits = dollars.abs().to_string();
    let mut grouped = String::new();
    while digits.len() > 3 {
        let tail = digits.split_off(digits.len() - 3);
        grouped = format!(",{tail}{grouped}");
    }
    grouped = format!("{}{digits}{grouped}", if cents < 0 { "-" } else { "" });
    if cents % 100 == 0 {
        format!("${grouped}")
    } else {
        format!("${grouped}.{:02}", (cents % 100).abs())
    }
}

/// The networks of the published comparison. Ethereum's price pair is
/// back-solved from its $56.33 row; the rollups are quoted flat.
pub fn reference_profiles() -> Vec<NetworkProfile> {
    let flat = |name: &str, usd: f64, interval: f64| NetworkProfile {
        fixed_cost_usd: Some(usd),
        ..NetworkProfile::gas_priced(name, 0.0, 0.0, interval, 10)
    };
    vec![
        NetworkProfile::gas_priced("Ethereum L1", 25.0, 3000.0, 12.0, 150),
        flat("Arbitrum", 0.56, 0.25),
        flat("Optimism", 0.48, 2.0),
        NetworkProfile::gas_priced("Polygon (30 gwei)", 30.0, 0.085, 3.0, 10),
        NetworkProfile::gas_priced("Polygon (130 gwei)", 130.0, 0.085, 3.0, 10),
        NetworkProfile {
            regime: Regime::Peak,
            ..NetworkProfile::gas_priced("Polygon (spike)", 1519.0, 0.085, 3.0, 10)
        },
        NetworkProfile::gas_priced("Private Chain", 0.0, 0.0, 3.0, 10),
    ]
}

pub fn load_profiles(json: &str) -> Result<Vec<NetworkProfile>, CostError> {
    let profiles: Vec<NetworkProfile> = serde_json::from_str(json)?;
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub network: String,
    pub gas: u64,
    /// Displayed (rounded) per-transaction costs.
    pub typical_usd: Option<f64>,
    pub peak_usd: Option<f64>,
    /// Raw per-transaction cost before display rounding.
    pub exact_usd: f64,
    /// 1,000 transactions at the displayed per-transaction cost.
    pub monthly_1000_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub gas: u64,
    pub rows: Vec<CostRow>,
}

pub fn cost_table(profiles: &[NetworkProfile], gas: u64) -> CostTable {
    let rows = profiles
        .iter()
        .map(|p| {
            let exact = p.cost_of_gas(gas);
            let shown = display_round(exact);
            let (typical_usd, peak_usd) = match p.regime {
                Regime::Typical => (Some(shown), None),
                Regime::Peak => (None, Some(shown)),
            };
            CostRow {
                network: p.name.clone(),
                gas,
                typical_usd,
                peak_usd,
                exact_usd: exact,
                monthly_1000_usd: monthly_cost(shown, 1000),
            }
        })
        .collect();
    CostTable { gas, rows }
}

impl CostTable {
    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("---".to_string(), format_usd);
        let mut s = String::from("| Network | Gas | Typical | Peak | Monthly (1K tx) |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {}K | {} | {} | {} |",
                r.network,
                r.gas / 1000,
                cell(r.typical_usd),
                cell(r.peak_usd),
                format_monthly(r.monthly_1000_usd)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn row(&self, network: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.network == network)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub tx_per_min: f64,
    pub daily_capacity: f64,
}

/// `60 / interval × txs_per_block` per minute, × 1440 per day.
pub fn throughput_model(profile: &NetworkProfile) -> Throughput {
    let tx_per_min = 60.0 / profile.block_interval_s * f64::from(profile.txs_per_block);
    Throughput {
        tx_per_min,
        daily_capacity: tx_per_min * 1440.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasSnapshot {
    pub timestamp: String,
    pub gas_price_gwei: f64,
    pub source: String,
}

/// Bundled sample spanning the observed Polygon range (floor to the
/// January 2026 peak). Monthly points, not a measured series.
pub const POLYGON_SNAPSHOT_JSON: &str = include_str!("../data/polygon_gas_snapshot.json");

/// Parses snapshots and enforces the Polygon protocol floor.
pub fn load_polygon_snapshots(json: &str) -> Result<Vec<GasSnapshot>, CostError> {
    let snaps: Vec<GasSnapshot> = serde_json::from_str(json)?;
    for s in &snaps {
        if s.gas_price_gwei.partial_cmp(&POLYGON_FLOOR_GWEI).is_none_or(|o| o.is_lt()) {
            return Err(CostError::BelowFloor {
                timestamp: s.timestamp.clone(),
                gwei: s.gas_price_gwei,
                floor: POLYGON_FLOOR_GWEI,
            });
        }
    }
    Ok(snaps)
}

/// Lowest and highest gas price in the snapshots.
pub fn snapshot_range(snaps: &[GasSnapshot]) -> Option<(f64, f64)> {
    snaps.iter().map(|s| s.gas_price_gwei).fold(None, |acc, g| match acc {
        None => Some((g, g)),
        Some((lo, hi)) => Some((lo.min(g), hi.max(g))),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn published_polygon_and_ethereum_figures() {
        // Raw products, worked by hand: 751000 × 30 × 0.085 = 1,915,050 (×1e-9).
        assert!((usd_cost(WORKFLOW_GAS, 30.0, 0.085) - 0.00191505).abs() < 1e-15);
        assert!((usd_cost(WORKFLOW_GAS, 130.0, 0.085) - 0.00829855).abs() < 1e-15);
        assert!((usd_cost(WORKFLOW_GAS, 1519.0, 0.085) - 0.096965365).abs() < 1e-14);
        assert!((usd_cost(WORKFLOW_GAS, 25.0, 3000.0) - 56.325).abs() < 1e-9);
        assert_eq!(usd_cost(0, 1519.0, 0.085), 0.0);

        assert_eq!(format_usd(usd_cost(WORKFLOW_GAS, 30.0, 0.085)), "$0.002");
        assert_eq!(format_usd(usd_cost(WORKFLOW_GAS, 130.0, 0.085)), "$0.008");
        assert_eq!(format_usd(usd_cost(WORKFLOW_GAS, 1519.0, 0.085)), "$0.10");
        assert_eq!(format_usd(usd_cost(WORKFLOW_GAS, 25.0, 3000.0)), "$56.33");
    }

    #[test]
    fn reference_table() {
        let t = cost_table(&reference_profiles(), WORKFLOW_GAS);
        let md = t.to_markdown();
        for line in [
            "| Ethereum L1 | 751K | $56.33 | --- | $56,330 |",
            "| Arbitrum | 751K | $0.56 | --- | $560 |",
            "| Optimism | 751K | $0.48 | --- | $480 |",
            "| Polygon (30 gwei) | 751K | $0.002 | --- | $2 |",
            "| Polygon (130 gwei) | 751K | $0.008 | --- | $8 |",
            "| Polygon (spike) | 751K | --- | $0.10 | $100 |",
            "| Private Chain | 751K | $0 | --- | $0 |",
        ] {
            assert!(md.contains(line), "missing {line}\n{md}");
        }
        let json: CostTable = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(json, t);
    }

    #[test]
    fn monthly_figures() {
        assert!((monthly_cost(0.002, 1000) - 2.0).abs() < 1e-12);
        assert!((monthly_cost(0.008, 1000) - 8.0).abs() < 1e-12);
        assert!((monthly_cost(56.33, 1000) - 56_330.0).abs() < 1e-9);
        assert_eq!(format_monthly(56_330.0), "$56,330");
        assert_eq!(format_monthly(1.915), "$1.92");
        assert_eq!(format_monthly(0.0), "$0");
        assert_eq!(format_monthly(1_234_567.5), "$1,234,567.50");
    }

    #[test]
    fn display_rounding_edges() {
        assert_eq!(display_round(0.0095), 0.010);
        assert_eq!(format_usd(0.0095), "$0.01");
        assert_eq!(format_usd(0.009499), "$0.009");
        assert_eq!(format_usd(0.01), "$0.01");
        assert_eq!(format_usd(0.0005), "$0.001");
        assert_eq!(format_usd(0.0004), "$0.000");
    }

    #[test]
    fn throughput() {
        let p = |interval, txs| NetworkProfile::gas_priced("x", 1.0, 1.0, interval, txs);
        assert_eq!(throughput_model(&p(3.0, 10)).tx_per_min, 200.0);
        assert_eq!(throughput_model(&p(3.0, 10)).daily_capacity, 288_000.0);
        assert_eq!(throughput_model(&p(5.0, 10)).tx_per_min, 120.0);
        assert_eq!(throughput_model(&p(60.0, 1)).tx_per_min, 1.0);
    }

    #[test]
    fn bundled_snapshot_costs_stay_in_the_published_band() {
        let snaps = load_polygon_snapshots(POLYGON_SNAPSHOT_JSON).unwrap();
        assert_eq!(snapshot_range(&snaps), Some((25.0, 1519.0)));
        for s in &snaps {
            let shown = display_round(usd_cost(WORKFLOW_GAS, s.gas_price_gwei, 0.085));
            assert!((0.002..=0.10).contains(&shown), "{} → {shown}", s.gas_price_gwei);
        }
    }

    #[test]
    fn floor_and_profile_validation() {
        let below = r#"[{"timestamp":"t","gas_price_gwei":24.9,"source":"x"}]"#;
        assert!(matches!(load_polygon_snapshots(below), Err(CostError::BelowFloor { .. })));
        assert!(load_profiles(r#"[{"name":"x","gas_price_gwei":1,"token_usd":1,"block_interval_s":0,"txs_per_block":1}]"#).is_err());
        let ok = load_profiles(r#"[{"name":"x","gas_price_gwei":1,"token_usd":1,"block_interval_s":2,"txs_per_block":1}]"#).unwrap();
        assert_eq!(ok[0].regime, Regime::Typical);
        let roundtrip: Vec<NetworkProfile> =
            serde_json::from_str(&serde_json::to_string(&reference_profiles()).unwrap()).unwrap();
        assert_eq!(roundtrip, reference_profiles());
    }

    proptest! {
        #[test]
        fn usd_cost_is_linear_in_each_argument(
            gas in 0u64..10_000_000,
            gwei in 0.0f64..5000.0,
            token in 0.0f64..5000.0,
            k in 1u64..1000,
            s in 0.0f64..100.0,
        ) {
            let base = usd_cost(gas, gwei, token);
            let tol = 1e-9 * (1.0 + base.abs() * k as f64 * (1.0 + s));
            prop_assert!((usd_cost(gas * k, gwei, token) - k as f64 * base).abs() < tol);
            prop_assert!((usd_cost(gas, gwei * s, token) - s * base).abs() < tol);
            prop_assert!((usd_cost(gas, gwei, token * s) - s * base).abs() < tol);
        }

        #[test]
        fn polygon_band_over_the_whole_price_range(gwei in 25.0f64..=1519.0) {
            let shown = display_round(usd_cost(WORKFLOW_GAS, gwei, 0.085));
            prop_assert!((0.002..=0.10).contains(&shown));
        }
    }
}
