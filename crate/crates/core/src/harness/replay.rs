use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::VerificationStatus;
use super::{Detector, HarnessError, InferenceServer, ALERT_BPS};
use crate::costmodel::{reference_profiles, throughput_model, Throughput};
use crate::crypto::{KeyedHashScheme, SignatureScheme};
use crate::datagen::{amount_from_zscore, sample_row, FraudCategory, RowKind};
use crate::detector::feature::AMOUNT_ZSCORE;
use crate::explain::Explanation;
use crate::ledger::verify_chain;
use crate::rng;
use crate::workflow::{Action, PaymentContract, PaymentRequest, Role, WorkflowError, WorkflowState};

const START_MS: u64 = 1_767_225_600_000;
const DAY_MS: u64 = 86_400_000;
const VALIDATORS: usize = 4;
const REQUESTERS: usize = 20;
const BUDGET_LINES: usize = 8;
/// Salts the stream that decides which rows are anomalies.
const PLAN_SALT: u64 = 0x7265_706c_6179;
/// Steps of a complete trail for an executed payment: assessment, creation
/// and four transitions.
const EXECUTED_TRAIL_LEN: usize = 6;

/// Deterministic outcome of a replay. Identical inputs give identical
/// summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub days: u32,
    pub tx_per_day: u32,
    pub anomaly_rate: f64,
    pub seed: u64,
    pub transactions: usize,
    pub injected_anomalies: usize,
    pub alerts: usize,
    /// Anomalies that were alerted and rejected.
    pub anomalies_stopped: usize,
    pub terminal_states: BTreeMap<WorkflowState, usize>,
    pub total_gas: u64,
    /// Simulated cost of the total gas under each reference network.
    pub cost_usd: BTreeMap<String, f64>,
    pub blocks: u64,
    pub entries: usize,
    pub verification: VerificationStatus,
    pub executed_with_complete_trail: usize,
    pub incomplete_trails: Vec<String>,
    /// Capacity of the Polygon profile the workload is sized against.
    pub throughput: Throughput,
}

/// Wall-clock measurements, kept apart from the deterministic summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub predict_median_ms: f64,
    pub shapley_median_ms: f64,
    pub scoring_wall_ms: f64,
    pub workflow_wall_ms: f64,
    pub verify_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub summary: ReplaySummary,
    pub timings: Timings,
}

impl ReplaySummary {
    pub fn is_clean(&self) -> bool {
        matches!(self.verification, VerificationStatus::Verified { .. }) && self.incomplete_trails.is_empty()
    }

    pub fn count(&self, state: WorkflowState) -> usize {
        self.terminal_states.get(&state).copied().unwrap_or(0)
    }
}

impl ReplayReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let s = &self.summary;
        let t = &self.timings;
        let mut out = String::new();
        let _ = writeln!(out, "# Workload replay\n");
        let _ = writeln!(
            out,
            "- {} days × {} tx/day, anomaly rate {}, seed {}",
            s.days, s.tx_per_day, s.anomaly_rate, s.seed
        );
        let _ = writeln!(
            out,
            "- Transactions: {} ({} injected anomalies, {} alerts, {} anomalies stopped)",
            s.transactions, s.injected_anomalies, s.alerts, s.anomalies_stopped
        );
        let verification = match &s.verification {
            VerificationStatus::Verified { blocks, entries } => format!("clean ({blocks} blocks, {entries} entries)"),
            VerificationStatus::Failed { height, kind, .. } => format!("FAILED at height {height} ({kind})"),
            VerificationStatus::Unverifiable => "not run".into(),
        };
        let _ = writeln!(out, "- Chain verification: {verification}");
        let _ = writeln!(
            out,
            "- Executed payments with complete trails: {} (incomplete: {})",
            s.executed_with_complete_trail,
            s.incomplete_trails.len()
        );
        let _ = writeln!(out, "- Total gas: {}", s.total_gas);
        let _ = writeln!(
            out,
            "- Throughput capacity: {:.0} tx/min, {:.0} tx/day\n",
            s.throughput.tx_per_min, s.throughput.daily_capacity
        );
        let _ = writeln!(out, "| Terminal state | Count |\n|---|---|");
        for (state, n) in &s.terminal_states {
            let _ = writeln!(out, "| {state} | {n} |");
        }
        let _ = writeln!(out, "\n| Network | Simulated cost (USD) |\n|---|---|");
        for (net, usd) in &s.cost_usd {
            let _ = writeln!(out, "| {net} | {usd:.2} |");
        }
        let _ = writeln!(
            out,
            "\nTimings: predict median {:.4} ms, Shapley median {:.3} ms, scoring {:.0} ms, workflow {:.0} ms, verification {:.0} ms",
            t.predict_median_ms, t.shapley_median_ms, t.scoring_wall_ms, t.workflow_wall_ms, t.verify_wall_ms
        );
        out
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

struct Scored {
    kind: RowKind,
    amount_cents: u64,
    score: f64,
    explanation: Explanation,
    predict_ms: f64,
    shapley_ms: f64,
}

fn plan_kind(seed: u64, k: u64, anomaly_rate: f64) -> RowKind {
    let mut r = rng::stream(seed ^ PLAN_SALT, k);
    if rng::unit(&mut r) < anomaly_rate {
        RowKind::Fraud(FraudCategory::ALL[rng::range_inclusive(&mut r, 0, 3) as usize])
    } else {
        RowKind::Legit
    }
}

fn score_row(detector: &Detector, seed: u64, k: u64, anomaly_rate: f64) -> Result<Scored, HarnessError> {
    let kind = plan_kind(seed, k, anomaly_rate);
    let x = sample_row(kind, seed, k);
    let t = Instant::now();
    let score = detector.score(&x)?;
    let predict_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let explanation = detector.explain(&x)?;
    let shapley_ms = t.elapsed().as_secs_f64() * 1e3;
    let amount_cents = (amount_from_zscore(x[AMOUNT_ZSCORE]) * 100.0).round().max(1.0) as u64;
    Ok(Scored {
        kind,
        amount_cents,
        score,
        explanation,
        predict_ms,
        shapley_ms,
    })
}

/// Drives generate → score → explain → create → approve → execute or reject
/// for `days × tx_per_day` payments. Alerted payments are rejected by the
/// manager; the rest take the happy path.
pub fn replay_workload(
    detector: &Arc<Detector>,
    days: u32,
    tx_per_day: u32,
    anomaly_rate: f64,
    seed: u64,
) -> Result<ReplayReport, HarnessError> {
    if !(0.0..=1.0).contains(&anomaly_rate) {
        return Err(HarnessError::InvalidRate(anomaly_rate));
    }
    let n = u64::from(days) * u64::from(tx_per_day);

    let t = Instant::now();
    let scored: Vec<Scored> = (0..n)
        .into_par_iter()
        .map(|k| score_row(detector, seed, k, anomaly_rate))
        .collect::<Result<_, _>>()?;
    let scoring_wall_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let scheme: Arc<dyn SignatureScheme> = Arc::new(KeyedHashScheme::simulation());
    let server = InferenceServer::new(detector.clone(), "inference-1", scheme.clone());
    let mut contract = PaymentContract::new(scheme, VALIDATORS, seed);
    contract.set_time(START_MS);
    let requesters: Vec<String> = (1..=REQUESTERS).map(|i| format!("req-{i:02}")).collect();
    for r in &requesters {
        contract.add_actor(r, &[Role::Requester]);
    }
    contract.add_actor("mgr-01", &[Role::Manager]);
    contract.add_actor("fin-01", &[Role::Finance]);
    contract.add_actor("erp-system", &[Role::System]);
    let budgets: Vec<String> = (1..=BUDGET_LINES).map(|i| format!("CC-{:04}", 4400 + i)).collect();
    for b in &budgets {
        contract.add_budget(b, u64::MAX / 2);
    }
    if n > 0 {
        server.register(&mut contract)?;
    }

    let spacing = DAY_MS / u64::from(tx_per_day.max(1));
    let step = (spacing / 5).max(1);
    let mut terminal_states = BTreeMap::new();
    let mut alerts = 0;
    let mut anomalies_stopped = 0;
    let mut executed = Vec::new();

    for (k, row) in scored.iter().enumerate() {
        let payment_id = format!("P{:07}", k + 1);
        let submitted_at = START_MS + k as u64 * spacing;
        contract.set_time(submitted_at);
        let assessment = server.sign(&payment_id, &row.explanation, row.score)?;
        let alerted = assessment.score_bps >= ALERT_BPS;
        contract.create_payment(
            PaymentRequest {
                payment_id: payment_id.clone(),
                requester: requesters[k % REQUESTERS].clone(),
                vendor: format!("V-{:05}", (k * 7919) % 1500),
                amount_cents: row.amount_cents,
                budget_line: budgets[k % BUDGET_LINES].clone(),
                submitted_at,
            },
            Some(assessment),
        )?;
        let steps: &[(&str, Role, Action)] = if alerted {
            &[("mgr-01", Role::Manager, Action::Reject)]
        } else {
            &[
                ("mgr-01", Role::Manager, Action::ManagerApprove),
                ("fin-01", Role::Finance, Action::FinanceApprove),
                ("erp-system", Role::System, Action::BudgetCheck),
                ("erp-system", Role::System, Action::Execute),
            ]
        };
        let mut state = WorkflowState::Created;
        for (i, (actor, role, action)) in steps.iter().enumerate() {
            contract.set_time(submitted_at + (i as u64 + 1) * step);
            state = match contract.transition(actor, *role, &payment_id, *action) {
                Ok(s) => s,
                Err(WorkflowError::BudgetExceeded { .. }) => WorkflowState::Rejected,
                Err(e) => return Err(e.into()),
            };
            if state.is_terminal() {
                break;
            }
        }
        alerts += usize::from(alerted);
        anomalies_stopped += usize::from(alerted && row.kind.is_fraud());
        *terminal_states.entry(state).or_insert(0) += 1;
        if state == WorkflowState::Executed {
            executed.push(payment_id);
        }
    }
    let workflow_wall_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let ledger = contract.ledger();
    let verification = VerificationStatus::from(&verify_chain(ledger));
    let mut incomplete_trails = Vec::new();
    for id in &executed {
        let trail = contract.decision_trail(id)?;
        let anchored = trail.entries.iter().all(|e| {
            ledger
                .block(e.block_height)
                .is_some_and(|b| b.merkle_root == e.merkle_root)
        });
        if trail.entries.len() != EXECUTED_TRAIL_LEN || !anchored || !trail.verify() {
            incomplete_trails.push(id.clone());
        }
    }
    let verify_wall_ms = t.elapsed().as_secs_f64() * 1e3;

    let total_gas: u64 = contract.payments().map(|p| p.gas_used).sum();
    let profiles = reference_profiles();
    let cost_usd = profiles
        .iter()
        .map(|p| {
            let usd: f64 = contract.payments().map(|pay| p.cost_of_gas(pay.gas_used)).sum();
            (p.name.clone(), usd)
        })
        .collect();
    let polygon = profiles
        .iter()
        .find(|p| p.name.starts_with("Polygon"))
        .expect("reference profiles include Polygon");

    let summary = ReplaySummary {
        days,
        tx_per_day,
        anomaly_rate,
        seed,
        transactions: scored.len(),
        injected_anomalies: scored.iter().filter(|s| s.kind.is_fraud()).count(),
        alerts,
        anomalies_stopped,
        terminal_states,
        total_gas,
        cost_usd,
        blocks: ledger.height(),
        entries: ledger.entry_count(),
        verification,
        executed_with_complete_trail: executed.len() - incomplete_trails.len(),
        incomplete_trails,
        throughput: throughput_model(polygon),
    };
    let timings = Timings {
        predict_median_ms: median(scored.iter().map(|s| s.predict_ms).collect()),
        shapley_median_ms: median(scored.iter().map(|s| s.shapley_ms).collect()),
        scoring_wall_ms,
        workflow_wall_ms,
        verify_wall_ms,
    };
    Ok(ReplayReport { summary, timings })
}
