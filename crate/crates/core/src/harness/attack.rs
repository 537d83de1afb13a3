//! An insider with both approval roles pushes five payments to a shell
//! vendor, then deletes the fraud alerts from the operational log.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::audit::{audit_log, audit_snapshot, AuditReport, LogKind, LogRecord, MutableLogStore};
use super::{Detector, HarnessError, InferenceServer, ALERT_BPS};
use crate::crypto::{KeyedHashScheme, SignatureScheme};
use crate::datagen::suspicious_vendor_payment;
use crate::explain::to_bps;
use crate::ledger::encode_snapshot;
use crate::ledger::snapshot::locate_entry;
use crate::workflow::{Action, LedgerRecord, PaymentContract, PaymentRequest, Role};

pub const ATTACK_PAYMENTS: usize = 5;
pub const ATTACK_AMOUNT_USD: u64 = 10_000;
/// Re-draws allowed per payment before the scenario is declared unsatisfiable.
pub const MAX_DRAWS: u32 = 200;
/// Every attack payment must score strictly above this.
pub const FLAG_BPS: u16 = 8_500;

const T0_MS: u64 = 1_767_603_600_000;
const MINUTE_MS: u64 = 60_000;
const AUDIT_DELAY_MS: u64 = 182 * 24 * 60 * MINUTE_MS;
const VALIDATORS: usize = 4;

const REQUESTER: &str = "accomplice";
const INSIDER: &str = "mallory";
const SYSTEM: &str = "erp-system";
const INFERENCE: &str = "inference-1";
const VENDOR: &str = "V-SHELL-0042";
const BUDGET: &str = "CC-4410-consulting";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// The mutable log is the only record.
    Traditional,
    /// Workflow runs on the ledger; the log is an operational mirror.
    Ledger,
    /// As `Ledger`, and the attacker also flips a byte of an assessment in
    /// the snapshot the auditor receives.
    LedgerTamper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub mode: AttackMode,
    pub seed: u64,
    /// Detector draws needed per payment to reach a flagged row.
    pub draws: Vec<u32>,
    pub scores_bps: Vec<u16>,
    /// Log rows the attacker deleted.
    pub deleted_rows: usize,
    /// Entry id and height of the tampered assessment.
    pub tampered: Option<(u64, u64)>,
    /// The operational log as the attacker leaves it.
    pub attacker_view: AuditReport,
    /// What the auditor finds six months later in the system of record.
    pub auditor_view: AuditReport,
}

impl AttackOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Insider attack ({:?} mode, seed {})\n", self.mode, self.seed);
        let _ = writeln!(
            s,
            "- Payments: {ATTACK_PAYMENTS} × ${ATTACK_AMOUNT_USD} to {VENDOR}, scores (bps): {:?}, draws: {:?}",
            self.scores_bps, self.draws
        );
        let _ = writeln!(s, "- Log rows deleted by the attacker: {}", self.deleted_rows);
        if let Some((id, h)) = self.tampered {
            let _ = writeln!(s, "- Snapshot tampered: entry {id} at height {h}");
        }
        let _ = writeln!(s, "\n## Attacker view\n");
        s.push_str(&demote(&self.attacker_view.to_markdown()));
        let _ = writeln!(s, "\n## Auditor view\n");
        s.push_str(&demote(&self.auditor_view.to_markdown()));
        s
    }
}

fn demote(md: &str) -> String {
    md.lines()
        .map(|l| if l.starts_with('#') { format!("##{l}\n") } else { format!("{l}\n") })
        .collect()
}

struct Flagged {
    x: Vec<f64>,
    score: f64,
    draws: u32,
}

fn flagged_row(detector: &Detector, seed: u64, payment: usize) -> Result<Flagged, HarnessError> {
    for draw in 0..MAX_DRAWS {
        let attempt = payment as u64 * u64::from(MAX_DRAWS) + u64::from(draw);
        let x = suspicious_vendor_payment(ATTACK_AMOUNT_USD as f64, seed, attempt);
        let score = detector.score(&x)?;
        if to_bps(score) > FLAG_BPS {
            return Ok(Flagged {
                x,
                score,
                draws: draw + 1,
            });
        }
    }
    Err(HarnessError::ScenarioUnsatisfiable {
        payment: payment + 1,
        draws: MAX_DRAWS,
    })
}

fn log_row(kind: LogKind, payment_id: &str, actor: &str, timestamp: u64, action: Option<Action>) -> LogRecord {
    LogRecord {
        id: 0,
        kind,
        payment_id: payment_id.to_string(),
        actor: actor.to_string(),
        timestamp,
        action,
        score_bps: None,
        top_features: Vec::new(),
    }
}

/// Runs the scenario end to end and audits it 182 simulated days later.
pub fn run_insider_attack(detector: &Arc<Detector>, mode: AttackMode, seed: u64) -> Result<AttackOutcome, HarnessError> {
    let scheme: Arc<dyn SignatureScheme> = Arc::new(KeyedHashScheme::simulation());
    let server = InferenceServer::new(detector.clone(), INFERENCE, scheme.clone());
    let on_ledger = mode != AttackMode::Traditional;

    let mut contract = PaymentContract::new(scheme.clone(), VALIDATORS, seed);
    if on_ledger {
        contract.set_time(T0_MS - 60 * MINUTE_MS);
        contract.add_actor(REQUESTER, &[Role::Requester]);
        contract.add_actor(INSIDER, &[Role::Manager, Role::Finance]);
        contract.add_actor(SYSTEM, &[Role::System]);
        contract.add_budget(BUDGET, 100_000_000);
        server.register(&mut contract)?;
    }

    let mut log = MutableLogStore::new();
    let mut draws = Vec::with_capacity(ATTACK_PAYMENTS);
    let mut scores_bps = Vec::with_capacity(ATTACK_PAYMENTS);
    let mut ids = Vec::with_capacity(ATTACK_PAYMENTS);

    for i in 0..ATTACK_PAYMENTS {
        let row = flagged_row(detector, seed, i)?;
        let payment_id = format!("INV-{seed}-{:02}", i + 1);
        let submitted_at = T0_MS + i as u64 * MINUTE_MS;
        let assessment = server.sign(&payment_id, &detector.explain(&row.x)?, row.score)?;
        draws.push(row.draws);
        scores_bps.push(assessment.score_bps);

        log.append(log_row(LogKind::Submission, &payment_id, REQUESTER, submitted_at, None));
        if assessment.score_bps >= ALERT_BPS {
            let mut alert = log_row(LogKind::Alert, &payment_id, INFERENCE, submitted_at, None);
            alert.score_bps = Some(assessment.score_bps);
            alert.top_features = assessment.top_features.clone();
            log.append(alert);
        }
        if on_ledger {
            contract.set_time(submitted_at);
            contract.create_payment(
                PaymentRequest {
                    payment_id: payment_id.clone(),
                    requester: REQUESTER.into(),
                    vendor: VENDOR.into(),
                    amount_cents: ATTACK_AMOUNT_USD * 100,
                    budget_line: BUDGET.into(),
                    submitted_at,
                },
                Some(assessment),
            )?;
        }
        ids.push(payment_id);
    }

    // Approvals start five minutes after the first submission, one payment a
    // minute, so all ten signatures fall inside a ten-minute window.
    for (i, payment_id) in ids.iter().enumerate() {
        let base = T0_MS + 5 * MINUTE_MS + i as u64 * MINUTE_MS;
        let steps = [
            (INSIDER, Role::Manager, Action::ManagerApprove, 0),
            (INSIDER, Role::Finance, Action::FinanceApprove, 30_000),
            (SYSTEM, Role::System, Action::BudgetCheck, 40_000),
            (SYSTEM, Role::System, Action::Execute, 50_000),
        ];
        for (actor, role, action, offset) in steps {
            let at = base + offset;
            let kind = match action {
                Action::Execute => Some(LogKind::Execution),
                Action::BudgetCheck => None,
                _ => Some(LogKind::Approval),
            };
            if let Some(kind) = kind {
                log.append(log_row(kind, payment_id, actor, at, Some(action)));
            }
            if on_ledger {
                contract.set_time(at);
                contract.transition(actor, role, payment_id, action)?;
            }
        }
    }

    // The cover-up: every alert about these payments goes.
    let attacked: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let deleted_rows = log.delete_where(|r| r.kind == LogKind::Alert && attacked.contains(r.payment_id.as_str()));
    let cover_up_at = T0_MS + 60 * MINUTE_MS;
    let attacker_view = audit_log(&log, cover_up_at);

    let audit_at = T0_MS + AUDIT_DELAY_MS;
    let mut tampered = None;
    let auditor_view = if on_ledger {
        let ledger = contract.ledger();
        let mut bytes = encode_snapshot(ledger);
        if mode == AttackMode::LedgerTamper {
            let target = ledger
                .blocks()
                .iter()
                .flat_map(|b| b.entries.iter())
                .find(|e| matches!(LedgerRecord::from_entry(e), Ok(LedgerRecord::Assessment(_))))
                .map(|e| e.entry_id)
                .expect("scenario committed assessments");
            let loc = locate_entry(&bytes, scheme.clone(), target).expect("entry is in the snapshot");
            // Nudge a digit of the payload, the way one would lower a score.
            let pos = loc.payload.clone().find(|&p| bytes[p].is_ascii_digit()).unwrap_or(loc.payload.start);
            bytes[pos] = if bytes[pos] == b'0' { b'1' } else { bytes[pos] - 1 };
            tampered = Some((target, loc.block_height));
        }
        audit_snapshot(&bytes, scheme, &ledger.trust().validators, audit_at)?
    } else {
        audit_log(&log, audit_at)
    };

    Ok(AttackOutcome {
        mode,
        seed,
        draws,
        scores_bps,
        deleted_rows,
        tampered,
        attacker_view,
        auditor_view,
    })
}
