use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HarnessError, ALERT_BPS};
use crate::crypto::{Digest32, SignatureScheme};
use crate::detector::ENTERPRISE_FEATURES;
use crate::explain::FeatureContribution;
use crate::ledger::{
    load_ledger, verify_against_head, verify_chain, verify_inclusion, verify_snapshot, FailureKind, HeadReceipt,
    Ledger, ValidatorKey, VerificationReport,
};
use crate::workflow::{Action, LedgerRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Submission,
    Alert,
    Approval,
    Execution,
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: u64,
    pub kind: LogKind,
    pub payment_id: String,
    pub actor: String,
    pub timestamp: u64,
    pub action: Option<Action>,
    pub score_bps: Option<u16>,
    pub top_features: Vec<FeatureContribution>,
}

/// The conventional system of record: an editable table. Anyone with admin
/// rights can delete or rewrite rows and nothing records that they did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutableLogStore {
    rows: Vec<LogRecord>,
    next_id: u64,
}

impl MutableLogStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, mut record: LogRecord) -> u64 {
        record.id = self.next_id;
        self.next_id += 1;
        self.rows.push(record);
        self.next_id - 1
    }

    pub fn rows(&self) -> &[LogRecord] {
        &self.rows
    }

    pub fn delete(&mut self, id: u64) -> bool {
        let before = self.rows.len();
        self.rows.retain(|r| r.id != id);
        self.rows.len() != before
    }

    /// Deletes every row matching `pred`; returns how many went.
    pub fn delete_where(&mut self, pred: impl Fn(&LogRecord) -> bool) -> usize {
        let before = self.rows.len();
        self.rows.retain(|r| !pred(r));
        before - self.rows.len()
    }

    pub fn edit(&mut self, id: u64, f: impl FnOnce(&mut LogRecord)) -> bool {
        match self.rows.iter_mut().find(|r| r.id == id) {
            Some(r) => {
                f(r);
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditSource {
    MutableLog,
    Ledger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerificationStatus {
    Verified { blocks: u64, entries: u64 },
    Failed { height: u64, kind: FailureKind, detail: String },
    /// The source has no integrity mechanism to check.
    Unverifiable,
}

impl From<&VerificationReport> for VerificationStatus {
    fn from(r: &VerificationReport) -> Self {
        match &r.failure {
            None => VerificationStatus::Verified {
                blocks: r.blocks_checked,
                entries: r.entries_checked,
            },
            Some(f) => VerificationStatus::Failed {
                height: f.height,
                kind: f.kind,
                detail: f.detail.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertFact {
    pub payment_id: String,
    pub score_bps: u16,
    /// Feature name and contribution (margin units).
    pub top_features: Vec<(String, f64)>,
    pub model_hash: Option<Digest32>,
    pub entry_id: Option<u64>,
    pub block_height: Option<u64>,
    /// The inclusion proof checked against the committed Merkle root.
    pub proof_verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalFact {
    pub payment_id: String,
    pub actor: String,
    pub action: Action,
    pub timestamp: u64,
    pub entry_id: Option<u64>,
    pub proof_verified: bool,
}

/// One actor's approvals across several payments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproverCluster {
    pub actor: String,
    pub payments: Vec<String>,
    /// Gave both the manager and the finance approval on some payment.
    pub dual_role: bool,
    pub first_ms: u64,
    pub last_ms: u64,
    pub window_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub source: AuditSource,
    pub audited_at: u64,
    pub payments_examined: usize,
    /// Payments carrying both approvals.
    pub approved_payments: usize,
    pub alerts: Vec<AlertFact>,
    pub approvals: Vec<ApprovalFact>,
    pub approver_clusters: Vec<ApproverCluster>,
    pub verification: VerificationStatus,
    pub discrepancies: Vec<String>,
}

fn feature_pairs(top: &[FeatureContribution]) -> Vec<(String, f64)> {
    top.iter()
        .map(|f| {
            let name = ENTERPRISE_FEATURES
                .get(usize::from(f.feature_id))
                .map_or_else(|| format!("feature_{}", f.feature_id), |s| s.to_string());
            (name, f.contribution as f64 / 1e6)
        })
        .collect()
}

fn clusters(approvals: &[ApprovalFact]) -> Vec<ApproverCluster> {
    let mut by_actor: BTreeMap<&str, Vec<&ApprovalFact>> = BTreeMap::new();
    for a in approvals {
        by_actor.entry(&a.actor).or_default().push(a);
    }
    by_actor
        .into_iter()
        .filter_map(|(actor, facts)| {
            let payments: BTreeSet<&str> = facts.iter().map(|f| f.payment_id.as_str()).collect();
            if payments.len() < 2 {
                return None;
            }
            let dual_role = payments.iter().any(|p| {
                let on_p = |a: Action| facts.iter().any(|f| f.payment_id == *p && f.action == a);
                on_p(Action::ManagerApprove) && on_p(Action::FinanceApprove)
            });
            let first_ms = facts.iter().map(|f| f.timestamp).min()?;
            let last_ms = facts.iter().map(|f| f.timestamp).max()?;
            Some(ApproverCluster {
                actor: actor.to_string(),
                payments: payments.into_iter().map(str::to_string).collect(),
                dual_role,
                first_ms,
                last_ms,
                window_minutes: (last_ms - first_ms) as f64 / 60_000.0,
            })
        })
        .collect()
}

fn approved_count(approvals: &[ApprovalFact]) -> usize {
    let with = |a: Action| -> BTreeSet<&str> {
        approvals
            .iter()
            .filter(|f| f.action == a)
            .map(|f| f.payment_id.as_str())
            .collect()
    };
    with(Action::ManagerApprove)
        .intersection(&with(Action::FinanceApprove))
        .count()
}

/// Audits whatever rows remain in a mutable log. Nothing can be verified.
pub fn audit_log(store: &MutableLogStore, audited_at: u64) -> AuditReport {
    let mut payments = BTreeSet::new();
    let mut alerts = Vec::new();
    let mut approvals = Vec::new();
    for r in store.rows() {
        payments.insert(r.payment_id.clone());
        match (r.kind, r.action) {
            (LogKind::Alert, _) => alerts.push(AlertFact {
                payment_id: r.payment_id.clone(),
                score_bps: r.score_bps.unwrap_or(0),
                top_features: feature_pairs(&r.top_features),
                model_hash: None,
                entry_id: None,
                block_height: None,
                proof_verified: false,
            }),
            (LogKind::Approval, Some(action)) => approvals.push(ApprovalFact {
                payment_id: r.payment_id.clone(),
                actor: r.actor.clone(),
                action,
                timestamp: r.timestamp,
                entry_id: None,
                proof_verified: false,
            }),
            _ => {}
        }
    }
    AuditReport {
        source: AuditSource::MutableLog,
        audited_at,
        payments_examined: payments.len(),
        approved_payments: approved_count(&approvals),
        approver_clusters: clusters(&approvals),
        alerts,
        approvals,
        verification: VerificationStatus::Unverifiable,
        discrepancies: Vec::new(),
    }
}

/// Audits a ledger: verifies the chain, then cites every alert and approval
/// with its inclusion proof checked against the block's Merkle root. Pass the
/// latest head receipt the auditor holds to also catch a deleted tail.
pub fn audit_ledger(ledger: &Ledger, head: Option<&HeadReceipt>, audited_at: u64) -> AuditReport {
    let report = match head {
        Some(r) => verify_against_head(ledger, r),
        None => verify_chain(ledger),
    };
    let mut discrepancies = Vec::new();
    if let Some(f) = &report.failure {
        discrepancies.push(format!("chain verification failed at height {}: {} ({})", f.height, f.kind, f.detail));
    }
    let mut payments = BTreeSet::new();
    let mut alerts = Vec::new();
    let mut approvals = Vec::new();
    for block in ledger.blocks() {
        for entry in &block.entries {
            let proof_verified = ledger
                .prove_inclusion(entry.entry_id)
                .is_ok_and(|p| verify_inclusion(&block.merkle_root, &p, entry));
            if !proof_verified {
                discrepancies.push(format!(
                    "entry {} at height {} fails its inclusion proof",
                    entry.entry_id, block.height
                ));
            }
            let record = match LedgerRecord::from_entry(entry) {
                Ok(r) => r,
                Err(e) => {
                    discrepancies.push(format!("entry {} does not decode: {e}", entry.entry_id));
                    continue;
                }
            };
            match record {
                LedgerRecord::Assessment(a) => {
                    payments.insert(a.payment_id.clone());
                    if a.score_bps >= ALERT_BPS {
                        alerts.push(AlertFact {
                            payment_id: a.payment_id.clone(),
                            score_bps: a.score_bps,
                            top_features: feature_pairs(&a.top_features),
                            model_hash: Some(a.model_hash),
                            entry_id: Some(entry.entry_id),
                            block_height: Some(block.height),
                            proof_verified,
                        });
                    }
                }
                LedgerRecord::Transition(t) => {
                    if let Some(action @ (Action::ManagerApprove | Action::FinanceApprove)) = t.action {
                        approvals.push(ApprovalFact {
                            payment_id: t.payment_id.clone(),
                            actor: t.actor.clone(),
                            action,
                            timestamp: t.timestamp,
                            entry_id: Some(entry.entry_id),
                            proof_verified,
                        });
                    }
                }
                LedgerRecord::Attestation(_) => {}
            }
        }
    }
    AuditReport {
        source: AuditSource::Ledger,
        audited_at,
        payments_examined: payments.len(),
        approved_payments: approved_count(&approvals),
        approver_clusters: clusters(&approvals),
        alerts,
        approvals,
        verification: VerificationStatus::from(&report),
        discrepancies,
    }
}

/// Audits snapshot bytes against validator keys obtained out of band.
pub fn audit_snapshot(
    bytes: &[u8],
    scheme: Arc<dyn SignatureScheme>,
    expected_validators: &[ValidatorKey],
    audited_at: u64,
) -> Result<AuditReport, HarnessError> {
    let verification = verify_snapshot(bytes, scheme.clone())?;
    let mut report = match load_ledger(bytes, scheme) {
        Ok(ledger) => {
            let mut r = audit_ledger(&ledger, None, audited_at);
            if ledger.trust().validators != expected_validators {
                r.discrepancies.push("snapshot validator keys differ from the deployment's".into());
            }
            r
        }
        Err(e) => AuditReport {
            source: AuditSource::Ledger,
            audited_at,
            payments_examined: 0,
            approved_payments: 0,
            alerts: Vec::new(),
            approvals: Vec::new(),
            approver_clusters: Vec::new(),
            verification: VerificationStatus::Unverifiable,
            discrepancies: vec![format!("snapshot does not load: {e}")],
        },
    };
    // The byte-level check is authoritative: it also sees blocks that fail
    // to decode.
    report.verification = VerificationStatus::from(&verification);
    Ok(report)
}

impl AuditReport {
    pub fn is_verified(&self) -> bool {
        matches!(self.verification, VerificationStatus::Verified { .. })
    }

    /// Every cited fact carries a proof that checked out.
    pub fn facts_verified(&self) -> bool {
        self.alerts.iter().all(|a| a.proof_verified) && self.approvals.iter().all(|a| a.proof_verified)
    }

    pub fn cluster(&self, actor: &str) -> Option<&ApproverCluster> {
        self.approver_clusters.iter().find(|c| c.actor == actor)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let source = match self.source {
            AuditSource::MutableLog => "mutable log",
            AuditSource::Ledger => "ledger",
        };
        let _ = writeln!(s, "# Audit report ({source})\n");
        let status = match &self.verification {
            VerificationStatus::Verified { blocks, entries } => format!("VERIFIED ({blocks} blocks, {entries} entries)"),
            VerificationStatus::Failed { height, kind, .. } => format!("FAILED at height {height} ({kind})"),
            VerificationStatus::Unverifiable => "not verifiable".into(),
        };
        let _ = writeln!(s, "- Audited at: {} ms", self.audited_at);
        let _ = writeln!(s, "- Verification: {status}");
        let _ = writeln!(s, "- Payments examined: {}", self.payments_examined);
        let _ = writeln!(s, "- Fully approved payments: {}", self.approved_payments);
        let _ = writeln!(s, "- Alerts: {}\n", self.alerts.len());
        if !self.alerts.is_empty() {
            let _ = writeln!(s, "## Alerts\n\n| Payment | Score (bps) | Top features | Proof |\n|---|---|---|---|");
            for a in &self.alerts {
                let feats: Vec<String> = a.top_features.iter().map(|(n, v)| format!("{n} {v:+.3}")).collect();
                let proof = if a.proof_verified { "ok" } else { "none" };
                let _ = writeln!(s, "| {} | {} | {} | {proof} |", a.payment_id, a.score_bps, feats.join(", "));
            }
            s.push('\n');
        }
        if !self.approver_clusters.is_empty() {
            let _ = writeln!(s, "## Approver clusters\n\n| Actor | Payments | Dual role | Window (min) |\n|---|---|---|---|");
            for c in &self.approver_clusters {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {:.1} |",
                    c.actor,
                    c.payments.len(),
                    if c.dual_role { "yes" } else { "no" },
                    c.window_minutes
                );
            }
            s.push('\n');
        }
        if !self.discrepancies.is_empty() {
            let _ = writeln!(s, "## Discrepancies\n");
            for d in &self.discrepancies {
                let _ = writeln!(s, "- {d}");
            }
        }
        s
    }
}
