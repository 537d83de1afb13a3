use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::contract::PaymentContract;
use super::records::LedgerRecord;
use super::{WorkflowError, WorkflowState};
use crate::crypto::Digest32;
use crate::detector::ENTERPRISE_FEATURES;
use crate::ledger::{verify_inclusion, Block, InclusionProof, LedgerEntry};

/// One ledger entry about a payment, with what an auditor needs to check it
/// against a verified chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub block_height: u64,
    pub merkle_root: Digest32,
    pub entry: LedgerEntry,
    pub record: LedgerRecord,
    pub proof: InclusionProof,
}

impl TrailEntry {
    /// The proof ties the entry to `merkle_root`, and the decoded record
    /// matches the entry payload.
    pub fn verify(&self) -> bool {
        verify_inclusion(&self.merkle_root, &self.proof, &self.entry)
            && LedgerRecord::from_entry(&self.entry).as_ref() == Ok(&self.record)
    }

    /// As [`TrailEntry::verify`], and the root is the one committed at that
    /// height in `blocks`.
    pub fn verify_against(&self, blocks: &[Block]) -> bool {
        blocks
            .iter()
            .find(|b| b.height == self.block_height)
            .is_some_and(|b| b.merkle_root == self.merkle_root)
            && self.verify()
    }
}

/// Stable JSON schema: `payment_id`, `final_state`, `gas_used`,
/// `dual_role_approvers`, and `entries` (each with `block_height`,
/// `merkle_root`, `entry`, `record`, `proof`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTrail {
    pub payment_id: String,
    pub final_state: WorkflowState,
    pub gas_used: u64,
    /// Actors who gave both approvals. Permitted, but worth an auditor's look.
    pub dual_role_approvers: Vec<String>,
    pub entries: Vec<TrailEntry>,
}

impl DecisionTrail {
    pub fn verify(&self) -> bool {
        self.entries.iter().all(TrailEntry::verify)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trail serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Decision trail: {}\n", self.payment_id);
        let _ = writeln!(s, "- Final state: **{}**", self.final_state);
        let _ = writeln!(s, "- Gas used: {}", self.gas_used);
        if !self.dual_role_approvers.is_empty() {
            let _ = writeln!(
                s,
                "- **Flag:** same actor gave manager and finance approval: {}",
                self.dual_role_approvers.join(", ")
            );
        }
        let _ = writeln!(s, "- Inclusion proofs: {}\n", if self.verify() { "all verify" } else { "FAILED" });
        let _ = writeln!(s, "| # | Height | Entry | Record | Actor | Time (ms) | Detail |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for (i, e) in self.entries.iter().enumerate() {
            let (what, detail) = match &e.record {
                LedgerRecord::Assessment(a) => {
                    let feats: Vec<String> = a
                        .top_features
                        .iter()
                        .map(|f| {
                            let name = ENTERPRISE_FEATURES
                                .get(usize::from(f.feature_id))
                                .copied()
                                .unwrap_or("?");
                            format!("{name} {:+.3}", f.contribution as f64 / 1e6)
                        })
                        .collect();
                    (
                        "assessment".to_string(),
                        format!("score {} bps; model {}; {}", a.score_bps, &a.model_hash.to_hex()[..12], feats.join(", ")),
                    )
                }
                LedgerRecord::Transition(t) => {
                    let what = match t.action {
                        Some(a) => format!("{a} → {}", t.to),
                        None => format!("submit → {}", t.to),
                    };
                    let mut detail = format!("role {:?}; gas {}", t.role, t.gas);
                    if let Some(r) = &t.request {
                        let _ = write!(
                            detail,
                            "; vendor {}; amount ${:.2}",
                            r.vendor,
                            r.amount_cents as f64 / 100.0
                        );
                    }
                    if let Some(reason) = &t.reason {
                        let _ = write!(detail, "; reason: {reason}");
                    }
                    (what, detail)
                }
                LedgerRecord::Attestation(a) => ("attestation".to_string(), a.signer.clone()),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} |",
                i + 1,
                e.block_height,
                e.entry.entry_id,
                what,
                e.entry.author,
                e.entry.timestamp,
                detail
            );
        }
        s
    }
}

impl PaymentContract {
    /// Every entry about `payment_id` in commit order, each with its
    /// inclusion proof.
    pub fn decision_trail(&self, payment_id: &str) -> Result<DecisionTrail, WorkflowError> {
        let p = self
            .payment(payment_id)
            .ok_or_else(|| WorkflowError::UnknownPayment(payment_id.to_string()))?;
        let ledger = self.ledger();
        let entries = p
            .entry_ids
            .iter()
            .map(|&id| {
                let (entry, height) = ledger.entry(id).expect("recorded entries are committed");
                let block = ledger.block(height).expect("height exists");
                TrailEntry {
                    block_height: height,
                    merkle_root: block.merkle_root,
                    entry: entry.clone(),
                    record: LedgerRecord::from_entry(entry).expect("contract wrote this entry"),
                    proof: ledger.prove_inclusion(id).expect("entry is committed"),
                }
            })
            .collect();
        Ok(DecisionTrail {
            payment_id: payment_id.to_string(),
            final_state: p.state,
            gas_used: p.gas_used,
            dual_role_approvers: p.dual_role_approvers(),
            entries,
        })
    }
}
