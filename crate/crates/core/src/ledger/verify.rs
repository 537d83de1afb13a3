use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::block::Block;
use super::chain::{HeadReceipt, Ledger, TrustConfig};
use super::merkle::merkle_root;
use crate::codec::DecodeError;
use crate::crypto::Digest32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Bytes for this height could not be decoded.
    Malformed,
    HeightMismatch,
    HashLinkBreak,
    MerkleMismatch,
    EntrySequence,
    SignatureFailure,
    QuorumShortfall,
    /// The chain is shorter than a head receipt says it should be.
    Truncated,
    /// The block at the receipt's height is not the one the receipt names.
    HeadMismatch,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureKind::Malformed => "malformed",
            FailureKind::HeightMismatch => "height mismatch",
            FailureKind::HashLinkBreak => "hash-link break",
            FailureKind::MerkleMismatch => "merkle mismatch",
            FailureKind::EntrySequence => "entry sequence",
            FailureKind::SignatureFailure => "signature failure",
            FailureKind::QuorumShortfall => "quorum shortfall",
            FailureKind::Truncated => "truncated",
            FailureKind::HeadMismatch => "head mismatch",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationFailure {
    pub height: u64,
    pub kind: FailureKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub blocks_checked: u64,
    pub entries_checked: u64,
    pub failure: Option<VerificationFailure>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.failure.is_none()
    }

    pub fn failed_at(&self) -> Option<(u64, FailureKind)> {
        self.failure.as_ref().map(|f| (f.height, f.kind))
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => write!(
                f,
                "OK: {} blocks, {} entries verified",
                self.blocks_checked, self.entries_checked
            ),
            Some(fail) => write!(
                f,
                "FAILED at height {}: {} ({})",
                fail.height, fail.kind, fail.detail
            ),
        }
    }
}

struct Cursor {
    height: u64,
    prev_hash: Digest32,
    next_entry_id: u64,
}

fn check_block(
    block: &Block,
    cursor: &Cursor,
    trust: &TrustConfig,
) -> Result<(), (FailureKind, String)> {
    if block.height != cursor.height {
        return Err((
            FailureKind::HeightMismatch,
            format!("stored height {}", block.height),
        ));
    }
    if block.prev_hash != cursor.prev_hash {
        return Err((
            FailureKind::HashLinkBreak,
            format!(
                "prev_hash {} does not match predecessor digest {}",
                block.prev_hash, cursor.prev_hash
            ),
        ));
    }
    if block.entries.is_empty() {
        return Err((FailureKind::Malformed, "block has no entries".into()));
    }
    let root = merkle_root(&block.leaf_hashes());
    if root != block.merkle_root {
        return Err((
            FailureKind::MerkleMismatch,
            format!("recomputed root {root} != stored {}", block.merkle_root),
        ));
    }
    let mut expected = cursor.next_entry_id;
    for entry in &block.entries {
        if entry.entry_id != expected {
            return Err((
                FailureKind::EntrySequence,
                format!("entry id {} where {} expected", entry.entry_id, expected),
            ));
        }
        expected += 1;
    }
    for entry in &block.entries {
        if !trust.verify_entry(entry) {
            return Err((
                FailureKind::SignatureFailure,
                format!("entry {} by {}", entry.entry_id, entry.author),
            ));
        }
    }
    let header_digest = block.header().digest();
    let mut voters = BTreeSet::new();
    for vote in &block.commit_votes {
        if !trust.verify_vote(&header_digest, vote) {
            return Err((
                FailureKind::SignatureFailure,
                format!("vote from {}", vote.validator),
            ));
        }
        voters.insert(vote.validator.as_str());
    }
    let required = trust.quorum();
    if voters.len() < required {
        return Err((
            FailureKind::QuorumShortfall,
            format!("{} distinct votes, {} required", voters.len(), required),
        ));
    }
    Ok(())
}

/// Verifies a sequence of decoded (or undecodable) blocks, stopping at the
/// first failure.
pub fn verify_blocks<'a, I>(blocks: I, trust: &TrustConfig) -> VerificationReport
where
    I: IntoIterator<Item = Result<&'a Block, DecodeError>>,
{
    let mut cursor = Cursor {
        height: 1,
        prev_hash: Digest32::ZERO,
        next_entry_id: 1,
    };
    let mut report = VerificationReport {
        blocks_checked: 0,
        entries_checked: 0,
        failure: None,
    };
    for item in blocks {
        let outcome = match item {
            Err(e) => Err((FailureKind::Malformed, e.to_string())),
            Ok(block) => check_block(block, &cursor, trust).map(|()| block),
        };
        match outcome {
            Err((kind, detail)) => {
                report.failure = Some(VerificationFailure {
                    height: cursor.height,
                    kind,
                    detail,
                });
                return report;
            }
            Ok(block) => {
                report.blocks_checked += 1;
                report.entries_checked += block.entries.len() as u64;
                cursor.height += 1;
                cursor.prev_hash = block.digest();
                cursor.next_entry_id += block.entries.len() as u64;
            }
        }
    }
    report
}

/// Full-chain verification: height sequence, hash links, Merkle roots,
/// entry ordinals, entry and vote signatures, quorum. An empty chain is clean.
pub fn verify_chain(ledger: &Ledger) -> VerificationReport {
    verify_blocks(ledger.blocks().iter().map(Ok), ledger.trust())
}

/// [`verify_chain`] plus a check against an externally held head receipt,
/// which is what catches a deleted tail.
pub fn verify_against_head(ledger: &Ledger, receipt: &HeadReceipt) -> VerificationReport {
    let mut report = verify_chain(ledger);
    if report.failure.is_some() {
        return report;
    }
    if ledger.height() < receipt.height {
        report.failure = Some(VerificationFailure {
            height: ledger.height() + 1,
            kind: FailureKind::Truncated,
            detail: format!(
                "chain ends at height {} but receipt records height {}",
                ledger.height(),
                receipt.height
            ),
        });
    } else if receipt.height > 0 {
        let actual = ledger
            .block(receipt.height)
            .map(Block::digest)
            .unwrap_or(Digest32::ZERO);
        if actual != receipt.head_digest {
            report.failure = Some(VerificationFailure {
                height: receipt.height,
                kind: FailureKind::HeadMismatch,
                detail: format!("block digest {actual} != receipt {}", receipt.head_digest),
            });
        }
    }
    report
}
