use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{vote_message, Block, BlockHeader, CommitVote, LedgerEntry};
use super::merkle::{merkle_path, merkle_root, root_from_path, InclusionProof};
use crate::consensus::quorum_size;
use crate::codec::{Canonical, Encoder};
use crate::crypto::{sha256_tagged, Digest32, KeyRegistry, PublicKey, SignatureScheme};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorKey {
    pub id: String,
    pub public_key: PublicKey,
}

/// What a verifier must trust out of band: the signature scheme, the
/// validator set and the registered author keys.
#[derive(Debug, Clone)]
pub struct TrustConfig {
    pub scheme: Arc<dyn SignatureScheme>,
    pub validators: Vec<ValidatorKey>,
    pub authors: KeyRegistry,
}

impl TrustConfig {
    pub fn new(scheme: Arc<dyn SignatureScheme>, validators: Vec<ValidatorKey>) -> Self {
        Self {
            scheme,
            validators,
            authors: KeyRegistry::new(),
        }
    }

    /// `n` validators named `validator-0..n` with keys from `scheme`.
    pub fn with_simulated_validators(scheme: Arc<dyn SignatureScheme>, n: usize) -> Self {
        let validators = (0..n)
            .map(|i| {
                let id = format!("validator-{i}");
                ValidatorKey {
                    public_key: scheme.public_key(&id),
                    id,
                }
            })
            .collect();
        Self::new(scheme, validators)
    }

    pub fn quorum(&self) -> usize {
        quorum_size(self.validators.len().max(1))
    }

    /// Commits to the ordered validator ids and keys.
    pub fn validator_set_digest(&self) -> Digest32 {
        let mut enc = Encoder::new();
        enc.seq(&self.validators, |e, v| {
            e.str(&v.id);
            v.public_key.encode(e);
        });
        sha256_tagged(b"ledgerguard/validators/v1", &[&enc.finish()])
    }

    pub fn validator(&self, id: &str) -> Option<(usize, &ValidatorKey)> {
        self.validators.iter().enumerate().find(|(_, v)| v.id == id)
    }

    pub fn verify_entry(&self, entry: &LedgerEntry) -> bool {
        match self.authors.get(&entry.author) {
            Some(key) => {
                self.scheme
                    .verify(&entry.author, key, &entry.signing_bytes(), &entry.signature)
            }
            None => false,
        }
    }

    pub fn verify_vote(&self, header_digest: &Digest32, vote: &CommitVote) -> bool {
        match self.validator(&vote.validator) {
            Some((_, v)) => self.scheme.verify(
                &v.id,
                &v.public_key,
                &vote_message(header_digest, &self.validator_set_digest()),
                &vote.signature,
            ),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("empty entry batch")]
    EmptyBatch,
    #[error("insufficient quorum: {votes} valid votes, {required} required")]
    InsufficientQuorum { votes: usize, required: usize },
    #[error("bad signature: {0}")]
    BadSignature(String),
    #[error("entry id {found} out of sequence, expected {expected}")]
    EntrySequence { expected: u64, found: u64 },
    #[error("unknown entry {0}")]
    UnknownEntry(u64),
    #[error("injected crash at {0:?}")]
    Crashed(CrashPoint),
}

/// Fault-injection points on the append path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterValidation,
    BeforePublish,
}

/// The latest head an auditor or validator has seen. Truncating the chain
/// tail is only detectable against one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadReceipt {
    pub height: u64,
    pub head_digest: Digest32,
}

/// Append-only chain of quorum-committed blocks. Heights start at 1; the
/// first block links to the zero digest.
#[derive(Debug, Clone)]
pub struct Ledger {
    trust: TrustConfig,
    blocks: Vec<Block>,
    locations: HashMap<u64, (usize, usize)>,
    crash: Option<CrashPoint>,
}

impl Ledger {
    pub fn new(trust: TrustConfig) -> Self {
        Self {
            trust,
            blocks: Vec::new(),
            locations: HashMap::new(),
            crash: None,
        }
    }

    /// Wraps blocks read from storage without validating them; run
    /// [`super::verify_chain`] before trusting the result.
    pub fn from_blocks_unchecked(trust: TrustConfig, blocks: Vec<Block>) -> Self {
        let mut locations = HashMap::new();
        for (bi, block) in blocks.iter().enumerate() {
            for (ei, entry) in block.entries.iter().enumerate() {
                locations.entry(entry.entry_id).or_insert((bi, ei));
            }
        }
        Self {
            trust,
            blocks,
            locations,
            crash: None,
        }
    }

    pub fn trust(&self) -> &TrustConfig {
        &self.trust
    }

    pub fn scheme(&self) -> &dyn SignatureScheme {
        self.trust.scheme.as_ref()
    }

    /// Registers an author key. Returns false if the author already holds a
    /// different key.
    pub fn register_author(&mut self, actor: &str, key: PublicKey) -> bool {
        self.trust.authors.register(actor, key)
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        height
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i as usize))
    }

    pub fn head_digest(&self) -> Digest32 {
        self.blocks.last().map_or(Digest32::ZERO, Block::digest)
    }

    pub fn head_receipt(&self) -> HeadReceipt {
        HeadReceipt {
            height: self.height(),
            head_digest: self.head_digest(),
        }
    }

    pub fn next_entry_id(&self) -> u64 {
        self.blocks
            .iter()
            .rev()
            .find_map(|b| b.entries.last())
            .map_or(1, |e| e.entry_id + 1)
    }

    pub fn entry_count(&self) -> usize {
        self.blocks.iter().map(|b| b.entries.len()).sum()
    }

    /// Header that votes for the next block must sign.
    pub fn next_header(&self, entries: &[LedgerEntry], block_time: u64) -> BlockHeader {
        let leaves: Vec<Digest32> = entries.iter().map(LedgerEntry::leaf_hash).collect();
        BlockHeader {
            height: self.height() + 1,
            prev_hash: self.head_digest(),
            merkle_root: merkle_root(&leaves),
            block_time,
        }
    }

    pub fn arm_crash(&mut self, point: CrashPoint) {
        self.crash = Some(point);
    }

    fn crash_at(&mut self, point: CrashPoint) -> Result<(), LedgerError> {
        if self.crash == Some(point) {
            self.crash = None;
            return Err(LedgerError::Crashed(point));
        }
        Ok(())
    }

    /// Commits `entries` as one block. Either every entry becomes visible at
    /// the new height or the ledger is left untouched.
    pub fn append_entries(
        &mut self,
        entries: Vec<LedgerEntry>,
        block_time: u64,
        votes: Vec<CommitVote>,
    ) -> Result<&Block, LedgerError> {
        if entries.is_empty() {
            return Err(LedgerError::EmptyBatch);
        }
        let mut expected = self.next_entry_id();
        for entry in &entries {
            if entry.entry_id != expected {
                return Err(LedgerError::EntrySequence {
                    expected,
                    found: entry.entry_id,
                });
            }
            if !self.trust.verify_entry(entry) {
                return Err(LedgerError::BadSignature(format!(
                    "entry {} by {}",
                    entry.entry_id, entry.author
                )));
            }
            expected += 1;
        }

        let header = self.next_header(&entries, block_time);
        let header_digest = header.digest();
        let mut seen = BTreeSet::new();
        for vote in &votes {
            if !self.trust.verify_vote(&header_digest, vote) {
                return Err(LedgerError::BadSignature(format!(
                    "vote from {}",
                    vote.validator
                )));
            }
            if !seen.insert(vote.validator.clone()) {
                return Err(LedgerError::BadSignature(format!(
                    "duplicate vote from {}",
                    vote.validator
                )));
            }
        }
        let required = self.trust.quorum();
        if seen.len() < required {
            return Err(LedgerError::InsufficientQuorum {
                votes: seen.len(),
                required,
            });
        }
        self.crash_at(CrashPoint::AfterValidation)?;

        // Votes are stored in validator-set order so equal inputs give
        // byte-identical blocks regardless of arrival order.
        let mut votes = votes;
        votes.sort_by_key(|v| self.trust.validator(&v.validator).map(|(i, _)| i));
        let block_index = self.blocks.len();
        let staged: Vec<(u64, (usize, usize))> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.entry_id, (block_index, i)))
            .collect();
        let block = Block {
            height: header.height,
            prev_hash: header.prev_hash,
            merkle_root: header.merkle_root,
            entries,
            commit_votes: votes,
            block_time,
        };
        self.crash_at(CrashPoint::BeforePublish)?;

        self.blocks.push(block);
        self.locations.extend(staged);
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn entry(&self, entry_id: u64) -> Option<(&LedgerEntry, u64)> {
        let &(bi, ei) = self.locations.get(&entry_id)?;
        let block = &self.blocks[bi];
        Some((&block.entries[ei], block.height))
    }

    pub fn prove_inclusion(&self, entry_id: u64) -> Result<InclusionProof, LedgerError> {
        let &(bi, ei) = self
            .locations
            .get(&entry_id)
            .ok_or(LedgerError::UnknownEntry(entry_id))?;
        let block = &self.blocks[bi];
        let path = merkle_path(&block.leaf_hashes(), ei).expect("index within block");
        Ok(InclusionProof {
            leaf_index: ei,
            sibling_hashes: path,
            block_height: block.height,
        })
    }
}

pub fn verify_inclusion(merkle_root: &Digest32, proof: &InclusionProof, entry: &LedgerEntry) -> bool {
    proof.is_well_formed()
        && root_from_path(entry.leaf_hash(), proof.leaf_index, &proof.sibling_hashes) == *merkle_root
}
