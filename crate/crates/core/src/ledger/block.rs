use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{sha256_tagged, Digest32, Signature, SignatureScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum EntryKind {
    AssessmentRecorded = 1,
    StateTransition = 2,
    ApprovalCast = 3,
    AttestationRegistered = 4,
}

impl EntryKind {
    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            1 => EntryKind::AssessmentRecorded,
            2 => EntryKind::StateTransition,
            3 => EntryKind::ApprovalCast,
            4 => EntryKind::AttestationRegistered,
            _ => return Err(DecodeError::InvalidTag { what: "entry kind", tag }),
        })
    }
}

/// One signed record. The payload is the canonical encoding of the
/// kind-specific record; the ledger treats it as opaque bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub entry_id: u64,
    pub kind: EntryKind,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
    pub author: String,
    pub timestamp: u64,
    pub signature: Signature,
}

impl LedgerEntry {
    pub fn new_signed(
        entry_id: u64,
        kind: EntryKind,
        payload: Vec<u8>,
        author: impl Into<String>,
        timestamp: u64,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let mut entry = LedgerEntry {
            entry_id,
            kind,
            payload,
            author: author.into(),
            timestamp,
            signature: Signature::default(),
        };
        entry.signature = scheme.sign(&entry.author, &entry.signing_bytes());
        entry
    }

    /// Everything except the signature, domain-separated.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(64 + self.payload.len());
        enc.raw(b"ledgerguard/entry/v1");
        self.encode_unsigned(&mut enc);
        enc.finish()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.u64(self.entry_id)
            .u8(self.kind as u8)
            .bytes(&self.payload)
            .str(&self.author)
            .u64(self.timestamp);
    }

    pub fn leaf_hash(&self) -> Digest32 {
        sha256_tagged(&[0x00], &[&self.to_canonical_bytes()])
    }
}

impl Canonical for LedgerEntry {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        self.signature.encode(enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(LedgerEntry {
            entry_id: dec.u64()?,
            kind: EntryKind::from_tag(dec.u8()?)?,
            payload: dec.bytes()?.to_vec(),
            author: dec.string()?,
            timestamp: dec.u64()?,
            signature: Signature::decode(dec)?,
        })
    }
}

/// A validator's signature over a block header digest and the digest of the
/// validator set it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitVote {
    pub validator: String,
    pub signature: Signature,
}

impl CommitVote {
    pub fn sign(
        validator: &str,
        header_digest: &Digest32,
        validator_set: &Digest32,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        CommitVote {
            validator: validator.to_owned(),
            signature: scheme.sign(validator, &vote_message(header_digest, validator_set)),
        }
    }
}

/// Covering the set digest means editing any validator's id or key, even
/// one that never voted, invalidates every vote.
pub(crate) fn vote_message(header_digest: &Digest32, validator_set: &Digest32) -> Vec<u8> {
    let mut msg = b"ledgerguard/vote/v2".to_vec();
    msg.extend_from_slice(header_digest.as_bytes());
    msg.extend_from_slice(validator_set.as_bytes());
    msg
}

impl Canonical for CommitVote {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.validator);
        self.signature.encode(enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(CommitVote {
            validator: dec.string()?,
            signature: Signature::decode(dec)?,
        })
    }
}

/// The part of a block validators sign. Covering the Merkle root binds the
/// entries; covering `block_time` means a header edit breaks every vote even
/// on the last block, where no successor link exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest32,
    pub merkle_root: Digest32,
    pub block_time: u64,
}

impl BlockHeader {
    pub fn digest(&self) -> Digest32 {
        let mut enc = Encoder::with_capacity(80);
        enc.u64(self.height)
            .raw(self.prev_hash.as_bytes())
            .raw(self.merkle_root.as_bytes())
            .u64(self.block_time);
        sha256_tagged(b"ledgerguard/header/v1", &[&enc.finish()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest32,
    pub merkle_root: Digest32,
    pub entries: Vec<LedgerEntry>,
    pub commit_votes: Vec<CommitVote>,
    pub block_time: u64,
}

impl Block {
    pub fn header(&self) -> BlockHeader {
        BlockHeader {
            height: self.height,
            prev_hash: self.prev_hash,
            merkle_root: self.merkle_root,
            block_time: self.block_time,
        }
    }

    /// Digest of the full serialized block; the successor's `prev_hash`.
    pub fn digest(&self) -> Digest32 {
        sha256_tagged(b"ledgerguard/block/v1", &[&self.to_canonical_bytes()])
    }

    pub fn leaf_hashes(&self) -> Vec<Digest32> {
        self.entries.iter().map(LedgerEntry::leaf_hash).collect()
    }
}

impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height)
            .raw(self.prev_hash.as_bytes())
            .raw(self.merkle_root.as_bytes())
            .u64(self.block_time)
            .seq(&self.entries, |e, entry| entry.encode(e))
            .seq(&self.commit_votes, |e, vote| vote.encode(e));
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Block {
            height: dec.u64()?,
            prev_hash: Digest32::decode(dec)?,
            merkle_root: Digest32::decode(dec)?,
            block_time: dec.u64()?,
            entries: dec.seq(LedgerEntry::decode)?,
            commit_votes: dec.seq(CommitVote::decode)?,
        })
    }
}
