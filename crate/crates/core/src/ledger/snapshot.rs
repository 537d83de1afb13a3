//! Snapshot files.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! magic      8 bytes  "LGSNAP01"
//! scheme     u8       signature scheme id
//! validators u32 count, then (u32 len + utf-8 id, 32-byte public key) each
//! authors    u32 count, then (u32 len + utf-8 actor, 32-byte public key) each
//! blocks     until EOF: u32 len + canonical block bytes
//! ```
//!
//! Each block is framed on its own so a damaged block is attributed to its
//! own height. The JSON-lines sidecar is for people, not for verification.

use std::ops::Range;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::block::Block;
use super::chain::{Ledger, TrustConfig, ValidatorKey};
use super::verify::{verify_blocks, VerificationReport};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{KeyRegistry, PublicKey, SignatureScheme};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"LGSNAP01";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a ledger snapshot (bad magic)")]
    BadMagic,
    #[error("snapshot uses signature scheme {found}, verifier has {expected}")]
    SchemeMismatch { found: u8, expected: u8 },
    #[error("corrupt snapshot header: {0}")]
    Header(DecodeError),
    #[error("corrupt block at height {height}: {source}")]
    Block { height: u64, source: DecodeError },
}

pub fn encode_snapshot(ledger: &Ledger) -> Vec<u8> {
    let trust = ledger.trust();
    let mut enc = Encoder::new();
    enc.raw(SNAPSHOT_MAGIC).u8(trust.scheme.scheme_id());
    enc.seq(&trust.validators, |e, v| {
        e.str(&v.id);
        v.public_key.encode(e);
    });
    let authors: Vec<(&String, &PublicKey)> = trust.authors.iter().collect();
    enc.seq(&authors, |e, (actor, key)| {
        e.str(actor);
        key.encode(e);
    });
    for block in ledger.blocks() {
        enc.bytes(&block.to_canonical_bytes());
    }
    enc.finish()
}

/// A snapshot split into its header and per-height block results.
#[derive(Debug)]
pub struct DecodedSnapshot {
    pub trust: TrustConfig,
    pub blocks: Vec<Result<Block, DecodeError>>,
    /// Byte range of each framed block (including its length prefix).
    pub block_ranges: Vec<Range<usize>>,
    pub header_len: usize,
}

fn decode_header(
    dec: &mut Decoder<'_>,
    scheme: Arc<dyn SignatureScheme>,
) -> Result<TrustConfig, SnapshotError> {
    let magic: [u8; 8] = dec.raw().map_err(|_| SnapshotError::BadMagic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let id = dec.u8().map_err(SnapshotError::Header)?;
    if id != scheme.scheme_id() {
        return Err(SnapshotError::SchemeMismatch {
            found: id,
            expected: scheme.scheme_id(),
        });
    }
    let validators = dec
        .seq(|d| {
            Ok(ValidatorKey {
                id: d.string()?,
                public_key: PublicKey::decode(d)?,
            })
        })
        .map_err(SnapshotError::Header)?;
    let pairs = dec
        .seq(|d| Ok((d.string()?, PublicKey::decode(d)?)))
        .map_err(SnapshotError::Header)?;
    let mut authors = KeyRegistry::new();
    for (actor, key) in pairs {
        if !authors.register(actor, key) {
            return Err(SnapshotError::Header(DecodeError::Invalid(
                "author registered twice with different keys".into(),
            )));
        }
    }
    let mut trust = TrustConfig::new(scheme, validators);
    trust.authors = authors;
    Ok(trust)
}

pub fn decode_snapshot(
    bytes: &[u8],
    scheme: Arc<dyn SignatureScheme>,
) -> Result<DecodedSnapshot, SnapshotError> {
    let mut dec = Decoder::new(bytes);
    let trust = decode_header(&mut dec, scheme)?;
    let header_len = dec.position();
    let mut blocks = Vec::new();
    let mut block_ranges = Vec::new();
    while !dec.is_at_end() {
        let start = dec.position();
        match dec.bytes() {
            Ok(body) => {
                block_ranges.push(start..dec.position());
                blocks.push(Block::from_canonical_bytes(body));
            }
            Err(e) => {
                // Framing is lost; nothing after this point can be attributed.
                block_ranges.push(start..bytes.len());
                blocks.push(Err(e));
                break;
            }
        }
    }
    Ok(DecodedSnapshot {
        trust,
        blocks,
        block_ranges,
        header_len,
    })
}

/// Loads a snapshot whose blocks all decode. Semantic checks are left to
/// [`super::verify_chain`].
pub fn load_ledger(bytes: &[u8], scheme: Arc<dyn SignatureScheme>) -> Result<Ledger, SnapshotError> {
    let decoded = decode_snapshot(bytes, scheme)?;
    let mut blocks = Vec::with_capacity(decoded.blocks.len());
    for (i, b) in decoded.blocks.into_iter().enumerate() {
        blocks.push(b.map_err(|source| SnapshotError::Block {
            height: i as u64 + 1,
            source,
        })?);
    }
    Ok(Ledger::from_blocks_unchecked(decoded.trust, blocks))
}

/// Verifies raw snapshot bytes. Undecodable blocks are reported as
/// `Malformed` at their height rather than as an error.
pub fn verify_snapshot(
    bytes: &[u8],
    scheme: Arc<dyn SignatureScheme>,
) -> Result<VerificationReport, SnapshotError> {
    let decoded = decode_snapshot(bytes, scheme)?;
    Ok(verify_blocks(
        decoded.blocks.iter().map(|b| b.as_ref().map_err(Clone::clone)),
        &decoded.trust,
    ))
}

/// Where an entry's payload sits inside snapshot bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryLocation {
    pub block_height: u64,
    pub payload: Range<usize>,
}

pub fn locate_entry(
    bytes: &[u8],
    scheme: Arc<dyn SignatureScheme>,
    entry_id: u64,
) -> Option<EntryLocation> {
    let decoded = decode_snapshot(bytes, scheme).ok()?;
    for (i, range) in decoded.block_ranges.iter().enumerate() {
        // Skip the frame length, then walk the block layout.
        let body_start = range.start + 4;
        let mut dec = Decoder::new(bytes.get(body_start..range.end)?);
        dec.u64().ok()?;
        dec.raw::<64>().ok()?;
        dec.u64().ok()?;
        let count = dec.u32().ok()?;
        for _ in 0..count {
            let id = dec.u64().ok()?;
            dec.u8().ok()?;
            let payload_start = body_start + dec.position() + 4;
            let payload = dec.bytes().ok()?;
            if id == entry_id {
                return Some(EntryLocation {
                    block_height: i as u64 + 1,
                    payload: payload_start..payload_start + payload.len(),
                });
            }
            dec.string().ok()?;
            dec.u64().ok()?;
            dec.bytes().ok()?;
        }
    }
    None
}

#[derive(Serialize)]
struct SidecarLine<'a> {
    height: u64,
    block_hash: String,
    prev_hash: String,
    merkle_root: String,
    block_time: u64,
    entry_ids: Vec<u64>,
    voters: Vec<&'a str>,
}

/// One JSON object per block, newline separated.
pub fn sidecar_jsonl(ledger: &Ledger) -> String {
    let mut out = String::new();
    for block in ledger.blocks() {
        let line = SidecarLine {
            height: block.height,
            block_hash: block.digest().to_hex(),
            prev_hash: block.prev_hash.to_hex(),
            merkle_root: block.merkle_root.to_hex(),
            block_time: block.block_time,
            entry_ids: block.entries.iter().map(|e| e.entry_id).collect(),
            voters: block.commit_votes.iter().map(|v| v.validator.as_str()).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("sidecar serializes"));
        out.push('\n');
    }
    out
}
