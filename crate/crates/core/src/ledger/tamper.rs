//! Attacker model for raw snapshot bytes. Always returns a copy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::snapshot::decode_snapshot;
use crate::crypto::SignatureScheme;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    /// XOR the byte at `offset` with `mask` (non-zero for a real change).
    XorByte { offset: usize, mask: u8 },
    SetByte { offset: usize, value: u8 },
    Overwrite { offset: usize, bytes: Vec<u8> },
    Truncate { len: usize },
    /// Remove the last framed block.
    DropLastBlock,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub mutations: Vec<Mutation>,
}

impl MutationSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn single(m: Mutation) -> Self {
        Self { mutations: vec![m] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TamperError {
    #[error("mutation at offset {offset} (len {len}) outside {size}-byte input")]
    OutOfRange { offset: usize, len: usize, size: usize },
    #[error("input has no blocks to drop")]
    NoBlocks,
}

pub fn tamper(
    raw: &[u8],
    spec: &MutationSpec,
    scheme: Arc<dyn SignatureScheme>,
) -> Result<Vec<u8>, TamperError> {
    let mut out = raw.to_vec();
    for m in &spec.mutations {
        let check = |offset: usize, len: usize, size: usize| {
            if offset.checked_add(len).is_none_or(|end| end > size) || len == 0 {
                Err(TamperError::OutOfRange { offset, len, size })
            } else {
                Ok(())
            }
        };
        match m {
            Mutation::XorByte { offset, mask } => {
                check(*offset, 1, out.len())?;
                out[*offset] ^= mask;
            }
            Mutation::SetByte { offset, value } => {
                check(*offset, 1, out.len())?;
                out[*offset] = *value;
            }
            Mutation::Overwrite { offset, bytes } => {
                check(*offset, bytes.len(), out.len())?;
                out[*offset..*offset + bytes.len()].copy_from_slice(bytes);
            }
            Mutation::Truncate { len } => {
                if *len > out.len() {
                    return Err(TamperError::OutOfRange {
                        offset: *len,
                        len: 0,
                        size: out.len(),
                    });
                }
                out.truncate(*len);
            }
            Mutation::DropLastBlock => {
                let decoded = decode_snapshot(&out, scheme.clone()).map_err(|_| TamperError::NoBlocks)?;
                let last = decoded.block_ranges.last().ok_or(TamperError::NoBlocks)?;
                out.truncate(last.start);
            }
        }
    }
    Ok(out)
}
