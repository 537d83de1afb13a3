//! Append-only, hash-chained, quorum-signed block store.
//!
//! Every other module writes here. Blocks carry a Merkle root over their
//! entries, link to the digest of their predecessor, and need votes from a
//! quorum of the validator set. [`verify_chain`] rechecks all of that from
//! scratch; [`prove_inclusion`](Ledger::prove_inclusion) ties a single entry
//! to its block root.

mod block;
mod chain;
pub mod merkle;
pub mod snapshot;
pub mod tamper;
mod verify;

pub use block::{Block, BlockHeader, CommitVote, EntryKind, LedgerEntry};
pub use chain::{
    verify_inclusion, CrashPoint, HeadReceipt, Ledger, LedgerError, TrustConfig, ValidatorKey,
};
pub use merkle::InclusionProof;
pub use snapshot::{
    decode_snapshot, encode_snapshot, load_ledger, sidecar_jsonl, verify_snapshot, SnapshotError,
};
pub use tamper::{tamper, Mutation, MutationSpec, TamperError};
pub use verify::{
    verify_against_head, verify_blocks, verify_chain, FailureKind, VerificationFailure,
    VerificationReport,
};

/// Signs `header_digest` with the first `count` validators of `trust`.
pub fn sign_votes(trust: &TrustConfig, header_digest: &crate::crypto::Digest32, count: usize) -> Vec<CommitVote> {
    let set = trust.validator_set_digest();
    trust
        .validators
        .iter()
        .take(count)
        .map(|v| CommitVote::sign(&v.id, header_digest, &set, trust.scheme.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::codec::Canonical;
    use crate::crypto::{Digest32, KeyedHashScheme, SignatureScheme};

    fn scheme() -> Arc<dyn SignatureScheme> {
        Arc::new(KeyedHashScheme::simulation())
    }

    fn ledger(n_validators: usize) -> Ledger {
        let s = scheme();
        let mut trust = TrustConfig::with_simulated_validators(s.clone(), n_validators);
        for actor in ["alice", "bob"] {
            trust.authors.register(actor, s.public_key(actor));
        }
        Ledger::new(trust)
    }

    fn entries(ledger: &Ledger, n: usize, ts: u64) -> Vec<LedgerEntry> {
        let first = ledger.next_entry_id();
        (0..n as u64)
            .map(|i| {
                LedgerEntry::new_signed(
                    first + i,
                    EntryKind::StateTransition,
                    format!("payload-{}", first + i).into_bytes(),
                    "alice",
                    ts,
                    ledger.scheme(),
                )
            })
            .collect()
    }

    fn commit(ledger: &mut Ledger, n_entries: usize, ts: u64) {
        let batch = entries(ledger, n_entries, ts);
        let digest = ledger.next_header(&batch, ts).digest();
        let votes = sign_votes(ledger.trust(), &digest, ledger.trust().quorum());
        ledger.append_entries(batch, ts, votes).unwrap();
    }

    fn chain_of(n_blocks: usize) -> Ledger {
        let mut l = ledger(4);
        for h in 0..n_blocks {
            commit(&mut l, 1 + h % 4, 1_000 + h as u64);
        }
        l
    }

    #[test]
    fn genesis_block_links_to_zero_digest() {
        let mut l = ledger(4);
        let batch = entries(&l, 1, 10);
        let digest = l.next_header(&batch, 10).digest();
        let votes = sign_votes(l.trust(), &digest, 3);
        let block = l.append_entries(batch, 10, votes).unwrap();
        assert_eq!(block.height, 1);
        assert_eq!(block.prev_hash, Digest32::ZERO);
    }

    #[test]
    fn two_of_four_votes_is_insufficient() {
        let mut l = ledger(4);
        assert_eq!(l.trust().quorum(), 3);
        let batch = entries(&l, 1, 10);
        let digest = l.next_header(&batch, 10).digest();
        let votes = sign_votes(l.trust(), &digest, 2);
        assert_eq!(
            l.append_entries(batch, 10, votes).unwrap_err(),
            LedgerError::InsufficientQuorum {
                votes: 2,
                required: 3
            }
        );
        assert_eq!(l.height(), 0);
    }

    #[test]
    fn batched_entries_share_one_height() {
        let mut l = ledger(4);
        commit(&mut l, 2, 10);
        assert_eq!(l.entry(1).unwrap().1, 1);
        assert_eq!(l.entry(2).unwrap().1, 1);
    }

    #[test]
    fn append_rejects_bad_inputs() {
        let mut l = ledger(4);
        assert_eq!(
            l.append_entries(vec![], 1, vec![]).unwrap_err(),
            LedgerError::EmptyBatch
        );

        let mut batch = entries(&l, 1, 1);
        batch[0].payload.push(0);
        let digest = l.next_header(&batch, 1).digest();
        let votes = sign_votes(l.trust(), &digest, 4);
        assert!(matches!(
            l.append_entries(batch, 1, votes),
            Err(LedgerError::BadSignature(_))
        ));

        let mut batch = entries(&l, 1, 1);
        batch[0] = LedgerEntry::new_signed(7, EntryKind::ApprovalCast, vec![], "alice", 1, l.scheme());
        let digest = l.next_header(&batch, 1).digest();
        let votes = sign_votes(l.trust(), &digest, 4);
        assert_eq!(
            l.append_entries(batch, 1, votes).unwrap_err(),
            LedgerError::EntrySequence {
                expected: 1,
                found: 7
            }
        );

        // Votes over a different header do not count.
        let batch = entries(&l, 1, 1);
        let wrong = l.next_header(&batch, 2).digest();
        let votes = sign_votes(l.trust(), &wrong, 4);
        assert!(matches!(
            l.append_entries(batch, 1, votes),
            Err(LedgerError::BadSignature(_))
        ));

        // Unregistered author.
        let batch = vec![LedgerEntry::new_signed(1, EntryKind::ApprovalCast, vec![], "mallory", 1, l.scheme())];
        let digest = l.next_header(&batch, 1).digest();
        let votes = sign_votes(l.trust(), &digest, 4);
        assert!(matches!(
            l.append_entries(batch, 1, votes),
            Err(LedgerError::BadSignature(_))
        ));
        assert_eq!(l.height(), 0);
    }

    #[test]
    fn duplicate_votes_do_not_inflate_quorum() {
        let mut l = ledger(4);
        let batch = entries(&l, 1, 1);
        let digest = l.next_header(&batch, 1).digest();
        let mut votes = sign_votes(l.trust(), &digest, 2);
        votes.push(votes[0].clone());
        assert!(l.append_entries(batch, 1, votes).is_err());
    }

    #[test]
    fn untouched_chain_verifies_clean() {
        let l = chain_of(10);
        let report = verify_chain(&l);
        assert!(report.is_clean(), "{report}");
        assert_eq!(report.blocks_checked, 10);
        assert!(verify_chain(&ledger(4)).is_clean());
    }

    #[test]
    fn payload_bit_flip_is_a_merkle_mismatch_at_its_height() {
        let l = chain_of(10);
        let mut blocks = l.blocks().to_vec();
        blocks[4].entries[0].payload[0] ^= 1;
        let forged = Ledger::from_blocks_unchecked(l.trust().clone(), blocks);
        assert_eq!(
            verify_chain(&forged).failed_at(),
            Some((5, FailureKind::MerkleMismatch))
        );
    }

    #[test]
    fn swapping_an_idle_validator_key_is_caught() {
        // Only three of four validators vote, so the fourth key is never
        // used to check a signature; votes still commit to the whole set.
        let l = chain_of(3);
        let mut trust = l.trust().clone();
        trust.validators[3].public_key.0[0] ^= 1;
        let forged = Ledger::from_blocks_unchecked(trust, l.blocks().to_vec());
        let report = verify_chain(&forged);
        assert_eq!(report.failed_at().map(|(h, _)| h), Some(1), "{report}");
    }

    #[test]
    fn rehashed_forgery_breaks_the_next_link() {
        let l = chain_of(10);
        let mut blocks = l.blocks().to_vec();
        // Rebuild block 5 with different content, a fresh root and valid
        // votes, as a colluding quorum could.
        let mut prefix = Ledger::from_blocks_unchecked(l.trust().clone(), blocks[..4].to_vec());
        let mut batch = entries(&prefix, blocks[4].entries.len(), blocks[4].block_time);
        batch[0] = LedgerEntry::new_signed(
            batch[0].entry_id,
            EntryKind::StateTransition,
            b"forged".to_vec(),
            "alice",
            blocks[4].block_time,
            prefix.scheme(),
        );
        let digest = prefix.next_header(&batch, blocks[4].block_time).digest();
        let votes = sign_votes(prefix.trust(), &digest, 4);
        let forged = prefix
            .append_entries(batch, blocks[4].block_time, votes)
            .unwrap()
            .clone();
        assert_ne!(forged, blocks[4]);
        blocks[4] = forged;
        let tampered = Ledger::from_blocks_unchecked(l.trust().clone(), blocks);
        assert_eq!(
            verify_chain(&tampered).failed_at(),
            Some((6, FailureKind::HashLinkBreak))
        );
    }

    #[test]
    fn single_entry_block_proof_is_empty() {
        let mut l = ledger(4);
        commit(&mut l, 1, 1);
        let proof = l.prove_inclusion(1).unwrap();
        assert!(proof.sibling_hashes.is_empty());
        let block = l.block(1).unwrap();
        assert_eq!(block.merkle_root, block.entries[0].leaf_hash());
        assert!(verify_inclusion(&block.merkle_root, &proof, &block.entries[0]));
    }

    #[test]
    fn four_entry_block_proof_has_two_siblings() {
        let mut l = ledger(4);
        commit(&mut l, 4, 1);
        let proof = l.prove_inclusion(3).unwrap();
        assert_eq!(proof.leaf_index, 2);
        assert_eq!(proof.sibling_hashes.len(), 2);
        let block = l.block(1).unwrap();
        let entry = &block.entries[2];
        assert!(verify_inclusion(&block.merkle_root, &proof, entry));
        assert!(!verify_inclusion(&Digest32::ZERO, &proof, entry));
        assert!(!verify_inclusion(&block.merkle_root, &proof, &block.entries[1]));
        assert_eq!(
            l.prove_inclusion(99).unwrap_err(),
            LedgerError::UnknownEntry(99)
        );
    }

    #[test]
    fn every_committed_entry_proves() {
        let l = chain_of(12);
        for block in l.blocks() {
            for entry in &block.entries {
                let proof = l.prove_inclusion(entry.entry_id).unwrap();
                assert_eq!(proof.block_height, block.height);
                assert!(verify_inclusion(&block.merkle_root, &proof, entry));
            }
        }
    }

    #[test]
    fn identity_tamper_leaves_chain_clean() {
        let l = chain_of(5);
        let bytes = encode_snapshot(&l);
        let same = tamper(&bytes, &MutationSpec::identity(), scheme()).unwrap();
        assert_eq!(same, bytes);
        assert!(verify_snapshot(&same, scheme()).unwrap().is_clean());
    }

    #[test]
    fn dropped_tail_needs_a_head_receipt_to_detect() {
        let l = chain_of(5);
        let receipt = l.head_receipt();
        let bytes = encode_snapshot(&l);
        let cut = tamper(&bytes, &MutationSpec::single(Mutation::DropLastBlock), scheme()).unwrap();
        assert!(verify_snapshot(&cut, scheme()).unwrap().is_clean());
        let truncated = load_ledger(&cut, scheme()).unwrap();
        assert_eq!(truncated.height(), 4);
        assert_eq!(
            verify_against_head(&truncated, &receipt).failed_at(),
            Some((5, FailureKind::Truncated))
        );
        assert!(verify_against_head(&l, &receipt).is_clean());
    }

    #[test]
    fn tamper_rejects_out_of_range_offsets() {
        let bytes = encode_snapshot(&chain_of(1));
        let spec = MutationSpec::single(Mutation::XorByte {
            offset: bytes.len(),
            mask: 1,
        });
        assert!(matches!(
            tamper(&bytes, &spec, scheme()),
            Err(TamperError::OutOfRange { .. })
        ));
    }

    #[test]
    fn snapshot_roundtrip_preserves_blocks() {
        let l = chain_of(6);
        let bytes = encode_snapshot(&l);
        let back = load_ledger(&bytes, scheme()).unwrap();
        assert_eq!(back.blocks(), l.blocks());
        assert_eq!(back.trust().authors, l.trust().authors);
        assert_eq!(encode_snapshot(&back), bytes);
        let sidecar = sidecar_jsonl(&l);
        assert_eq!(sidecar.lines().count(), 6);
    }

    #[test]
    fn overwriting_a_payload_in_snapshot_bytes_is_flagged() {
        let l = chain_of(6);
        let bytes = encode_snapshot(&l);
        let loc = snapshot::locate_entry(&bytes, scheme(), 5).unwrap();
        assert_eq!(&bytes[loc.payload.clone()], b"payload-5");
        let spec = MutationSpec::single(Mutation::Overwrite {
            offset: loc.payload.start,
            bytes: b"PAYLOAD".to_vec(),
        });
        let bad = tamper(&bytes, &spec, scheme()).unwrap();
        let report = verify_snapshot(&bad, scheme()).unwrap();
        assert_eq!(report.failed_at(), Some((loc.block_height, FailureKind::MerkleMismatch)));
    }

    #[test]
    fn crash_during_append_leaves_no_partial_block() {
        for point in [CrashPoint::AfterValidation, CrashPoint::BeforePublish] {
            let mut l = chain_of(2);
            let before = l.blocks().to_vec();
            let batch = entries(&l, 3, 99);
            let ids: Vec<u64> = batch.iter().map(|e| e.entry_id).collect();
            let digest = l.next_header(&batch, 99).digest();
            let votes = sign_votes(l.trust(), &digest, 4);
            l.arm_crash(point);
            assert_eq!(
                l.append_entries(batch.clone(), 99, votes.clone()).unwrap_err(),
                LedgerError::Crashed(point)
            );
            assert_eq!(l.blocks(), &before[..]);
            assert!(ids.iter().all(|id| l.entry(*id).is_none()));
            l.append_entries(batch, 99, votes).unwrap();
            assert!(ids.iter().all(|id| l.entry(*id).is_some()));
        }
    }

    #[test]
    fn identical_inputs_give_identical_blocks() {
        let a = encode_snapshot(&chain_of(4));
        let b = encode_snapshot(&chain_of(4));
        assert_eq!(a, b);
    }

    #[test]
    fn vote_order_does_not_change_block_bytes() {
        let mut a = ledger(4);
        let mut b = ledger(4);
        let batch = entries(&a, 1, 5);
        let digest = a.next_header(&batch, 5).digest();
        let votes = sign_votes(a.trust(), &digest, 4);
        let mut reversed = votes.clone();
        reversed.reverse();
        a.append_entries(batch.clone(), 5, votes).unwrap();
        b.append_entries(batch, 5, reversed).unwrap();
        assert_eq!(encode_snapshot(&a), encode_snapshot(&b));
    }

    #[test]
    fn committed_blocks_cross_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Block>();
        assert_send_sync::<Ledger>();
        let l = Arc::new(chain_of(8));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let l = Arc::clone(&l);
                std::thread::spawn(move || verify_chain(&l).is_clean())
            })
            .collect();
        assert!(handles.into_iter().all(|h| h.join().unwrap()));
    }

    proptest! {
        #[test]
        fn entry_encoding_roundtrips(
            id in any::<u64>(),
            kind in 1u8..=4,
            payload in proptest::collection::vec(any::<u8>(), 0..64),
            author in "[a-z]{0,12}",
            ts in any::<u64>(),
            sig in proptest::collection::vec(any::<u8>(), 0..40),
        ) {
            let entry = LedgerEntry {
                entry_id: id,
                kind: EntryKind::from_tag(kind).unwrap(),
                payload,
                author,
                timestamp: ts,
                signature: crate::crypto::Signature(sig),
            };
            let bytes = entry.to_canonical_bytes();
            prop_assert_eq!(LedgerEntry::from_canonical_bytes(&bytes).unwrap(), entry);
        }
    }
}
