//! Binary Merkle tree over entry leaf hashes.
//!
//! Leaves are `H(0x00 || entry)`, interior nodes `H(0x01 || left || right)`.
//! An odd node at any level is paired with itself, so every leaf of an
//! `n`-leaf tree has exactly `ceil(log2 n)` siblings. Entry ids are
//! contiguous and strictly increasing, which rules out the duplicated-leaf
//! ambiguity this padding would otherwise allow.

use serde::{Deserialize, Serialize};

use crate::crypto::{sha256_tagged, Digest32};

pub fn node_hash(left: &Digest32, right: &Digest32) -> Digest32 {
    sha256_tagged(&[0x01], &[left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Digest32]) -> Vec<Digest32> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => node_hash(l, r),
            [l] => node_hash(l, l),
            _ => unreachable!(),
        })
        .collect()
}

/// Root of the tree; the zero digest for an empty leaf set.
pub fn merkle_root(leaves: &[Digest32]) -> Digest32 {
    if leaves.is_empty() {
        return Digest32::ZERO;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

/// Sibling path for `index`, leaf level first. `None` if out of range.
pub fn merkle_path(leaves: &[Digest32], index: usize) -> Option<Vec<Digest32>> {
    if index >= leaves.len() {
        return None;
    }
    let mut path = Vec::new();
    let mut level = leaves.to_vec();
    let mut idx = index;
    while level.len() > 1 {
        let sibling = if idx.is_multiple_of(2) {
            *level.get(idx + 1).unwrap_or(&level[idx])
        } else {
            level[idx - 1]
        };
        path.push(sibling);
        level = next_level(&level);
        idx /= 2;
    }
    Some(path)
}

pub fn root_from_path(leaf: Digest32, index: usize, path: &[Digest32]) -> Digest32 {
    let mut acc = leaf;
    let mut idx = index;
    for sibling in path {
        acc = if idx.is_multiple_of(2) {
            node_hash(&acc, sibling)
        } else {
            node_hash(sibling, &acc)
        };
        idx /= 2;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: usize,
    pub sibling_hashes: Vec<Digest32>,
    pub block_height: u64,
}

impl InclusionProof {
    /// A well-formed proof cannot address a leaf beyond its own depth.
    pub fn is_well_formed(&self) -> bool {
        let depth = self.sibling_hashes.len();
        depth < usize::BITS as usize && self.leaf_index < (1usize << depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;

    fn leaves(n: usize) -> Vec<Digest32> {
        (0..n).map(|i| sha256(&[i as u8])).collect()
    }

    #[test]
    fn single_leaf_root_is_the_leaf() {
        let l = leaves(1);
        assert_eq!(merkle_root(&l), l[0]);
        assert!(merkle_path(&l, 0).unwrap().is_empty());
    }

    #[test]
    fn four_leaf_tree_by_hand() {
        let l = leaves(4);
        let n01 = node_hash(&l[0], &l[1]);
        let n23 = node_hash(&l[2], &l[3]);
        let root = node_hash(&n01, &n23);
        assert_eq!(merkle_root(&l), root);
        let path = merkle_path(&l, 2).unwrap();
        assert_eq!(path, vec![l[3], n01]);
        assert_eq!(root_from_path(l[2], 2, &path), root);
    }

    #[test]
    fn three_leaf_tree_pairs_odd_node_with_itself() {
        let l = leaves(3);
        let n01 = node_hash(&l[0], &l[1]);
        let n22 = node_hash(&l[2], &l[2]);
        assert_eq!(merkle_root(&l), node_hash(&n01, &n22));
        let path = merkle_path(&l, 2).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(root_from_path(l[2], 2, &path), merkle_root(&l));
    }

    #[test]
    fn path_length_is_ceil_log2() {
        for n in 2..40usize {
            let expected = (n as f64).log2().ceil() as usize;
            let l = leaves(n);
            for i in 0..n {
                let p = merkle_path(&l, i).unwrap();
                assert_eq!(p.len(), expected, "n={n} i={i}");
                assert_eq!(root_from_path(l[i], i, &p), merkle_root(&l));
            }
        }
    }

    #[test]
    fn out_of_range_index_has_no_path() {
        assert!(merkle_path(&leaves(3), 3).is_none());
    }
}
