//! Exact interventional Shapley values for tree ensembles.
//!
//! The value of a coalition `S` is the mean margin over a background set
//! when features in `S` come from the explained row `x` and the rest from
//! the background row. [`shapley_by_enumeration`] evaluates that definition
//! literally over all `2^d` coalitions. [`shapley_exact`] gets the same
//! numbers from one walk per (tree, background row): a leaf reachable by
//! the hybrid row is reached exactly when `S` contains the features where
//! the path followed `x` (set `A`) and excludes those where it followed the
//! background row (set `B`), and the Shapley value of that indicator game
//! has a closed form in `|A|` and `|B|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{sha256_tagged, Digest32};
use crate::detector::{Dataset, Node, TreeEnsemble};
use crate::rng;

pub const MAX_FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error("{0} features exceeds the exact-enumeration bound of 16")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("row has {found} features, model expects {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("value {0} does not fit the fixed-point range")]
    Overflow(f64),
}

fn digest_rows<'a>(tag: &[u8], rows: impl IntoIterator<Item = &'a [f64]>) -> Digest32 {
    let mut enc = Encoder::new();
    for row in rows {
        enc.u32(row.len() as u32);
        for v in row {
            enc.f64(*v);
        }
    }
    sha256_tagged(tag, &[&enc.finish()])
}

/// Digest of a feature row (IEEE-754 bits, big-endian).
pub fn instance_digest(x: &[f64]) -> Digest32 {
    digest_rows(b"ledgerguard/instance/v1", [x])
}

/// Reference rows for the interventional value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub rows: Vec<Vec<f64>>,
}

impl Background {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// `size` distinct rows drawn from `data` with a seeded shuffle.
    pub fn sample(data: &Dataset, size: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut r = rng::stream(seed, 0xbac6);
        let k = size.min(idx.len());
        for i in 0..k {
            let j = rng::range_inclusive(&mut r, i as u64, (idx.len() - 1) as u64) as usize;
            idx.swap(i, j);
        }
        Self {
            rows: idx[..k].iter().map(|&i| data.rows[i].clone()).collect(),
        }
    }

    /// Pins the exact background used, so a recorded explanation can be
    /// recomputed and compared.
    pub fn digest(&self) -> Digest32 {
        digest_rows(b"ledgerguard/background/v1", self.rows.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Per-feature contributions on the margin (log-odds) scale.
    pub phi: Vec<f64>,
    /// Mean margin over the background.
    pub base_value: f64,
    pub background_ref: Digest32,
    pub instance_ref: Digest32,
}

impl Explanation {
    /// `base_value + Σ phi`, which equals the model margin at the instance.
    pub fn reconstructed_margin(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>()
    }
}

fn check(model: &TreeEnsemble, x: &[f64], background: &Background) -> Result<(), ExplainError> {
    if model.n_features > MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(model.n_features));
    }
    if x.len() != model.n_features {
        return Err(ExplainError::ArityMismatch {
            expected: model.n_features,
            found: x.len(),
        });
    }
    if background.rows.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(bad) = background.rows.iter().find(|r| r.len() != model.n_features) {
        return Err(ExplainError::ArityMismatch {
            expected: model.n_features,
            found: bad.len(),
        });
    }
    Ok(())
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Shapley values by enumerating every coalition. `O(2^d · |bg| · trees)`;
/// the reference the fast path is checked against.
pub fn shapley_by_enumeration(
    model: &TreeEnsemble,
    x: &[f64],
    background: &Background,
) -> Result<Explanation, ExplainError> {
    check(model, x, background)?;
    let d = model.n_features;
    let n_bg = background.rows.len() as f64;
    let value: Vec<f64> = (0..1u32 << d)
        .into_par_iter()
        .map(|mask| {
            let mut hybrid = vec![0.0; d];
            let mut total = 0.0;
            for z in &background.rows {
                for f in 0..d {
                    hybrid[f] = if mask >> f & 1 == 1 { x[f] } else { z[f] };
                }
                total += model.margin_unchecked(&hybrid);
            }
            total / n_bg
        })
        .collect();
    let fact = factorials(d);
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..1u32 << d {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                let w = fact[s] * fact[d - s - 1] / fact[d];
                *p += w * (value[(mask | bit) as usize] - value[mask as usize]);
            }
        }
    }
    Ok(Explanation {
        phi,
        base_value: value[0],
        background_ref: background.digest(),
        instance_ref: instance_digest(x),
    })
}

/// Shapley values by per-(tree, background row) path walks. Exact, and
/// equal to [`shapley_by_enumeration`] up to float rounding.
pub fn shapley_exact(
    model: &TreeEnsemble,
    x: &[f64],
    background: &Background,
) -> Result<Explanation, ExplainError> {
    check(model, x, background)?;
    let d = model.n_features;
    let fact = factorials(d);
    let n_bg = background.rows.len() as f64;
    let mut phi = vec![0.0; d];
    let mut base = 0.0;
    for z in &background.rows {
        for tree in &model.trees {
            walk(&tree.nodes, 0, x, z, 0, 0, &fact, &mut phi);
            base += tree.leaf_value(z);
        }
    }
    let scale = model.learning_rate / n_bg;
    phi.iter_mut().for_each(|p| *p *= scale);
    Ok(Explanation {
        phi,
        base_value: model.base_score + base * scale,
        background_ref: background.digest(),
        instance_ref: instance_digest(x),
    })
}

/// `a`: features where the path took `x`'s branch; `b`: where it took `z`'s.
#[allow(clippy::too_many_arguments)]
fn walk(
    nodes: &[Node],
    i: usize,
    x: &[f64],
    z: &[f64],
    a: u32,
    b: u32,
    fact: &[f64],
    phi: &mut [f64],
) {
    match nodes[i] {
        Node::Leaf { value } => {
            let (na, nb) = (a.count_ones() as usize, b.count_ones() as usize);
            if na + nb == 0 {
                return;
            }
            let total = fact[na + nb];
            if na > 0 {
                let w = value * fact[na - 1] * fact[nb] / total;
                for f in bits(a) {
                    phi[f] += w;
                }
            }
            if nb > 0 {
                let w = value * fact[na] * fact[nb - 1] / total;
                for f in bits(b) {
                    phi[f] -= w;
                }
            }
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let bit = 1u32 << feature;
            let go = |v: f64| if v < threshold { left } else { right };
            let (cx, cz) = (go(x[feature]), go(z[feature]));
            if cx == cz || a & bit != 0 {
                walk(nodes, cx, x, z, a, b, fact, phi);
            } else if b & bit != 0 {
                walk(nodes, cz, x, z, a, b, fact, phi);
            } else {
                walk(nodes, cx, x, z, a | bit, b, fact, phi);
                walk(nodes, cz, x, z, a, b | bit, fact, phi);
            }
        }
    }
}

fn bits(mut m: u32) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let f = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(f)
        }
    })
}

/// The `k` largest contributions by magnitude; ties go to the lower index.
pub fn top_k(explanation: &Explanation, k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..explanation.phi.len()).collect();
    idx.sort_by(|&a, &b| {
        explanation.phi[b]
            .abs()
            .total_cmp(&explanation.phi[a].abs())
            .then(a.cmp(&b))
    });
    idx.into_iter()
        .take(k)
        .map(|i| (i, explanation.phi[i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureContribution {
    pub feature_id: u16,
    /// Micro-units (1e-6) of margin.
    pub contribution: i64,
}

/// What goes on-chain: integers only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointExplanation {
    pub score_bps: u16,
    pub base_value: i64,
    pub top_features: Vec<FeatureContribution>,
}

pub const TOP_FEATURES: usize = 5;
const MICRO_LIMIT: f64 = 2_147_483_648.0;

/// Rounds half away from zero.
pub fn to_micro(v: f64) -> Result<i64, ExplainError> {
    let m = (v * 1e6).round();
    if !m.is_finite() || m.abs() >= MICRO_LIMIT {
        return Err(ExplainError::Overflow(v));
    }
    Ok(m as i64)
}

pub fn from_micro(m: i64) -> f64 {
    m as f64 / 1e6
}

pub fn to_bps(probability: f64) -> u16 {
    (probability.clamp(0.0, 1.0) * 10_000.0).round() as u16
}

/// Fixed-point form of the top five contributions, the base value and the
/// score. Contributions are re-sorted after rounding so the on-chain order
/// (descending magnitude, then feature id) holds for the stored integers.
pub fn encode_fixed_point(
    explanation: &Explanation,
    score: f64,
) -> Result<FixedPointExplanation, ExplainError> {
    let k = TOP_FEATURES.min(explanation.phi.len());
    let mut top = top_k(explanation, k)
        .into_iter()
        .map(|(i, v)| {
            Ok(FeatureContribution {
                feature_id: i as u16,
                contribution: to_micro(v)?,
            })
        })
        .collect::<Result<Vec<_>, ExplainError>>()?;
    top.sort_by(|a, b| {
        b.contribution
            .unsigned_abs()
            .cmp(&a.contribution.unsigned_abs())
            .then(a.feature_id.cmp(&b.feature_id))
    });
    Ok(FixedPointExplanation {
        score_bps: to_bps(score),
        base_value: to_micro(explanation.base_value)?,
        top_features: top,
    })
}

/// `(feature_id, contribution)` pairs and base value back on the real scale.
pub fn decode_fixed_point(e: &FixedPointExplanation) -> (Vec<(usize, f64)>, f64) {
    (
        e.top_features
            .iter()
            .map(|c| (usize::from(c.feature_id), from_micro(c.contribution)))
            .collect(),
        from_micro(e.base_value),
    )
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;

    use super::*;
    use crate::detector::{train, TrainParams, Tree};

    fn stump(feature: usize, threshold: f64, lo: f64, hi: f64, d: usize, lr: f64) -> TreeEnsemble {
        TreeEnsemble {
            learning_rate: lr,
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature,
                        threshold,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { value: lo },
                    Node::Leaf { value: hi },
                ],
            }],
            ..TreeEnsemble::constant(d, 0.0)
        }
    }

    /// Random model over `d` features with `trees` trees of depth ≤ 3.
    fn random_model(d: usize, trees: usize, seed: u64) -> TreeEnsemble {
        let mut r = rng::stream(seed, 77);
        let mut out = Vec::new();
        for _ in 0..trees {
            let mut nodes = Vec::new();
            fn grow(nodes: &mut Vec<Node>, r: &mut rand_pcg::Pcg64, d: usize, depth: usize) -> usize {
                let i = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                if depth == 0 || rng::unit(r) < 0.2 {
                    nodes[i] = Node::Leaf {
                        value: rng::normal(r),
                    };
                } else {
                    let feature = rng::range_inclusive(r, 0, d as u64 - 1) as usize;
                    let threshold = rng::unit(r);
                    let left = grow(nodes, r, d, depth - 1);
                    let right = grow(nodes, r, d, depth - 1);
                    nodes[i] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                }
                i
            }
            grow(&mut nodes, &mut r, d, 3);
            out.push(Tree { nodes });
        }
        TreeEnsemble {
            base_score: rng::normal(&mut r),
            learning_rate: 0.3,
            trees: out,
            ..TreeEnsemble::constant(d, 0.0)
        }
    }

    fn random_rows(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, 78);
        (0..n).map(|_| (0..d).map(|_| rng::unit(&mut r)).collect()).collect()
    }

    /// Monte Carlo Shapley from random permutations, with antithetic pairs
    /// and memoized coalition values.
    fn permutation_estimate(model: &TreeEnsemble, x: &[f64], bg: &Background, perms: usize, seed: u64) -> Vec<f64> {
        let d = x.len();
        let mut cache: HashMap<u32, f64> = HashMap::new();
        let mut v = |mask: u32| -> f64 {
            *cache.entry(mask).or_insert_with(|| {
                bg.rows
                    .iter()
                    .map(|z| {
                        let h: Vec<f64> = (0..d).map(|f| if mask >> f & 1 == 1 { x[f] } else { z[f] }).collect();
                        model.margin(&h).unwrap()
                    })
                    .sum::<f64>()
                    / bg.rows.len() as f64
            })
        };
        let mut r = rng::stream(seed, 79);
        let mut phi = vec![0.0; d];
        for _ in 0..perms / 2 {
            let mut order: Vec<usize> = (0..d).collect();
            for i in (1..d).rev() {
                let j = rng::range_inclusive(&mut r, 0, i as u64) as usize;
                order.swap(i, j);
            }
            for ord in [order.clone(), order.into_iter().rev().collect()] {
                let mut mask = 0u32;
                let mut prev = v(0);
                for f in ord {
                    mask |= 1 << f;
                    let cur = v(mask);
                    phi[f] += cur - prev;
                    prev = cur;
                }
            }
        }
        let n = (perms / 2 * 2) as f64;
        phi.iter().map(|p| p / n).collect()
    }

    #[test]
    fn constant_model_gives_zero_attributions() {
        let m = TreeEnsemble::constant(4, 0.7);
        let bg = Background::new(random_rows(4, 5, 1));
        let e = shapley_exact(&m, &[0.1, 0.2, 0.3, 0.4], &bg).unwrap();
        assert!(e.phi.iter().all(|p| *p == 0.0));
        assert_eq!(e.base_value, 0.7);
    }

    #[test]
    fn stump_attribution_matches_hand_enumeration() {
        // x is above the threshold on feature 3, every background row below.
        let m = stump(3, 0.5, -0.4, 0.9, 6, 0.1);
        let bg = Background::new((0..4).map(|i| vec![0.3, 0.6, 0.1, 0.1 * i as f64, 0.9, 0.2]).collect());
        let x = [0.0, 0.0, 0.0, 0.8, 0.0, 0.0];
        for e in [shapley_exact(&m, &x, &bg).unwrap(), shapley_by_enumeration(&m, &x, &bg).unwrap()] {
            for (i, p) in e.phi.iter().enumerate() {
                let expected = if i == 3 { 0.1 * (0.9 - -0.4) } else { 0.0 };
                assert!((p - expected).abs() < 1e-12, "phi[{i}] = {p}");
            }
            assert!((e.base_value - 0.1 * -0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_path_matches_enumeration() {
        for seed in 0..30 {
            let d = 3 + (seed as usize % 6);
            let m = random_model(d, 12, seed);
            let bg = Background::new(random_rows(d, 7, seed + 100));
            let x = &random_rows(d, 1, seed + 200)[0];
            let a = shapley_exact(&m, x, &bg).unwrap();
            let b = shapley_by_enumeration(&m, x, &bg).unwrap();
            assert!((a.base_value - b.base_value).abs() < 1e-9);
            for (p, q) in a.phi.iter().zip(&b.phi) {
                assert!((p - q).abs() < 1e-9, "seed {seed}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn permutation_sampling_agrees_with_exact() {
        for seed in 0..20 {
            let d = 4 + seed as usize % 4;
            let m = random_model(d, 8, seed + 500);
            let bg = Background::new(random_rows(d, 10, seed + 600));
            let x = &random_rows(d, 1, seed + 700)[0];
            let exact = shapley_exact(&m, x, &bg).unwrap();
            let est = permutation_estimate(&m, x, &bg, 10_000, seed);
            for (p, q) in exact.phi.iter().zip(&est) {
                assert!((p - q).abs() < 0.01, "seed {seed}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn unused_features_get_nothing_and_symmetric_features_share() {
        // f(x) = [x0 ≥ .5] + [x1 ≥ .5]; feature 2 never split on.
        let mut m = stump(0, 0.5, 0.0, 1.0, 3, 1.0);
        m.trees.push(stump(1, 0.5, 0.0, 1.0, 3, 1.0).trees.remove(0));
        let bg = Background::new(vec![vec![0.2, 0.2, 0.9], vec![0.1, 0.1, 0.0]]);
        let e = shapley_exact(&m, &[0.8, 0.8, 0.4], &bg).unwrap();
        assert_eq!(e.phi[2], 0.0);
        assert!((e.phi[0] - e.phi[1]).abs() < 1e-12);
        assert!((e.phi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let m = TreeEnsemble::constant(17, 0.0);
        let bg = Background::new(vec![vec![0.0; 17]]);
        assert_eq!(shapley_exact(&m, &[0.0; 17], &bg), Err(ExplainError::TooManyFeatures(17)));
        let m = TreeEnsemble::constant(2, 0.0);
        assert_eq!(
            shapley_exact(&m, &[0.0; 2], &Background::new(vec![])),
            Err(ExplainError::EmptyBackground)
        );
    }

    #[test]
    fn top_k_orders_by_magnitude_then_index() {
        let e = Explanation {
            phi: vec![0.3, -0.5, 0.1, 0.0, 0.3, 0.05],
            base_value: 0.0,
            background_ref: Digest32::ZERO,
            instance_ref: Digest32::ZERO,
        };
        let top = top_k(&e, 5);
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 0, 4, 2, 5]);
        let zeros = Explanation { phi: vec![0.0; 8], ..e.clone() };
        assert_eq!(top_k(&zeros, 5).iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        let mut all: Vec<usize> = top_k(&e, 6).iter().map(|t| t.0).collect();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_point_rounding() {
        assert_eq!(to_bps(0.85), 8500);
        assert_eq!(to_micro(0.1234567).unwrap(), 123457);
        assert_eq!(to_micro(-0.0000004).unwrap(), 0);
        assert_eq!(to_micro(-0.1234567).unwrap(), -123457);
        assert!(matches!(to_micro(3000.0), Err(ExplainError::Overflow(_))));
    }

    #[test]
    fn explanations_are_deterministic_and_pinned() {
        let mut ds = Dataset::new((0..5).map(|i| format!("f{i}")).collect());
        for (i, row) in random_rows(5, 200, 3).into_iter().enumerate() {
            let y = row[0] + row[1] > 1.1 || i % 17 == 0;
            ds.push(row, y);
        }
        let m = train(&ds, &TrainParams { num_trees: 20, ..TrainParams::default() }, 0).unwrap();
        let bg = Background::sample(&ds, 50, 9);
        assert_eq!(bg.rows.len(), 50);
        assert_eq!(bg.digest(), Background::sample(&ds, 50, 9).digest());
        assert_ne!(bg.digest(), Background::sample(&ds, 50, 10).digest());
        let x = &ds.rows[3];
        let a = shapley_exact(&m, x, &bg).unwrap();
        assert_eq!(a, shapley_exact(&m, x, &bg).unwrap());
        assert_eq!(a.instance_ref, instance_digest(x));
        assert!((a.reconstructed_margin() - m.margin(x).unwrap()).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn efficiency_holds(seed in any::<u64>(), d in 2usize..12) {
            let m = random_model(d, 10, seed);
            let bg = Background::new(random_rows(d, 20, seed ^ 1));
            let x = &random_rows(d, 1, seed ^ 2)[0];
            let e = shapley_exact(&m, x, &bg).unwrap();
            prop_assert!((e.reconstructed_margin() - m.margin(x).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn fixed_point_roundtrip_within_half_micro(
            phi in proptest::collection::vec(-100.0f64..100.0, 5..12),
            base in -50.0f64..50.0,
            score in 0.0f64..=1.0,
        ) {
            let e = Explanation { phi, base_value: base, background_ref: Digest32::ZERO, instance_ref: Digest32::ZERO };
            let fp = encode_fixed_point(&e, score).unwrap();
            prop_assert_eq!(fp.top_features.len(), 5);
            let (top, b) = decode_fixed_point(&fp);
            prop_assert!((b - base).abs() <= 5e-7 + 1e-12);
            for (i, v) in top {
                prop_assert!((v - e.phi[i]).abs() <= 5e-7 + 1e-12);
            }
            let mags: Vec<u64> = fp.top_features.iter().map(|c| c.contribution.unsigned_abs()).collect();
            prop_assert!(mags.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
