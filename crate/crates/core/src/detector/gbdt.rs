//! Gradient-boosted trees for weighted logistic loss.
//!
//! Splits are exact greedy on raw feature values, grown level by level with
//! Newton leaf weights `-G / (H + λ)`. Each level makes one pass per feature
//! over row indices pre-sorted by that feature, so the cost of a tree is
//! `O(depth · features · rows)`.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::DetectorError;
use crate::crypto::{sha256, Digest32};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum rows on each side of a split.
    pub min_leaf: usize,
    /// Weight of each positive row; `None` means `negatives / positives`.
    pub positive_class_weight: Option<f64>,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Fraction of rows sampled (without replacement) per tree.
    pub subsample: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 5,
            positive_class_weight: None,
            lambda: 1.0,
            subsample: 1.0,
        }
    }
}

impl TrainParams {
    fn validate(&self) -> Result<(), DetectorError> {
        let ok = self.num_trees > 0
            && self.max_depth > 0
            && self.learning_rate > 0.0
            && self.min_leaf > 0
            && self.positive_class_weight.is_none_or(|w| w > 0.0)
            && self.lambda >= 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(DetectorError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Flat tree node. Children are indices into the owning tree's node list;
/// `x[feature] < threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Raw leaf value reached by `x`.
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// `margin(x) = base_score + learning_rate · Σ tree.leaf_value(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub params: TrainParams,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TreeEnsemble {
    /// No trees: every prediction is `sigmoid(base_score)`.
    pub fn constant(n_features: usize, base_score: f64) -> Self {
        Self {
            n_features,
            base_score,
            learning_rate: 1.0,
            trees: Vec::new(),
            params: TrainParams::default(),
        }
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64, DetectorError> {
        if x.len() != self.n_features {
            return Err(DetectorError::ArityMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.margin_unchecked(x))
    }

    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, DetectorError> {
        self.margin(x).map(sigmoid)
    }

    /// Stable JSON: fixed field order, shortest round-trip float formatting.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// SHA-256 of the canonical JSON bytes; this is what gets attested.
    pub fn model_hash(&self) -> Digest32 {
        sha256(self.to_canonical_json().as_bytes())
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    used[*feature] = true;
                }
            }
        }
        used
    }
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Training-time node waiting to be split or finalized.
struct Open {
    node: usize,
    grad: f64,
    hess: f64,
    count: usize,
}

/// Trains on all rows of `data`.
pub fn train(data: &Dataset, params: &TrainParams, seed: u64) -> Result<TreeEnsemble, DetectorError> {
    let rows: Vec<usize> = (0..data.len()).collect();
    train_rows(data, &rows, params, seed)
}

/// Trains on the given rows of `data`. Deterministic in `(rows, params, seed)`.
pub fn train_rows(
    data: &Dataset,
    rows: &[usize],
    params: &TrainParams,
    seed: u64,
) -> Result<TreeEnsemble, DetectorError> {
    params.validate()?;
    let d = data.n_features();
    let n = rows.len();
    let y: Vec<bool> = rows.iter().map(|&r| data.labels[r]).collect();
    let pos = y.iter().filter(|l| **l).count();
    if pos == 0 || pos == n {
        return Err(DetectorError::DegenerateDataset);
    }
    let neg = n - pos;
    let w_pos = params
        .positive_class_weight
        .unwrap_or(neg as f64 / pos as f64);
    let weights: Vec<f64> = y.iter().map(|&l| if l { w_pos } else { 1.0 }).collect();
    let base_score = (w_pos * pos as f64 / neg as f64).ln();

    // Column-major copy and per-feature sort orders, built once.
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|f| rows.iter().map(|&r| data.rows[r][f]).collect())
        .collect();
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut sampler = rng::stream(seed, 0x7ee5);
    let mut trees = Vec::with_capacity(params.num_trees);
    let sample_size = ((n as f64 * params.subsample).round() as usize).clamp(1, n);

    for _ in 0..params.num_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            let t = if y[i] { 1.0 } else { 0.0 };
            grad[i] = weights[i] * (p - t);
            hess[i] = (weights[i] * p * (1.0 - p)).max(1e-16);
        }
        let in_sample = sample_rows(n, sample_size, &mut sampler);
        let tree = grow_tree(&cols, &sorted, &grad, &hess, &in_sample, params);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += params.learning_rate * leaf_value_col(&tree, &cols, i);
        }
        trees.push(tree);
    }

    Ok(TreeEnsemble {
        n_features: d,
        base_score,
        learning_rate: params.learning_rate,
        trees,
        params: params.clone(),
    })
}

fn leaf_value_col(tree: &Tree, cols: &[Vec<f64>], row: usize) -> f64 {
    let mut i = 0;
    loop {
        match tree.nodes[i] {
            Node::Leaf { value } => return value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if cols[feature][row] < threshold { left } else { right },
        }
    }
}

fn sample_rows(n: usize, k: usize, rng: &mut rand_pcg::Pcg64) -> Vec<bool> {
    if k == n {
        return vec![true; n];
    }
    // Partial Fisher-Yates.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng::range_inclusive(rng, i as u64, (n - 1) as u64) as usize;
        idx.swap(i, j);
    }
    let mut mask = vec![false; n];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

const NONE: u32 = u32::MAX;

fn grow_tree(
    cols: &[Vec<f64>],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    params: &TrainParams,
) -> Tree {
    let n = grad.len();
    let lambda = params.lambda;
    let score = |g: f64, h: f64| g * g / (h + lambda);

    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // Position of each row's node within the current level, or NONE.
    let mut slot: Vec<u32> = (0..n).map(|i| if in_sample[i] { 0 } else { NONE }).collect();
    let (g0, h0, c0) = (0..n).filter(|&i| in_sample[i]).fold((0.0, 0.0, 0), |(g, h, c), i| {
        (g + grad[i], h + hess[i], c + 1)
    });
    let mut level = vec![Open {
        node: 0,
        grad: g0,
        hess: h0,
        count: c0,
    }];

    for depth in 0..=params.max_depth {
        if level.is_empty() {
            break;
        }
        let mut best: Vec<Option<Split>> = vec![None; level.len()];
        if depth < params.max_depth {
            let k = level.len();
            for (f, order) in sorted.iter().enumerate() {
                let col = &cols[f];
                let mut gl = vec![0.0; k];
                let mut hl = vec![0.0; k];
                let mut cl = vec![0usize; k];
                let mut last = vec![f64::NAN; k];
                for &r in order {
                    let r = r as usize;
                    let s = slot[r];
                    if s == NONE {
                        continue;
                    }
                    let s = s as usize;
                    let v = col[r];
                    let open = &level[s];
                    if cl[s] >= params.min_leaf && v > last[s] && open.count - cl[s] >= params.min_leaf {
                        let (gr, hr) = (open.grad - gl[s], open.hess - hl[s]);
                        let gain = score(gl[s], hl[s]) + score(gr, hr) - score(open.grad, open.hess);
                        if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                            let mut threshold = 0.5 * (last[s] + v);
                            if threshold <= last[s] {
                                threshold = v;
                            }
                            best[s] = Some(Split {
                                feature: f,
                                threshold,
                                gain,
                            });
                        }
                    }
                    gl[s] += grad[r];
                    hl[s] += hess[r];
                    cl[s] += 1;
                    last[s] = v;
                }
            }
        }

        let mut next = Vec::new();
        // New slot for (old slot, went right).
        let mut remap: Vec<[u32; 2]> = vec![[NONE, NONE]; level.len()];
        for (s, open) in level.iter().enumerate() {
            match best[s] {
                None => {
                    nodes[open.node] = Node::Leaf {
                        value: -open.grad / (open.hess + lambda),
                    };
                }
                Some(split) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[open.node] = Node::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right: left + 1,
                    };
                    remap[s] = [next.len() as u32, next.len() as u32 + 1];
                    next.push(Open {
                        node: left,
                        grad: 0.0,
                        hess: 0.0,
                        count: 0,
                    });
                    next.push(Open {
                        node: left + 1,
                        grad: 0.0,
                        hess: 0.0,
                        count: 0,
                    });
                }
            }
        }
        for r in 0..n {
            let s = slot[r];
            if s == NONE {
                continue;
            }
            let s = s as usize;
            slot[r] = match best[s] {
                None => NONE,
                Some(split) => {
                    let side = usize::from(cols[split.feature][r] >= split.threshold);
                    let ns = remap[s][side];
                    let o = &mut next[ns as usize];
                    o.grad += grad[r];
                    o.hess += hess[r];
                    o.count += 1;
                    ns
                }
            };
        }
        level = next;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let mut ds = Dataset::new(vec!["a".into(), "b".into()]);
        for i in 0..20 {
            let a = i as f64;
            ds.push(vec![a, (i % 3) as f64], i >= 14);
        }
        ds
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let ds = toy();
        let params = TrainParams {
            num_trees: 20,
            min_leaf: 1,
            ..TrainParams::default()
        };
        let m = train(&ds, &params, 1).unwrap();
        for (x, &y) in ds.rows.iter().zip(&ds.labels) {
            assert_eq!(m.predict(x).unwrap() >= 0.5, y);
        }
        match m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 13.5);
            }
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy();
        let p = TrainParams {
            subsample: 0.7,
            min_leaf: 1,
            ..TrainParams::default()
        };
        let a = train(&ds, &p, 3).unwrap();
        let b = train(&ds, &p, 3).unwrap();
        assert_eq!(a.model_hash(), b.model_hash());
        let c = train(&ds, &p, 4).unwrap();
        assert_ne!(a.model_hash(), c.model_hash());
    }

    #[test]
    fn single_class_is_degenerate() {
        let mut ds = toy();
        ds.labels.iter_mut().for_each(|l| *l = false);
        assert!(matches!(
            train(&ds, &TrainParams::default(), 0),
            Err(DetectorError::DegenerateDataset)
        ));
    }

    #[test]
    fn empty_ensemble_predicts_half() {
        let m = TreeEnsemble::constant(3, 0.0);
        assert_eq!(m.predict(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(
            m.predict(&[1.0]),
            Err(DetectorError::ArityMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn stump_is_monotone_in_its_feature() {
        let m = TreeEnsemble {
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature: 0,
                        threshold: 100.0,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { value: -1.0 },
                    Node::Leaf { value: 1.0 },
                ],
            }],
            ..TreeEnsemble::constant(1, 0.0)
        };
        assert!(m.predict(&[150.0]).unwrap() > m.predict(&[50.0]).unwrap());
    }

    #[test]
    fn json_roundtrip_keeps_hash() {
        let m = train(&toy(), &TrainParams { num_trees: 5, min_leaf: 1, ..TrainParams::default() }, 0).unwrap();
        let back = TreeEnsemble::from_json(&m.to_canonical_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.model_hash(), m.model_hash());
        let mut tweaked = m.clone();
        tweaked.learning_rate = 0.2;
        assert_ne!(tweaked.model_hash(), m.model_hash());
    }

    #[test]
    fn first_tree_matches_brute_force_best_stump() {
        // With max_depth 1 the root split must be the best single split over
        // every (feature, threshold) candidate; ties go to the lower index.
        let mut ds = Dataset::new(vec!["a".into(), "b".into(), "c".into()]);
        let mut r = rng::stream(11, 0);
        for _ in 0..60 {
            let row: Vec<f64> = (0..3).map(|_| (rng::unit(&mut r) * 10.0).floor()).collect();
            let label = row[1] + 0.3 * row[2] + rng::normal(&mut r) > 6.0;
            ds.push(row, label);
        }
        let p = TrainParams {
            num_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            ..TrainParams::default()
        };
        let m = train(&ds, &p, 0).unwrap();

        let n = ds.len() as f64;
        let pos = ds.positives() as f64;
        let w = (n - pos) / pos;
        let base = (w * pos / (n - pos)).ln();
        let p0 = sigmoid(base);
        let gh: Vec<(f64, f64)> = ds
            .labels
            .iter()
            .map(|&l| {
                let wi = if l { w } else { 1.0 };
                (wi * (p0 - f64::from(u8::from(l))), wi * p0 * (1.0 - p0))
            })
            .collect();
        let sc = |g: f64, h: f64| g * g / (h + 1.0);
        let (gt, ht) = gh.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let mut best = (f64::NEG_INFINITY, 0, 0.0);
        for f in 0..3 {
            let mut vals: Vec<f64> = ds.rows.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w2 in vals.windows(2) {
                let t = 0.5 * (w2[0] + w2[1]);
                let (gl, hl) = ds
                    .rows
                    .iter()
                    .zip(&gh)
                    .filter(|(r, _)| r[f] < t)
                    .fold((0.0, 0.0), |a, (_, b)| (a.0 + b.0, a.1 + b.1));
                let gain = sc(gl, hl) + sc(gt - gl, ht - hl) - sc(gt, ht);
                if gain > best.0 + 1e-12 {
                    best = (gain, f, t);
                }
            }
        }
        match m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!((feature, threshold), (best.1, best.2));
            }
            _ => panic!("expected a split"),
        }
    }
}
