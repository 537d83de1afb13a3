//! Seeded simulation of consortium quorum commit with Byzantine validators.
//!
//! Each height is a one-shot vote collection: the view leader proposes a
//! header, validators vote by signing its digest, and a node commits once it
//! holds a quorum of votes for a header that extends its own chain. If no
//! honest node commits before the view times out, leadership rotates. Honest
//! validators lock on the first header they vote for at a height and never
//! sign another.
//!
//! Message delays and drops come from a [`RoundSchedule`], so a run is a pure
//! function of `(validators, proposal, seed)`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256_tagged, Digest32, SignatureScheme};
use crate::ledger::{Block, BlockHeader, CommitVote, Ledger, LedgerEntry, LedgerError, TrustConfig};
use crate::rng;

/// Votes needed to commit among `n` validators: ⌊2n/3⌋ + 1.
pub fn quorum_size(n: usize) -> usize {
    2 * n / 3 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// As leader, sends conflicting headers to different peers. As voter,
    /// signs every header it sees.
    Equivocate,
    /// Never proposes and never votes.
    Withhold,
    /// Refuses to propose while leader; votes honestly otherwise.
    Censor,
}

/// How many votes a commit needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuorumRule {
    /// ⌊2n/3⌋ + 1.
    Standard,
    /// n − f: stays live with `f` silent validators, but two such quorums
    /// only overlap in n − 2f members.
    NMinusF(usize),
}

impl QuorumRule {
    pub fn size(self, n: usize) -> usize {
        match self {
            QuorumRule::Standard => quorum_size(n),
            QuorumRule::NMinusF(f) => n.saturating_sub(f).max(1),
        }
    }
}

/// Validator keys plus the behavior each one follows in simulation.
#[derive(Debug, Clone)]
pub struct ValidatorSet {
    pub trust: TrustConfig,
    pub behaviors: Vec<Behavior>,
}

impl ValidatorSet {
    /// Validators `validator-0..n`, with `behaviors[i]` for member `i`.
    pub fn simulated(scheme: Arc<dyn SignatureScheme>, behaviors: Vec<Behavior>) -> Self {
        let trust = TrustConfig::with_simulated_validators(scheme, behaviors.len());
        Self { trust, behaviors }
    }

    /// `n` validators, the first `f` of which follow `byzantine`.
    pub fn with_faults(scheme: Arc<dyn SignatureScheme>, n: usize, f: usize, byzantine: Behavior) -> Self {
        let behaviors = (0..n)
            .map(|i| if i < f { byzantine } else { Behavior::Honest })
            .collect();
        Self::simulated(scheme, behaviors)
    }

    pub fn n(&self) -> usize {
        self.behaviors.len()
    }

    pub fn f(&self) -> usize {
        self.behaviors.iter().filter(|b| **b != Behavior::Honest).count()
    }

    pub fn honest(&self) -> impl Iterator<Item = usize> + '_ {
        self.behaviors
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == Behavior::Honest)
            .map(|(i, _)| i)
    }
}

/// Seeded source of per-message delays (in ticks) and drop decisions.
#[derive(Debug, Clone)]
pub struct RoundSchedule {
    pub seed: u64,
    pub max_delay: u64,
    pub drop_rate: f64,
    rng: Pcg64,
}

impl RoundSchedule {
    /// Synchronous network: delays in `1..=5`, nothing dropped.
    pub fn new(seed: u64) -> Self {
        Self::with_network(seed, 5, 0.0)
    }

    pub fn with_network(seed: u64, max_delay: u64, drop_rate: f64) -> Self {
        Self {
            seed,
            max_delay: max_delay.max(1),
            drop_rate,
            rng: rng::stream(seed, 0xc0de),
        }
    }

    /// Delay for the next message, or `None` if it is dropped.
    pub fn next_delivery(&mut self) -> Option<u64> {
        let dropped = self.drop_rate > 0.0 && rng::unit(&mut self.rng) < self.drop_rate;
        let delay = rng::range_inclusive(&mut self.rng, 1, self.max_delay);
        (!dropped).then_some(delay)
    }

    /// Ticks a view waits before leadership rotates: long enough for a
    /// proposal and a vote to cross the network.
    pub fn view_timeout(&self) -> u64 {
        2 * self.max_delay + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitOutcome {
    /// `votes` hold at least a quorum of valid signatures over `header`.
    Committed {
        header: BlockHeader,
        votes: Vec<CommitVote>,
        rounds: u32,
    },
    NoCommit {
        rounds: u32,
    },
}

impl CommitOutcome {
    pub fn rounds(&self) -> u32 {
        match self {
            CommitOutcome::Committed { rounds, .. } | CommitOutcome::NoCommit { rounds } => *rounds,
        }
    }
}

/// What one height produced, including each node's own view of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundReport {
    pub outcome: CommitOutcome,
    /// Digest each node committed, if any. Byzantine nodes are `None`.
    pub node_commits: Vec<Option<Digest32>>,
}

#[derive(Debug, Clone)]
enum Payload {
    Proposal(BlockHeader),
    Vote { from: usize, digest: Digest32, vote: CommitVote },
}

#[derive(Debug, Clone)]
struct Message {
    to: usize,
    payload: Payload,
}

#[derive(Debug, Default)]
struct NodeState {
    expect_height: u64,
    expect_prev: Digest32,
    lock: Option<BlockHeader>,
    known: HashMap<Digest32, BlockHeader>,
    voted_this_view: HashSet<Digest32>,
    tallies: BTreeMap<Digest32, BTreeMap<usize, CommitVote>>,
    committed: Option<Digest32>,
}

impl NodeState {
    fn extends_head(&self, h: &BlockHeader) -> bool {
        h.height == self.expect_height && h.prev_hash == self.expect_prev
    }
}

struct Height<'a> {
    set: &'a ValidatorSet,
    quorum: usize,
    nodes: Vec<NodeState>,
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    messages: Vec<Message>,
    seq: u64,
}

impl<'a> Height<'a> {
    fn send(&mut self, now: u64, from: usize, to: usize, payload: Payload, schedule: &mut RoundSchedule) {
        let delay = if from == to {
            Some(0)
        } else {
            schedule.next_delivery()
        };
        if let Some(d) = delay {
            self.messages.push(Message { to, payload });
            self.queue.push(Reverse((now + d, self.seq, self.messages.len() - 1)));
            self.seq += 1;
        }
    }

    fn broadcast_vote(&mut self, now: u64, from: usize, digest: Digest32, schedule: &mut RoundSchedule) {
        if !self.nodes[from].voted_this_view.insert(digest) {
            return;
        }
        let id = &self.set.trust.validators[from].id;
        let vote = CommitVote::sign(id, &digest, &self.set.trust.validator_set_digest(), self.set.trust.scheme.as_ref());
        for to in 0..self.set.n() {
            let payload = Payload::Vote {
                from,
                digest,
                vote: vote.clone(),
            };
            self.send(now, from, to, payload, schedule);
        }
    }

    fn try_commit(&mut self, i: usize) {
        let node = &mut self.nodes[i];
        if node.committed.is_some() || self.set.behaviors[i] != Behavior::Honest {
            return;
        }
        node.committed = node
            .tallies
            .iter()
            .find(|(d, votes)| {
                votes.len() >= self.quorum
                    && node.known.get(*d).is_some_and(|h| node.extends_head(h))
            })
            .map(|(d, _)| *d);
    }

    fn on_proposal(&mut self, now: u64, i: usize, header: BlockHeader, schedule: &mut RoundSchedule) {
        let digest = header.digest();
        self.nodes[i].known.insert(digest, header);
        match self.set.behaviors[i] {
            Behavior::Honest | Behavior::Censor => {
                let node = &mut self.nodes[i];
                let acceptable = node.extends_head(&header)
                    && node.lock.is_none_or(|l| l.digest() == digest);
                if acceptable {
                    node.lock = Some(header);
                    self.broadcast_vote(now, i, digest, schedule);
                }
            }
            Behavior::Equivocate => self.broadcast_vote(now, i, digest, schedule),
            Behavior::Withhold => {}
        }
        self.try_commit(i);
    }

    fn on_vote(&mut self, i: usize, from: usize, digest: Digest32, vote: CommitVote) {
        if vote.validator != self.set.trust.validators[from].id
            || !self.set.trust.verify_vote(&digest, &vote)
        {
            return;
        }
        self.nodes[i]
            .tallies
            .entry(digest)
            .or_default()
            .insert(from, vote);
        self.try_commit(i);
    }

    fn propose(
        &mut self,
        leader: usize,
        header: BlockHeader,
        schedule: &mut RoundSchedule,
    ) {
        let n = self.set.n();
        match self.set.behaviors[leader] {
            Behavior::Honest => {
                let header = self.nodes[leader].lock.unwrap_or(header);
                for to in 0..n {
                    self.send(0, leader, to, Payload::Proposal(header), schedule);
                }
            }
            Behavior::Equivocate => {
                let alt = equivocated(&header);
                // Colluders get both; the rest are split between the two.
                let others: Vec<usize> = (0..n)
                    .filter(|&j| j != leader && self.set.behaviors[j] != Behavior::Equivocate)
                    .collect();
                let split = others.len().div_ceil(2);
                for to in 0..n {
                    if to == leader || self.set.behaviors[to] == Behavior::Equivocate {
                        self.send(0, leader, to, Payload::Proposal(header), schedule);
                        self.send(0, leader, to, Payload::Proposal(alt), schedule);
                    }
                }
                for (k, &to) in others.iter().enumerate() {
                    let h = if k < split { header } else { alt };
                    self.send(0, leader, to, Payload::Proposal(h), schedule);
                }
            }
            Behavior::Withhold | Behavior::Censor => {}
        }
    }

    fn run_view(&mut self, timeout: u64, schedule: &mut RoundSchedule) {
        while let Some(Reverse((at, _, idx))) = self.queue.pop() {
            if at > timeout {
                break;
            }
            let Message { to, payload } = self.messages[idx].clone();
            match payload {
                Payload::Proposal(h) => self.on_proposal(at, to, h, schedule),
                Payload::Vote { from, digest, vote } => self.on_vote(to, from, digest, vote),
            }
        }
        self.queue.clear();
        self.messages.clear();
        for node in &mut self.nodes {
            node.voted_this_view.clear();
        }
    }
}

/// The conflicting header an equivocating leader pairs with `h`.
fn equivocated(h: &BlockHeader) -> BlockHeader {
    BlockHeader {
        merkle_root: sha256_tagged(b"ledgerguard/sim/equivocation", &[h.merkle_root.as_bytes()]),
        ..*h
    }
}

/// Headers each node has voted for, by chain height. Persists across
/// heights so a node that fell behind still refuses to sign a competitor.
type Locks = Vec<HashMap<u64, BlockHeader>>;

/// Runs one height. `heads[i]` is node `i`'s `(next height, head digest)`;
/// `proposal(leader)` is what an honest leader would propose.
fn run_height(
    set: &ValidatorSet,
    rule: QuorumRule,
    heads: &[(u64, Digest32)],
    locks: &mut Locks,
    leader_base: usize,
    proposal: impl Fn(usize) -> BlockHeader,
    schedule: &mut RoundSchedule,
) -> RoundReport {
    let n = set.n();
    let mut height = Height {
        set,
        quorum: rule.size(n),
        nodes: heads
            .iter()
            .zip(locks.iter())
            .map(|(&(h, prev), held)| NodeState {
                expect_height: h,
                expect_prev: prev,
                lock: held.get(&h).copied(),
                ..NodeState::default()
            })
            .collect(),
        queue: BinaryHeap::new(),
        messages: Vec::new(),
        seq: 0,
    };
    let timeout = schedule.view_timeout();
    let mut rounds = 0;
    for view in 0..n {
        rounds = view as u32 + 1;
        let leader = (leader_base + view) % n;
        height.propose(leader, proposal(leader), schedule);
        height.run_view(timeout, schedule);
        if set.honest().any(|i| height.nodes[i].committed.is_some()) {
            break;
        }
    }

    for (held, node) in locks.iter_mut().zip(&height.nodes) {
        if let Some(l) = node.lock {
            held.insert(l.height, l);
        }
    }
    let node_commits: Vec<Option<Digest32>> = height.nodes.iter().map(|s| s.committed).collect();
    let outcome = match set.honest().find_map(|i| node_commits[i]) {
        None => CommitOutcome::NoCommit { rounds },
        Some(digest) => {
            let header = height
                .nodes
                .iter()
                .find_map(|s| s.known.get(&digest).copied())
                .expect("committed header is known");
            let mut votes: BTreeMap<usize, CommitVote> = BTreeMap::new();
            for node in &height.nodes {
                if let Some(t) = node.tallies.get(&digest) {
                    for (from, v) in t {
                        votes.entry(*from).or_insert_with(|| v.clone());
                    }
                }
            }
            CommitOutcome::Committed {
                header,
                votes: votes.into_values().collect(),
                rounds,
            }
        }
    };
    RoundReport {
        outcome,
        node_commits,
    }
}

/// Collects votes for `proposal` from `validators`. All nodes start at the
/// proposal's parent; the first leader is `proposal.height mod n`.
pub fn run_commit_round(
    validators: &ValidatorSet,
    proposal: &BlockHeader,
    schedule: &mut RoundSchedule,
    rule: QuorumRule,
) -> RoundReport {
    let heads = vec![(proposal.height, proposal.prev_hash); validators.n()];
    let base = (proposal.height % validators.n() as u64) as usize;
    let mut locks = vec![HashMap::new(); validators.n()];
    run_height(validators, rule, &heads, &mut locks, base, |_| *proposal, schedule)
}

/// True iff every pair of chains is prefix-consistent.
pub fn check_consistency(chains: &[Vec<Digest32>]) -> bool {
    chains.iter().enumerate().all(|(i, a)| {
        chains[i + 1..].iter().all(|b| {
            let k = a.len().min(b.len());
            a[..k] == b[..k]
        })
    })
}

/// Per-node chains of committed header digests after a multi-height run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationRun {
    pub chains: Vec<Vec<Digest32>>,
    /// Views used at each height that committed.
    pub rounds_to_commit: Vec<u32>,
    pub missed_heights: u64,
}

impl SimulationRun {
    pub fn honest_chains(&self, set: &ValidatorSet) -> Vec<Vec<Digest32>> {
        set.honest().map(|i| self.chains[i].clone()).collect()
    }
}

/// Runs `heights` consecutive heights. A node that misses a height stops
/// extending its chain, since later proposals no longer build on its head.
pub fn simulate(
    set: &ValidatorSet,
    heights: u64,
    schedule: &mut RoundSchedule,
    rule: QuorumRule,
) -> SimulationRun {
    let n = set.n();
    let mut chains: Vec<Vec<Digest32>> = vec![Vec::new(); n];
    let mut rounds_to_commit = Vec::new();
    let mut missed = 0;
    let mut locks = vec![HashMap::new(); n];
    for h in 0..heights {
        let heads: Vec<(u64, Digest32)> = chains
            .iter()
            .map(|c| (c.len() as u64 + 1, c.last().copied().unwrap_or(Digest32::ZERO)))
            .collect();
        let root = sha256_tagged(b"ledgerguard/sim/batch", &[&h.to_be_bytes()]);
        let report = run_height(
            set,
            rule,
            &heads,
            &mut locks,
            (h % n as u64) as usize,
            |leader| BlockHeader {
                height: heads[leader].0,
                prev_hash: heads[leader].1,
                merkle_root: root,
                block_time: h,
            },
            schedule,
        );
        match report.outcome {
            CommitOutcome::Committed { rounds, .. } => rounds_to_commit.push(rounds),
            CommitOutcome::NoCommit { .. } => missed += 1,
        }
        for (chain, c) in chains.iter_mut().zip(&report.node_commits) {
            if let Some(d) = c {
                chain.push(*d);
            }
        }
    }
    SimulationRun {
        chains,
        rounds_to_commit,
        missed_heights: missed,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub f: usize,
    pub behavior: Behavior,
    pub seeds: u64,
    pub heights: u64,
    pub rule: QuorumRule,
    pub max_delay: u64,
    pub drop_rate: f64,
}

impl SweepConfig {
    pub fn new(n: usize, f: usize, behavior: Behavior, seeds: u64) -> Self {
        Self {
            n,
            f,
            behavior,
            seeds,
            heights: 5,
            rule: QuorumRule::Standard,
            max_delay: 5,
            drop_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n: usize,
    pub f: usize,
    pub behavior: Behavior,
    pub quorum: usize,
    pub runs: u64,
    pub consistent_runs: u64,
    pub divergent_runs: u64,
    pub committed_heights: u64,
    pub missed_heights: u64,
    pub mean_rounds_to_commit: f64,
}

/// Runs one simulation per seed in parallel and tallies prefix-consistency
/// of the honest nodes' chains.
pub fn sweep(cfg: &SweepConfig, scheme: Arc<dyn SignatureScheme>) -> SweepSummary {
    let set = ValidatorSet::with_faults(scheme, cfg.n, cfg.f, cfg.behavior);
    let runs: Vec<(bool, Vec<u32>, u64)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| {
            let mut schedule = RoundSchedule::with_network(seed, cfg.max_delay, cfg.drop_rate);
            let run = simulate(&set, cfg.heights, &mut schedule, cfg.rule);
            (
                check_consistency(&run.honest_chains(&set)),
                run.rounds_to_commit,
                run.missed_heights,
            )
        })
        .collect();
    let consistent = runs.iter().filter(|r| r.0).count() as u64;
    let rounds: Vec<u32> = runs.iter().flat_map(|r| r.1.iter().copied()).collect();
    SweepSummary {
        n: cfg.n,
        f: cfg.f,
        behavior: cfg.behavior,
        quorum: cfg.rule.size(cfg.n),
        runs: cfg.seeds,
        consistent_runs: consistent,
        divergent_runs: cfg.seeds - consistent,
        committed_heights: rounds.len() as u64,
        missed_heights: runs.iter().map(|r| r.2).sum(),
        mean_rounds_to_commit: if rounds.is_empty() {
            0.0
        } else {
            rounds.iter().map(|&r| f64::from(r)).sum::<f64>() / rounds.len() as f64
        },
    }
}

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("no quorum formed after {rounds} rounds")]
    NoCommit { rounds: u32 },
    #[error("validators committed a different header than proposed")]
    ForeignHeader,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Drives ledger appends through the simulated validator set.
#[derive(Debug, Clone)]
pub struct Consortium {
    pub validators: ValidatorSet,
    pub rule: QuorumRule,
    schedule: RoundSchedule,
}

impl Consortium {
    pub fn new(validators: ValidatorSet, seed: u64) -> Self {
        Self {
            validators,
            rule: QuorumRule::Standard,
            schedule: RoundSchedule::new(seed),
        }
    }

    /// All-honest set of `n` validators over `scheme`.
    pub fn honest(scheme: Arc<dyn SignatureScheme>, n: usize, seed: u64) -> Self {
        Self::new(ValidatorSet::with_faults(scheme, n, 0, Behavior::Honest), seed)
    }

    /// Runs a commit round for `entries` and appends them on success.
    pub fn commit<'l>(
        &mut self,
        ledger: &'l mut Ledger,
        entries: Vec<LedgerEntry>,
        block_time: u64,
    ) -> Result<&'l Block, ConsensusError> {
        if entries.is_empty() {
            return Err(LedgerError::EmptyBatch.into());
        }
        let header = ledger.next_header(&entries, block_time);
        let report = run_commit_round(&self.validators, &header, &mut self.schedule, self.rule);
        match report.outcome {
            CommitOutcome::NoCommit { rounds } => Err(ConsensusError::NoCommit { rounds }),
            CommitOutcome::Committed { header: h, .. } if h != header => Err(ConsensusError::ForeignHeader),
            CommitOutcome::Committed { votes, .. } => Ok(ledger.append_entries(entries, block_time, votes)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::crypto::KeyedHashScheme;

    fn scheme() -> Arc<dyn SignatureScheme> {
        Arc::new(KeyedHashScheme::simulation())
    }

    fn header(height: u64) -> BlockHeader {
        BlockHeader {
            height,
            prev_hash: Digest32::ZERO,
            merkle_root: sha256_tagged(b"t", &[b"batch"]),
            block_time: 7,
        }
    }

    fn d(tag: &str) -> Digest32 {
        sha256_tagged(tag.as_bytes(), &[])
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!(quorum_size(4), 3);
        assert_eq!(quorum_size(3), 3);
        assert_eq!(quorum_size(1), 1);
        assert_eq!(quorum_size(7), 5);
        assert_eq!(QuorumRule::NMinusF(1).size(3), 2);
    }

    #[test]
    fn all_honest_commits_with_every_vote() {
        let set = ValidatorSet::with_faults(scheme(), 4, 0, Behavior::Honest);
        assert_eq!(set.f(), 0);
        let h = header(1);
        let report = run_commit_round(&set, &h, &mut RoundSchedule::new(1), QuorumRule::Standard);
        match report.outcome {
            CommitOutcome::Committed { header, votes, rounds } => {
                assert_eq!(header, h);
                assert_eq!(votes.len(), 4);
                assert_eq!(rounds, 1);
            }
            other => panic!("expected commit, got {other:?}"),
        }
        assert!(report.node_commits.iter().all(|c| *c == Some(h.digest())));
    }

    #[test]
    fn synchronous_honest_rounds_always_commit() {
        let set = ValidatorSet::with_faults(scheme(), 4, 0, Behavior::Honest);
        for seed in 0..200 {
            let mut s = RoundSchedule::new(seed);
            let run = simulate(&set, 4, &mut s, QuorumRule::Standard);
            assert_eq!(run.missed_heights, 0);
            assert!(run.rounds_to_commit.iter().all(|&r| r == 1));
            assert!(run.chains.iter().all(|c| c.len() == 4));
        }
    }

    #[test]
    fn same_seed_same_outcome() {
        let set = ValidatorSet::with_faults(scheme(), 4, 1, Behavior::Equivocate);
        let h = header(4);
        let a = run_commit_round(&set, &h, &mut RoundSchedule::with_network(9, 6, 0.2), QuorumRule::Standard);
        let b = run_commit_round(&set, &h, &mut RoundSchedule::with_network(9, 6, 0.2), QuorumRule::Standard);
        assert_eq!(a, b);
    }

    #[test]
    fn four_validators_tolerate_one_fault_of_each_kind() {
        for behavior in [Behavior::Equivocate, Behavior::Withhold, Behavior::Censor] {
            let mut cfg = SweepConfig::new(4, 1, behavior, 200);
            cfg.heights = 3;
            let s = sweep(&cfg, scheme());
            assert_eq!(s.divergent_runs, 0, "{behavior:?}");
            assert!(s.committed_heights > 0);
        }
    }

    #[test]
    fn equivocating_leader_splits_three_validators_under_liveness_quorum() {
        let set = ValidatorSet::simulated(
            scheme(),
            vec![Behavior::Equivocate, Behavior::Honest, Behavior::Honest],
        );
        // Height 3 makes validator 0 the first leader.
        let report = run_commit_round(&set, &header(3), &mut RoundSchedule::new(0), QuorumRule::NMinusF(1));
        let (a, b) = (report.node_commits[1], report.node_commits[2]);
        assert!(a.is_some() && b.is_some());
        assert_ne!(a, b);

        // The standard quorum cannot split three validators with one fault.
        let report = run_commit_round(&set, &header(3), &mut RoundSchedule::new(0), QuorumRule::Standard);
        let commits: HashSet<_> = report.node_commits.iter().flatten().collect();
        assert!(commits.len() <= 1);
    }

    #[test]
    fn standard_quorum_of_three_stalls_with_one_silent_validator() {
        let set = ValidatorSet::with_faults(scheme(), 3, 1, Behavior::Withhold);
        let report = run_commit_round(&set, &header(1), &mut RoundSchedule::new(0), QuorumRule::Standard);
        assert_eq!(report.outcome, CommitOutcome::NoCommit { rounds: 3 });
    }

    #[test]
    fn censoring_leader_delays_but_cannot_forge() {
        let set = ValidatorSet::with_faults(scheme(), 4, 1, Behavior::Censor);
        // Height 4 makes the censor (validator 0) lead first.
        let report = run_commit_round(&set, &header(4), &mut RoundSchedule::new(3), QuorumRule::Standard);
        let CommitOutcome::Committed { header: h, votes, rounds } = report.outcome else {
            panic!("honest majority should still commit");
        };
        assert_eq!(rounds, 2);
        let digest = h.digest();
        assert!(votes.iter().all(|v| set.trust.verify_vote(&digest, v)));
        // Relabelling another validator's vote as the censor's fails.
        let mut forged = votes.iter().find(|v| v.validator != "validator-0").unwrap().clone();
        forged.validator = "validator-0".into();
        assert!(!set.trust.verify_vote(&digest, &forged));

        let honest = ValidatorSet::with_faults(scheme(), 4, 0, Behavior::Honest);
        let report = run_commit_round(&honest, &header(4), &mut RoundSchedule::new(3), QuorumRule::Standard);
        assert_eq!(report.outcome.rounds(), 1);
    }

    #[test]
    fn consistency_is_a_prefix_check() {
        let (a, b, c, b2) = (d("a"), d("b"), d("c"), d("b'"));
        assert!(check_consistency(&[vec![a, b], vec![a, b]]));
        assert!(check_consistency(&[vec![a, b], vec![a, b, c]]));
        assert!(!check_consistency(&[vec![a, b], vec![a, b2]]));
        assert!(!check_consistency(&[vec![a], vec![a, b], vec![a, b2]]));
    }

    #[test]
    fn consortium_appends_to_ledger() {
        let scheme = scheme();
        let mut c = Consortium::honest(scheme.clone(), 4, 1);
        let mut trust = c.validators.trust.clone();
        trust.authors.register("alice", scheme.public_key("alice"));
        let mut ledger = Ledger::new(trust);
        let e = LedgerEntry::new_signed(1, crate::ledger::EntryKind::ApprovalCast, vec![1], "alice", 5, scheme.as_ref());
        let block = c.commit(&mut ledger, vec![e], 5).unwrap();
        assert_eq!(block.commit_votes.len(), 4);
        assert!(crate::ledger::verify_chain(&ledger).is_clean());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn honest_nodes_never_commit_two_digests(
            seed in any::<u64>(),
            behavior in prop_oneof![
                Just(Behavior::Equivocate),
                Just(Behavior::Withhold),
                Just(Behavior::Censor),
            ],
            drop_rate in 0.0f64..0.4,
        ) {
            let set = ValidatorSet::with_faults(scheme(), 4, 1, behavior);
            let mut s = RoundSchedule::with_network(seed, 4, drop_rate);
            let run = simulate(&set, 4, &mut s, QuorumRule::Standard);
            prop_assert!(check_consistency(&run.honest_chains(&set)));
        }
    }
}
