use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::ledger::{BaselineChain, Ledger, LedgerBlock};
use super::messages::{Message, RoundSync};
use super::stake::{MetadataPool, SubNodeTable, WinnersMap, WorkerIdentity};
use super::worker::{Behavior, FinishReport, Outgoing, Recipients, Worker};
use super::ConsensusError;
use crate::crypto::HashDigest;
use crate::tree::{BranchId, CollisionBlock, MedBlockTree};

#[derive(Clone, Debug, PartialEq)]
pub struct Delivery<B> {
    pub from: usize,
    pub to: usize,
    pub msg: Message<B>,
}

/// Message channel between workers, addressed by table position.
///
/// The hooks let a timed transport charge local compute and record when
/// workers decide; an untimed transport ignores them.
pub trait Transport<B> {
    fn send(&mut self, from: usize, to: usize, msg: Message<B>);

    /// Next message to hand to its recipient, or `None` when nothing is in
    /// flight.
    fn deliver(&mut self) -> Option<Delivery<B>>;

    /// `worker` formed `blocks` proposal blocks at round start.
    fn formed(&mut self, _worker: usize, _blocks: usize) {}

    /// `worker` gave up waiting for proposals.
    fn timed_out(&mut self, _worker: usize) {}

    /// `worker` reached commit quorum.
    fn decided(&mut self, _worker: usize) {}
}

/// FIFO delivery with no notion of time.
#[derive(Debug)]
pub struct InstantTransport<B> {
    queue: VecDeque<Delivery<B>>,
}

impl<B> Default for InstantTransport<B> {
    fn default() -> Self {
        InstantTransport {
            queue: VecDeque::new(),
        }
    }
}

impl<B> InstantTransport<B> {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<B> Transport<B> for InstantTransport<B> {
    fn send(&mut self, from: usize, to: usize, msg: Message<B>) {
        self.queue.push_back(Delivery { from, to, msg });
    }

    fn deliver(&mut self) -> Option<Delivery<B>> {
        self.queue.pop_front()
    }
}

/// Delivers a uniformly random in-flight message each step, driven by a
/// seeded generator. Every message is eventually delivered; only the order
/// is adversarial.
#[derive(Debug)]
pub struct ShuffledTransport<B> {
    in_flight: Vec<Delivery<B>>,
    rng: ChaCha20Rng,
}

impl<B> ShuffledTransport<B> {
    pub fn new(seed: u64) -> Self {
        ShuffledTransport {
            in_flight: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }
}

impl<B> Transport<B> for ShuffledTransport<B> {
    fn send(&mut self, from: usize, to: usize, msg: Message<B>) {
        self.in_flight.push(Delivery { from, to, msg });
    }

    fn deliver(&mut self) -> Option<Delivery<B>> {
        if self.in_flight.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..self.in_flight.len());
        Some(self.in_flight.swap_remove(i))
    }
}

/// Result of one consensus round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome<B> {
    pub round: u64,
    /// The decided BlockMap; empty when the round failed.
    pub blockmap: BTreeMap<BranchId, B>,
    pub committed: bool,
    pub digest: Option<HashDigest>,
    /// Pre-vote power behind the decided digest, or the strongest digest
    /// when nothing was decided, as seen by the best-informed honest worker.
    pub vote_power_prevote: u64,
    pub vote_power_commit: u64,
    pub quorum: u64,
    pub winners: WinnersMap,
    /// Packs offered to branches this round.
    pub assigned: usize,
    /// Branches sprouted at the end of the round.
    pub claimed: Vec<BranchId>,
    pub unclaimed: usize,
    /// Every digest any honest worker saw reach commit quorum.
    pub quorum_digests: BTreeSet<HashDigest>,
    /// Honest workers that had to adopt the decision from a peer.
    pub caught_up: usize,
}

impl<B> RoundOutcome<B> {
    pub fn blocks_committed(&self) -> usize {
        self.blockmap.len()
    }
}

/// All workers of one network, each with its own ledger replica.
#[derive(Clone, Debug)]
pub struct Cluster<L: Ledger> {
    workers: Vec<Worker<L>>,
    table: Arc<SubNodeTable>,
    next_round: u64,
}

impl<L: Ledger> Cluster<L> {
    /// Workers are placed in table order, so index `i` is the `i`-th entry
    /// of the sub-node table. `seed` drives every worker's local entropy.
    /// Round numbers continue after the last round recorded on `ledger`.
    pub fn new(
        ledger: L,
        members: Vec<(WorkerIdentity, Behavior)>,
        seed: u64,
    ) -> Result<Self, ConsensusError> {
        let ids: Vec<WorkerIdentity> = members.iter().map(|(w, _)| w.clone()).collect();
        let table = Arc::new(SubNodeTable::from_identities(ledger.params(), &ids)?);
        let mut slots: Vec<Option<(WorkerIdentity, Behavior)>> = vec![None; members.len()];
        for (id, behavior) in members {
            let pos = table
                .position(&id.keys.pk)
                .expect("table built from these members");
            slots[pos] = Some((id, behavior));
        }
        let next_round = ledger.last_round() + 1;
        let workers = slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| {
                let (id, behavior) = slot.expect("positions are a permutation");
                Worker::new(i, id, behavior, ledger.clone(), table.clone(), seed)
            })
            .collect();
        Ok(Cluster {
            workers,
            table,
            next_round,
        })
    }

    pub fn table(&self) -> &Arc<SubNodeTable> {
        &self.table
    }

    pub fn workers(&self) -> &[Worker<L>] {
        &self.workers
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    /// Number the next round will carry.
    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    /// Ledger of the first honest worker, or of worker 0 if none is honest.
    pub fn ledger(&self) -> &L {
        self.workers
            .iter()
            .find(|w| w.behavior().is_honest())
            .unwrap_or(&self.workers[0])
            .ledger()
    }

    fn dispatch<T: Transport<L::Block>>(
        transport: &mut T,
        n: usize,
        from: usize,
        out: Vec<Outgoing<L::Block>>,
    ) {
        for o in out {
            match o.to {
                Recipients::All => {
                    for to in 0..n {
                        transport.send(from, to, o.msg.clone());
                    }
                }
                Recipients::Only(list) => {
                    for to in list {
                        transport.send(from, to, o.msg.clone());
                    }
                }
            }
        }
    }

    /// Runs one round over `transport`: propose, pre-vote, commit, then tree
    /// update. Committed packs leave `pool`; a failed round leaves it as it
    /// was. `claims` are claimed as new branches at the end of the round
    /// whether or not it committed.
    pub fn run_round<T: Transport<L::Block>>(
        &mut self,
        pool: &mut MetadataPool,
        claims: Vec<CollisionBlock>,
        transport: &mut T,
    ) -> Result<RoundOutcome<L::Block>, ConsensusError> {
        let round = self.next_round;
        self.next_round += 1;
        let n = self.workers.len();
        let branches = self.ledger().branch_count();
        let sync = RoundSync {
            round,
            pool: pool.front(branches),
            claims,
        };

        for i in 0..n {
            let (out, formed) = self.workers[i].begin_round(sync.clone());
            if formed > 0 {
                transport.formed(i, formed);
            }
            Self::dispatch(transport, n, i, out);
        }

        let mut decided = vec![false; n];
        loop {
            while let Some(d) = transport.deliver() {
                let out = self.workers[d.to].handle(d.msg);
                Self::dispatch(transport, n, d.to, out);
                if !decided[d.to] && self.workers[d.to].decision().is_some() {
                    decided[d.to] = true;
                    transport.decided(d.to);
                }
            }
            let mut any = false;
            for i in 0..n {
                if !self.workers[i].has_prevoted() {
                    transport.timed_out(i);
                    let out = self.workers[i].on_propose_timeout();
                    any |= !out.is_empty();
                    Self::dispatch(transport, n, i, out);
                }
            }
            if !any {
                break;
            }
        }

        let honest: Vec<usize> = (0..n)
            .filter(|i| self.workers[*i].behavior().is_honest())
            .collect();
        let mut quorum_digests = BTreeSet::new();
        let mut decisions = BTreeSet::new();
        for &i in &honest {
            quorum_digests.extend(self.workers[i].commit_quorum_digests());
            decisions.extend(self.workers[i].decision());
        }
        if decisions.len() > 1 {
            return Err(ConsensusError::SafetyViolation { round });
        }
        let digest = decisions.into_iter().next();

        let mut caught_up = 0;
        let mut blockmap = BTreeMap::new();
        if let Some(d) = digest {
            let source = (0..n)
                .filter(|i| self.workers[*i].decision() == Some(d))
                .find(|i| self.workers[*i].map_for(&d).is_some())
                .ok_or(ConsensusError::MissingBlockMap { round })?;
            let map = self.workers[source]
                .map_for(&d)
                .cloned()
                .expect("found above");
            let cert = self.workers[source].certificate(&d);
            for i in 0..n {
                let w = &mut self.workers[i];
                if w.decision() == Some(d) && w.map_for(&d).is_some() {
                    continue;
                }
                if w.adopt(d, &map, &cert) && w.behavior().is_honest() {
                    caught_up += 1;
                }
            }
            blockmap = map;
        }

        let lead = honest.first().copied().unwrap_or(0);
        let (vote_power_prevote, vote_power_commit) = match digest {
            Some(d) => (
                honest
                    .iter()
                    .map(|i| self.workers[*i].prevote_power(&d))
                    .max()
                    .unwrap_or(0),
                honest
                    .iter()
                    .map(|i| self.workers[*i].commit_power(&d))
                    .max()
                    .unwrap_or(0),
            ),
            None => (
                honest
                    .iter()
                    .map(|i| self.workers[*i].max_prevote_power())
                    .max()
                    .unwrap_or(0),
                honest
                    .iter()
                    .map(|i| self.workers[*i].max_commit_power())
                    .max()
                    .unwrap_or(0),
            ),
        };
        let winners = self.workers[lead].winners().cloned().unwrap_or_default();
        let assigned = self.workers[lead].assignment().map_or(0, BTreeMap::len);

        let mut reports: Vec<FinishReport> =
            self.workers.iter_mut().map(Worker::finish_round).collect();
        let lead_report = std::mem::take(&mut reports[lead]);
        if !lead_report.rejected.is_empty() {
            return Err(ConsensusError::AppendFailed {
                round,
                reason: lead_report.rejected[0].1.to_string(),
            });
        }

        let committed_ids: Vec<u64> = blockmap.values().map(|b| b.meta().meta_id).collect();
        pool.remove_committed(&committed_ids);

        Ok(RoundOutcome {
            round,
            committed: digest.is_some(),
            digest,
            blockmap,
            vote_power_prevote,
            vote_power_commit,
            quorum: self.table.quorum(),
            winners,
            assigned,
            claimed: lead_report.claimed,
            unclaimed: lead_report.unclaimed.len(),
            quorum_digests,
            caught_up,
        })
    }
}

/// One EnhancedPro round on the MedBlockTree.
pub fn run_round<T: Transport<crate::tree::Block>>(
    cluster: &mut Cluster<MedBlockTree>,
    pool: &mut MetadataPool,
    claims: Vec<CollisionBlock>,
    transport: &mut T,
) -> Result<RoundOutcome<crate::tree::Block>, ConsensusError> {
    cluster.run_round(pool, claims, transport)
}

/// One round of the same machinery on the single SHA-256 chain: at most one
/// block, no collision claims.
pub fn run_baseline_round<T: Transport<super::ledger::ChainBlock>>(
    cluster: &mut Cluster<BaselineChain>,
    pool: &mut MetadataPool,
    transport: &mut T,
) -> Result<RoundOutcome<super::ledger::ChainBlock>, ConsensusError> {
    cluster.run_round(pool, Vec::new(), transport)
}
