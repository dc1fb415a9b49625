use std::collections::{BTreeMap, VecDeque};

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::ConsensusError;
use crate::crypto::{std_hash, Element, GroupParams, KeyPair};
use crate::tree::{BranchId, MetadataPack};

/// A worker's keys and deposited tokens. Tokens are its voting power.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerIdentity {
    pub keys: KeyPair,
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubNodeRange {
    pub pk: Element,
    pub start: u64,
    pub tokens: u64,
}

/// Workers in default sorted order, each owning `tokens` consecutive
/// sub-node indexes. The ranges tile `[0, total)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubNodeTable {
    ranges: Vec<SubNodeRange>,
    total: u64,
}

impl SubNodeTable {
    /// Sorts by the fixed-width encoding of each public key.
    pub fn new(params: &GroupParams, workers: &[(Element, u64)]) -> Result<Self, ConsensusError> {
        if workers.is_empty() {
            return Err(ConsensusError::EmptyTable);
        }
        let mut sorted: Vec<(Vec<u8>, &Element, u64)> = workers
            .iter()
            .map(|(pk, t)| (params.encode_element(pk), pk, *t))
            .collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ConsensusError::DuplicateWorker);
        }
        let mut ranges = Vec::with_capacity(sorted.len());
        let mut cur: u64 = 0;
        for (_, pk, tokens) in sorted {
            if tokens == 0 {
                return Err(ConsensusError::ZeroTokens);
            }
            ranges.push(SubNodeRange {
                pk: pk.clone(),
                start: cur,
                tokens,
            });
            cur = cur
                .checked_add(tokens)
                .ok_or(ConsensusError::StakeOverflow)?;
        }
        Ok(SubNodeTable { ranges, total: cur })
    }

    pub fn from_identities(
        params: &GroupParams,
        ids: &[WorkerIdentity],
    ) -> Result<Self, ConsensusError> {
        let pairs: Vec<(Element, u64)> =
            ids.iter().map(|w| (w.keys.pk.clone(), w.tokens)).collect();
        Self::new(params, &pairs)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn ranges(&self) -> &[SubNodeRange] {
        &self.ranges
    }

    /// At least two thirds of the total power: `ceil(2 * total / 3)`.
    pub fn quorum(&self) -> u64 {
        (2 * self.total).div_ceil(3)
    }

    pub fn position(&self, pk: &Element) -> Option<usize> {
        self.ranges.iter().position(|r| r.pk == *pk)
    }

    pub fn power_of(&self, pk: &Element) -> Option<u64> {
        self.ranges.iter().find(|r| r.pk == *pk).map(|r| r.tokens)
    }

    /// Position of the worker whose range holds sub-node `index`.
    pub fn owner_of(&self, index: u64) -> usize {
        debug_assert!(index < self.total);
        self.ranges.partition_point(|r| r.start + r.tokens <= index)
    }
}

/// Public per-branch election input: the encoded check string of the
/// branch tip and the branch id. On the single-chain baseline `zeta`
/// carries the tip's SHA-256 instead.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RoundRandomness {
    pub zeta: Vec<u8>,
    pub branch: BranchId,
}

impl RoundRandomness {
    /// `zeta || branch as u32 big-endian`; hashed for the election and
    /// used verbatim as the VRF input.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.zeta.len() + 4);
        out.extend_from_slice(&self.zeta);
        out.extend_from_slice(&self.branch.to_be_bytes());
        out
    }

    /// `std_hash(encode()) mod total`, reading the digest big-endian.
    pub fn subnode_index(&self, total: u64) -> u64 {
        let h = BigUint::from_bytes_be(&std_hash(&self.encode()));
        (h % total).to_u64().expect("reduced below a u64 modulus")
    }
}

/// Branch id to elected worker public key.
pub type WinnersMap = BTreeMap<BranchId, Element>;

pub fn elect_winners(
    randomness: &BTreeMap<BranchId, RoundRandomness>,
    table: &SubNodeTable,
) -> WinnersMap {
    randomness
        .iter()
        .map(|(branch, r)| {
            let owner = table.owner_of(r.subnode_index(table.total()));
            (*branch, table.ranges[owner].pk.clone())
        })
        .collect()
}

/// Front of the pool dealt out to branches in ascending id order. Branches
/// past the end of the pool stay idle.
pub fn assign_pool(
    pool: &[MetadataPack],
    branches: impl IntoIterator<Item = BranchId>,
) -> BTreeMap<BranchId, MetadataPack> {
    let mut ids: Vec<BranchId> = branches.into_iter().collect();
    ids.sort_unstable();
    ids.into_iter().zip(pool.iter().cloned()).collect()
}

/// FIFO queue of metadata packs awaiting a block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetadataPool {
    queue: VecDeque<MetadataPack>,
}

impl MetadataPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, meta: MetadataPack) {
        self.queue.push_back(meta);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn front(&self, n: usize) -> Vec<MetadataPack> {
        self.queue.iter().take(n).cloned().collect()
    }

    /// Drops every pack whose `meta_id` is in `committed`, keeping order.
    pub fn remove_committed(&mut self, committed: &[u64]) -> usize {
        let before = self.queue.len();
        self.queue.retain(|m| !committed.contains(&m.meta_id));
        before - self.queue.len()
    }
}

impl FromIterator<MetadataPack> for MetadataPool {
    fn from_iter<T: IntoIterator<Item = MetadataPack>>(iter: T) -> Self {
        MetadataPool {
            queue: iter.into_iter().collect(),
        }
    }
}
