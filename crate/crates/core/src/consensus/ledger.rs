use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::stake::RoundRandomness;
use crate::crypto::{
    self, std_hash, Element, GroupParams, HashDigest, KeyPair, Verifier, VrfOutput,
};
use crate::tree::{
    AppendReport, Block, BranchId, CollisionBlock, MedBlockTree, MetadataPack, TreeError,
    DEFAULT_BRANCH,
};

/// What consensus needs to read from a block.
pub trait LedgerBlock: Clone + Debug + PartialEq {
    fn branch(&self) -> BranchId;
    fn proposer(&self) -> &Element;
    fn vrf(&self) -> &VrfOutput;
    fn meta(&self) -> &MetadataPack;
    /// Mutable metadata, used to model faulty proposers.
    fn meta_mut(&mut self) -> &mut MetadataPack;
    fn encode(&self, params: &GroupParams) -> Vec<u8>;
}

/// A replicated block structure driven by the consensus round.
pub trait Ledger: Clone + Debug {
    type Block: LedgerBlock;

    fn params(&self) -> &Arc<GroupParams>;
    fn verifier(&self) -> &Verifier;
    fn set_verifier(&mut self, verifier: Verifier);

    /// Election input for every branch, from the current tips.
    fn randomness(&self) -> BTreeMap<BranchId, RoundRandomness>;

    fn propose(
        &self,
        branch: BranchId,
        meta: MetadataPack,
        proposer: &KeyPair,
        randomness: &RoundRandomness,
        round: u64,
        rng: &mut dyn RngCore,
    ) -> Result<Self::Block, TreeError>;

    /// Linkage and digest checks against the local tip.
    fn check_block(&self, block: &Self::Block) -> Result<(), TreeError>;

    fn append_blockmap(&mut self, blockmap: &BTreeMap<BranchId, Self::Block>) -> AppendReport;

    /// Starts a branch from a collision block. Ledgers without branches
    /// refuse.
    fn claim_collision(
        &mut self,
        colli: &CollisionBlock,
        round: u64,
    ) -> Result<BranchId, TreeError>;

    fn branch_count(&self) -> usize;
    fn block_count(&self) -> usize;

    /// Highest round recorded on any block; 0 for a fresh ledger.
    fn last_round(&self) -> u64;
}

impl LedgerBlock for Block {
    fn branch(&self) -> BranchId {
        self.index.branch
    }

    fn proposer(&self) -> &Element {
        &self.proposer_pk
    }

    fn vrf(&self) -> &VrfOutput {
        &self.vrf
    }

    fn meta(&self) -> &MetadataPack {
        &self.meta
    }

    fn meta_mut(&mut self) -> &mut MetadataPack {
        &mut self.meta
    }

    fn encode(&self, params: &GroupParams) -> Vec<u8> {
        Block::encode(self, params)
    }
}

impl Ledger for MedBlockTree {
    type Block = Block;

    fn params(&self) -> &Arc<GroupParams> {
        MedBlockTree::params(self)
    }

    fn verifier(&self) -> &Verifier {
        MedBlockTree::verifier(self)
    }

    fn set_verifier(&mut self, verifier: Verifier) {
        MedBlockTree::set_verifier(self, verifier);
    }

    fn randomness(&self) -> BTreeMap<BranchId, RoundRandomness> {
        let params = MedBlockTree::params(self);
        self.former_blocks()
            .into_iter()
            .map(|(branch, tip)| {
                (
                    branch,
                    RoundRandomness {
                        zeta: params.encode_scalar(&tip.digest.zeta),
                        branch,
                    },
                )
            })
            .collect()
    }

    fn propose(
        &self,
        branch: BranchId,
        meta: MetadataPack,
        proposer: &KeyPair,
        randomness: &RoundRandomness,
        round: u64,
        rng: &mut dyn RngCore,
    ) -> Result<Block, TreeError> {
        self.make_block(branch, meta, proposer, &randomness.encode(), round, rng)
    }

    fn check_block(&self, block: &Block) -> Result<(), TreeError> {
        self.check_append(block)
    }

    fn append_blockmap(&mut self, blockmap: &BTreeMap<BranchId, Block>) -> AppendReport {
        MedBlockTree::append_blockmap(self, blockmap)
    }

    fn claim_collision(
        &mut self,
        colli: &CollisionBlock,
        round: u64,
    ) -> Result<BranchId, TreeError> {
        self.sprout_branch(colli, round)
    }

    fn branch_count(&self) -> usize {
        MedBlockTree::branch_count(self)
    }

    fn block_count(&self) -> usize {
        MedBlockTree::block_count(self)
    }

    fn last_round(&self) -> u64 {
        self.blocks().map(|b| b.committed_round).max().unwrap_or(0)
    }
}

/// Block of the single-chain baseline, linked by SHA-256.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainBlock {
    pub height: u64,
    #[serde(with = "hex::serde")]
    pub prev_hash: HashDigest,
    #[serde(with = "hex::serde")]
    pub hash: HashDigest,
    pub meta: MetadataPack,
    pub proposer_pk: Element,
    pub vrf: VrfOutput,
    pub committed_round: u64,
}

impl ChainBlock {
    /// `std_hash(height u64 | prev_hash | meta_len u32 | meta | proposer | vrf.y | round u64)`.
    pub fn compute_hash(&self, params: &GroupParams) -> HashDigest {
        let meta = self.meta.encode(params);
        let mut buf = Vec::with_capacity(meta.len() + 2 * params.width() + 96);
        buf.extend_from_slice(&self.height.to_be_bytes());
        buf.extend_from_slice(&self.prev_hash);
        buf.extend_from_slice(&(meta.len() as u32).to_be_bytes());
        buf.extend_from_slice(&meta);
        params.write_element(&mut buf, &self.proposer_pk);
        buf.extend_from_slice(&self.vrf.y);
        buf.extend_from_slice(&self.committed_round.to_be_bytes());
        std_hash(&buf)
    }
}

impl LedgerBlock for ChainBlock {
    fn branch(&self) -> BranchId {
        DEFAULT_BRANCH
    }

    fn proposer(&self) -> &Element {
        &self.proposer_pk
    }

    fn vrf(&self) -> &VrfOutput {
        &self.vrf
    }

    fn meta(&self) -> &MetadataPack {
        &self.meta
    }

    fn meta_mut(&mut self) -> &mut MetadataPack {
        &mut self.meta
    }

    /// The hashed fields with the full VRF output in place of `vrf.y`,
    /// followed by `hash`.
    fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let meta = self.meta.encode(params);
        let mut out = Vec::with_capacity(meta.len() + 4 * params.width() + 128);
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&(meta.len() as u32).to_be_bytes());
        out.extend_from_slice(&meta);
        params.write_element(&mut out, &self.proposer_pk);
        out.extend_from_slice(&self.vrf.encode(params));
        out.extend_from_slice(&self.committed_round.to_be_bytes());
        out.extend_from_slice(&self.hash);
        out
    }
}

/// Single SHA-256 chain on branch 1; the comparator ledger.
#[derive(Clone, Debug)]
pub struct BaselineChain {
    params: Arc<GroupParams>,
    blocks: Vec<ChainBlock>,
    verifier: Verifier,
}

impl BaselineChain {
    pub fn genesis(params: Arc<GroupParams>, authority: &KeyPair) -> Self {
        let meta = MetadataPack {
            patient_pk: authority.pk.clone(),
            doctor_pk: authority.pk.clone(),
            timestamp_ms: 0,
            keywords: "genesis".into(),
            meta_id: 0,
        };
        let mut block = ChainBlock {
            height: 0,
            prev_hash: [0; 32],
            hash: [0; 32],
            meta,
            proposer_pk: authority.pk.clone(),
            vrf: crypto::vrf_prove(&params, authority, b"medblocktree/genesis"),
            committed_round: 0,
        };
        block.hash = block.compute_hash(&params);
        BaselineChain {
            params,
            blocks: vec![block],
            verifier: Verifier::direct(),
        }
    }

    pub fn blocks(&self) -> &[ChainBlock] {
        &self.blocks
    }

    pub fn tip(&self) -> &ChainBlock {
        self.blocks.last().expect("chain always holds genesis")
    }

    /// Recomputes every hash and link.
    pub fn validate(&self) -> Result<(), TreeError> {
        for (i, b) in self.blocks.iter().enumerate() {
            let ok_link = if i == 0 {
                b.prev_hash == [0; 32]
            } else {
                b.prev_hash == self.blocks[i - 1].hash
            };
            if b.height != i as u64 || !ok_link || b.hash != b.compute_hash(&self.params) {
                return Err(TreeError::StalePreHash(DEFAULT_BRANCH));
            }
        }
        Ok(())
    }
}

impl PartialEq for BaselineChain {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.blocks == other.blocks
    }
}

impl Ledger for BaselineChain {
    type Block = ChainBlock;

    fn params(&self) -> &Arc<GroupParams> {
        &self.params
    }

    fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    fn set_verifier(&mut self, verifier: Verifier) {
        self.verifier = verifier;
    }

    fn randomness(&self) -> BTreeMap<BranchId, RoundRandomness> {
        BTreeMap::from([(
            DEFAULT_BRANCH,
            RoundRandomness {
                zeta: self.tip().hash.to_vec(),
                branch: DEFAULT_BRANCH,
            },
        )])
    }

    fn propose(
        &self,
        branch: BranchId,
        meta: MetadataPack,
        proposer: &KeyPair,
        randomness: &RoundRandomness,
        round: u64,
        _rng: &mut dyn RngCore,
    ) -> Result<ChainBlock, TreeError> {
        if branch != DEFAULT_BRANCH {
            return Err(TreeError::UnknownBranch(branch));
        }
        let tip = self.tip();
        let mut block = ChainBlock {
            height: tip.height + 1,
            prev_hash: tip.hash,
            hash: [0; 32],
            meta,
            proposer_pk: proposer.pk.clone(),
            vrf: crypto::vrf_prove(&self.params, proposer, &randomness.encode()),
            committed_round: round,
        };
        block.hash = block.compute_hash(&self.params);
        Ok(block)
    }

    fn check_block(&self, block: &ChainBlock) -> Result<(), TreeError> {
        let tip = self.tip();
        if block.height != tip.height + 1 {
            return Err(TreeError::IndexGap {
                expected: crate::tree::BlockIndex::new(DEFAULT_BRANCH, tip.height + 1),
                found: crate::tree::BlockIndex::new(DEFAULT_BRANCH, block.height),
            });
        }
        if block.prev_hash != tip.hash {
            return Err(TreeError::StalePreHash(DEFAULT_BRANCH));
        }
        if block.hash != block.compute_hash(&self.params) {
            return Err(TreeError::DigestInvalid(crate::tree::BlockIndex::new(
                DEFAULT_BRANCH,
                block.height,
            )));
        }
        Ok(())
    }

    fn append_blockmap(&mut self, blockmap: &BTreeMap<BranchId, ChainBlock>) -> AppendReport {
        let mut report = AppendReport::default();
        for (branch, block) in blockmap {
            let result = if *branch != DEFAULT_BRANCH {
                Err(TreeError::UnknownBranch(*branch))
            } else {
                self.check_block(block)
            };
            match result {
                Ok(()) => {
                    self.blocks.push(block.clone());
                    report.appended.push(*branch);
                }
                Err(e) => report.rejected.push((*branch, e)),
            }
        }
        report
    }

    fn claim_collision(
        &mut self,
        _colli: &CollisionBlock,
        _round: u64,
    ) -> Result<BranchId, TreeError> {
        Err(TreeError::BranchesUnsupported)
    }

    fn branch_count(&self) -> usize {
        1
    }

    fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn last_round(&self) -> u64 {
        self.tip().committed_round
    }
}
