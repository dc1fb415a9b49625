use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::RngCore;

use super::block::{Block, BlockIndex, BranchId, CollisionBlock, MetadataPack, DEFAULT_BRANCH};
use super::{CollisionRejection, TreeError};
use crate::crypto::{self, Element, GroupParams, KeyPair, Verifier};

const GENESIS_KEYWORDS: &str = "genesis";
const GENESIS_VRF_INPUT: &[u8] = b"medblocktree/genesis";

/// Default chain plus every branch sprouted from a claimed collision block.
///
/// Single-writer: all mutation happens in the tree-update step of the owning
/// worker. Clones are cheap enough to hand out as read-only snapshots.
#[derive(Clone, Debug)]
pub struct MedBlockTree {
    params: Arc<GroupParams>,
    branches: BTreeMap<BranchId, Vec<Block>>,
    /// Origin of every branch `n > 1`.
    origins: BTreeMap<BranchId, BlockIndex>,
    patient_tips: BTreeMap<Element, BlockIndex>,
    verifier: Verifier,
}

impl PartialEq for MedBlockTree {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.branches == other.branches
            && self.origins == other.origins
            && self.patient_tips == other.patient_tips
    }
}

impl MedBlockTree {
    /// Builds the tree holding only the authority's genesis block at `B1#0`.
    pub fn genesis<R: RngCore + ?Sized>(
        params: Arc<GroupParams>,
        authority: &KeyPair,
        rng: &mut R,
    ) -> Result<Self, TreeError> {
        let meta = MetadataPack {
            patient_pk: authority.pk.clone(),
            doctor_pk: authority.pk.clone(),
            timestamp_ms: 0,
            keywords: GENESIS_KEYWORDS.to_string(),
            meta_id: 0,
        };
        let digest = crypto::chamhash(&params, &authority.pk, &meta.encode(&params), rng)?;
        let block = Block {
            index: BlockIndex::new(DEFAULT_BRANCH, 0),
            pre_hash: Element::zero(),
            digest,
            meta,
            proposer_pk: authority.pk.clone(),
            vrf: crypto::vrf_prove(&params, authority, GENESIS_VRF_INPUT),
            committed_round: 0,
        };
        let mut patient_tips = BTreeMap::new();
        patient_tips.insert(authority.pk.clone(), block.index);
        Ok(MedBlockTree {
            params,
            branches: BTreeMap::from([(DEFAULT_BRANCH, vec![block])]),
            origins: BTreeMap::new(),
            patient_tips,
            verifier: Verifier::direct(),
        })
    }

    /// Reassembles a tree from raw blocks without checking any invariant.
    /// Patient tips are recomputed by scanning. Run [`validate_tree`] on the
    /// result before trusting it.
    ///
    /// [`validate_tree`]: MedBlockTree::validate_tree
    pub fn from_raw(
        params: Arc<GroupParams>,
        blocks: impl IntoIterator<Item = Block>,
        origins: BTreeMap<BranchId, BlockIndex>,
    ) -> Self {
        let mut branches: BTreeMap<BranchId, Vec<Block>> = BTreeMap::new();
        for block in blocks {
            branches.entry(block.index.branch).or_default().push(block);
        }
        let mut tree = MedBlockTree {
            params,
            branches,
            origins,
            patient_tips: BTreeMap::new(),
            verifier: Verifier::direct(),
        };
        tree.patient_tips = tree.scan_patient_tips();
        tree
    }

    pub fn params(&self) -> &Arc<GroupParams> {
        &self.params
    }

    /// Routes this tree's digest checks through `verifier`.
    pub fn with_verifier(mut self, verifier: Verifier) -> Self {
        self.verifier = verifier;
        self
    }

    pub fn set_verifier(&mut self, verifier: Verifier) {
        self.verifier = verifier;
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_ids(&self) -> impl Iterator<Item = BranchId> + '_ {
        self.branches.keys().copied()
    }

    pub fn branch(&self, id: BranchId) -> Option<&[Block]> {
        self.branches.get(&id).map(Vec::as_slice)
    }

    pub fn branches(&self) -> &BTreeMap<BranchId, Vec<Block>> {
        &self.branches
    }

    pub fn origins(&self) -> &BTreeMap<BranchId, BlockIndex> {
        &self.origins
    }

    pub fn genesis_block(&self) -> &Block {
        &self.branches[&DEFAULT_BRANCH][0]
    }

    /// Latest block of a branch (an entry of the former blocks map).
    pub fn former_block(&self, branch: BranchId) -> Option<&Block> {
        self.branches.get(&branch).and_then(|b| b.last())
    }

    /// Branch id to latest block, for every branch.
    pub fn former_blocks(&self) -> BTreeMap<BranchId, &Block> {
        self.branches
            .iter()
            .filter_map(|(id, b)| b.last().map(|blk| (*id, blk)))
            .collect()
    }

    pub fn block(&self, index: BlockIndex) -> Option<&Block> {
        self.branches
            .get(&index.branch)
            .and_then(|b| b.get(usize::try_from(index.seq).ok()?))
    }

    pub fn patient_tip(&self, patient: &Element) -> Option<BlockIndex> {
        self.patient_tips.get(patient).copied()
    }

    pub fn patient_tips(&self) -> &BTreeMap<Element, BlockIndex> {
        &self.patient_tips
    }

    pub fn block_count(&self) -> usize {
        self.branches.values().map(Vec::len).sum()
    }

    /// All blocks, branch by branch in sequence order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.branches.values().flatten()
    }

    /// Builds (but does not append) the next block of `branch` for a
    /// first-time patient.
    ///
    /// `randomness` is the VRF input, i.e. the encoded round randomness of
    /// the branch.
    pub fn make_block<R: RngCore + ?Sized>(
        &self,
        branch: BranchId,
        meta: MetadataPack,
        proposer: &KeyPair,
        randomness: &[u8],
        round: u64,
        rng: &mut R,
    ) -> Result<Block, TreeError> {
        let tip = self
            .former_block(branch)
            .ok_or(TreeError::UnknownBranch(branch))?;
        if self.patient_tips.contains_key(&meta.patient_pk) {
            return Err(TreeError::ReturningPatient);
        }
        let digest = crypto::chamhash(
            &self.params,
            &meta.patient_pk,
            &meta.encode(&self.params),
            rng,
        )?;
        Ok(Block {
            index: BlockIndex::new(branch, tip.index.seq + 1),
            pre_hash: tip.digest.h.clone(),
            digest,
            meta,
            proposer_pk: proposer.pk.clone(),
            vrf: crypto::vrf_prove(&self.params, proposer, randomness),
            committed_round: round,
        })
    }

    /// Re-targets the patient's latest block onto `new_meta`.
    ///
    /// The result keeps the origin's `h` and `pre_hash`; only the check
    /// string and metadata change. It carries the origin's VRF output
    /// unchanged since no election produced it, and names the patient as
    /// proposer.
    pub fn make_collision(
        &self,
        patient: &KeyPair,
        new_meta: MetadataPack,
    ) -> Result<CollisionBlock, TreeError> {
        if new_meta.patient_pk != patient.pk {
            return Err(TreeError::PatientMismatch);
        }
        let origin_index = self
            .patient_tips
            .get(&patient.pk)
            .copied()
            .ok_or(TreeError::NoOrigin)?;
        let origin = self.block(origin_index).ok_or(TreeError::NoOrigin)?;
        // origin is committed, so its digest already verified
        let digest = crypto::collide(
            &self.params,
            patient,
            &origin.meta.encode(&self.params),
            &new_meta.encode(&self.params),
            &origin.digest,
        )?;
        Ok(CollisionBlock {
            block: Block {
                index: origin_index,
                pre_hash: origin.pre_hash.clone(),
                digest,
                meta: new_meta,
                proposer_pk: patient.pk.clone(),
                vrf: origin.vrf.clone(),
                committed_round: origin.committed_round,
            },
            origin_index,
        })
    }

    /// Checks that a collision block may start a new branch.
    pub fn validate_collision(&self, colli: &CollisionBlock) -> Result<(), CollisionRejection> {
        let origin = self
            .block(colli.origin_index)
            .ok_or(CollisionRejection::UnknownOrigin)?;
        let already_claimed = self.origins.iter().any(|(branch, idx)| {
            *idx == colli.origin_index
                && self.branches[branch].first().is_some_and(|root| {
                    root.digest == colli.block.digest && root.meta == colli.block.meta
                })
        });
        if already_claimed {
            return Err(CollisionRejection::Duplicate);
        }
        let patient = &colli.block.meta.patient_pk;
        if origin.meta.patient_pk != *patient {
            return Err(CollisionRejection::PatientMismatch);
        }
        if self.patient_tips.get(patient) != Some(&colli.origin_index) {
            return Err(CollisionRejection::OriginNotPatientTip);
        }
        if colli.block.digest.h != origin.digest.h {
            return Err(CollisionRejection::HashMismatch);
        }
        if colli.block.pre_hash != origin.pre_hash {
            return Err(CollisionRejection::PreHashMismatch);
        }
        if !self.verifier.chameleon(
            &self.params,
            patient,
            &colli.block.message(&self.params),
            &colli.block.digest,
        ) {
            return Err(CollisionRejection::DigestInvalid);
        }
        Ok(())
    }

    /// Claims a collision block as the root `(n, 0)` of a new branch, where
    /// `n` is one more than the largest existing branch id.
    pub fn sprout_branch(
        &mut self,
        colli: &CollisionBlock,
        round: u64,
    ) -> Result<BranchId, TreeError> {
        self.validate_collision(colli)?;
        let id = self.branches.keys().next_back().copied().unwrap_or(0) + 1;
        let mut root = colli.block.clone();
        root.index = BlockIndex::new(id, 0);
        root.committed_round = round;
        self.patient_tips
            .insert(root.meta.patient_pk.clone(), root.index);
        self.branches.insert(id, vec![root]);
        self.origins.insert(id, colli.origin_index);
        Ok(id)
    }

    /// Checks a block against the current tip of its branch.
    pub fn check_append(&self, block: &Block) -> Result<(), TreeError> {
        let branch = block.index.branch;
        let tip = self
            .former_block(branch)
            .ok_or(TreeError::UnknownBranch(branch))?;
        let expected = BlockIndex::new(branch, tip.index.seq + 1);
        if block.index != expected {
            return Err(TreeError::IndexGap {
                expected,
                found: block.index,
            });
        }
        if block.pre_hash != tip.digest.h {
            return Err(TreeError::StalePreHash(branch));
        }
        if self.patient_tips.contains_key(&block.meta.patient_pk) {
            return Err(TreeError::ReturningPatient);
        }
        if !self.verifier.chameleon(
            &self.params,
            &block.meta.patient_pk,
            &block.message(&self.params),
            &block.digest,
        ) {
            return Err(TreeError::DigestInvalid(block.index));
        }
        Ok(())
    }

    pub fn append_block(&mut self, block: Block) -> Result<(), TreeError> {
        self.check_append(&block)?;
        self.push_unchecked(block);
        Ok(())
    }

    fn push_unchecked(&mut self, block: Block) {
        self.patient_tips
            .insert(block.meta.patient_pk.clone(), block.index);
        self.branches
            .get_mut(&block.index.branch)
            .expect("checked branch")
            .push(block);
    }

    /// Extends every branch named in `blockmap` by its block.
    ///
    /// Each branch is accepted or rejected on its own; a rejected branch is
    /// left unchanged.
    pub fn append_blockmap(&mut self, blockmap: &BTreeMap<BranchId, Block>) -> AppendReport {
        let mut report = AppendReport::default();
        let mut seen_patients = BTreeSet::new();
        for (branch, block) in blockmap {
            let result = if block.index.branch != *branch {
                Err(TreeError::BranchMismatch {
                    key: *branch,
                    block: block.index.branch,
                })
            } else if !seen_patients.insert(block.meta.patient_pk.clone()) {
                Err(TreeError::ReturningPatient)
            } else {
                self.check_append(block)
            };
            match result {
                Ok(()) => {
                    self.push_unchecked(block.clone());
                    report.appended.push(*branch);
                }
                Err(e) => report.rejected.push((*branch, e)),
            }
        }
        report
    }

    /// Most recent block per patient by full scan: highest committed round,
    /// with a claimed branch root ordered after plain blocks of that round.
    pub fn scan_patient_tips(&self) -> BTreeMap<Element, BlockIndex> {
        let mut best: BTreeMap<Element, ((u64, u8), BlockIndex)> = BTreeMap::new();
        for block in self.blocks() {
            let is_root = u8::from(block.index.seq == 0 && block.index.branch != DEFAULT_BRANCH);
            let key = (block.committed_round, is_root);
            best.entry(block.meta.patient_pk.clone())
                .and_modify(|cur| {
                    if key > cur.0 {
                        *cur = (key, block.index);
                    }
                })
                .or_insert((key, block.index));
        }
        best.into_iter().map(|(pk, (_, idx))| (pk, idx)).collect()
    }
}

/// Outcome of [`MedBlockTree::append_blockmap`].
#[derive(Debug, Default)]
pub struct AppendReport {
    pub appended: Vec<BranchId>,
    pub rejected: Vec<(BranchId, TreeError)>,
}

impl AppendReport {
    pub fn is_complete(&self) -> bool {
        self.rejected.is_empty()
    }
}
