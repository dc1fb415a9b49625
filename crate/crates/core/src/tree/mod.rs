//! Blocks, branches and the MedBlockTree.
//!
//! Branch 1 is the default chain starting at the genesis block. Every other
//! branch starts at a claimed collision block: a copy of some patient's latest
//! block carrying new metadata under the same chameleon hash value.

mod block;
mod export;
mod medtree;
mod validate;

use thiserror::Error;

use crate::crypto::CryptoError;

pub use block::{Block, BlockIndex, BranchId, CollisionBlock, MetadataPack, DEFAULT_BRANCH};
pub use export::{
    export_tree, import_tree, read_tree_file, write_tree_file, EXPORT_FORMAT, EXPORT_VERSION,
};
pub use medtree::{AppendReport, MedBlockTree};
pub use validate::{Finding, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("unknown branch B{0}")]
    UnknownBranch(BranchId),
    #[error("patient already has a block on the tree")]
    ReturningPatient,
    #[error("patient has no block to collide with")]
    NoOrigin,
    #[error("metadata names a different patient than the key holder")]
    PatientMismatch,
    #[error("expected index {expected}, found {found}")]
    IndexGap {
        expected: BlockIndex,
        found: BlockIndex,
    },
    #[error("pre_hash does not match the tip of B{0}")]
    StalePreHash(BranchId),
    #[error("chameleon digest of {0} does not verify")]
    DigestInvalid(BlockIndex),
    #[error("blockmap key B{key} holds a block for B{block}")]
    BranchMismatch { key: BranchId, block: BranchId },
    #[error("invalid collision block: {0}")]
    InvalidCollision(#[from] CollisionRejection),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("this ledger has a single chain and cannot sprout branches")]
    BranchesUnsupported,
    #[error("tree import: {0}")]
    Import(String),
}

/// Why a collision block may not start a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CollisionRejection {
    #[error("origin block is not on the tree")]
    UnknownOrigin,
    #[error("collision block was already claimed")]
    Duplicate,
    #[error("patient differs from the origin block's patient")]
    PatientMismatch,
    #[error("origin is not the patient's latest block")]
    OriginNotPatientTip,
    #[error("hash value differs from the origin's")]
    HashMismatch,
    #[error("pre_hash differs from the origin's")]
    PreHashMismatch,
    #[error("digest does not verify for the new metadata")]
    DigestInvalid,
}
