//! Wire messages and their canonical encodings.
//!
//! Every multi-byte integer is big-endian; group values use the profile
//! width.

use std::collections::BTreeMap;

use super::ledger::LedgerBlock;
use crate::crypto::{
    self, std_hash, Element, GroupParams, HashDigest, KeyPair, Signature, Verifier,
};
use crate::tree::{BranchId, CollisionBlock, MetadataPack};

pub const VOTE_DOMAIN: &[u8] = b"medblocktree/vote";
pub const PROPOSAL_DOMAIN: &[u8] = b"medblocktree/proposal";

/// `round u64 | count u32 | (branch u32 | len u32 | block)*` in ascending
/// branch order.
pub fn encode_blockmap<B: LedgerBlock>(
    params: &GroupParams,
    round: u64,
    map: &BTreeMap<BranchId, B>,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&round.to_be_bytes());
    out.extend_from_slice(&(map.len() as u32).to_be_bytes());
    for (branch, block) in map {
        let enc = block.encode(params);
        out.extend_from_slice(&branch.to_be_bytes());
        out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
        out.extend_from_slice(&enc);
    }
    out
}

pub fn blockmap_digest<B: LedgerBlock>(
    params: &GroupParams,
    round: u64,
    map: &BTreeMap<BranchId, B>,
) -> HashDigest {
    std_hash(&encode_blockmap(params, round, map))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoteKind {
    PreVote = 1,
    Commit = 2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub kind: VoteKind,
    pub voter_pk: Element,
    pub round: u64,
    pub blockmap_digest: HashDigest,
    pub power: u64,
    pub signature: Signature,
}

impl Vote {
    /// `kind u8 | voter_pk | round u64 | blockmap_digest | power u64`; the
    /// signed bytes.
    pub fn encode_body(
        params: &GroupParams,
        kind: VoteKind,
        voter_pk: &Element,
        round: u64,
        digest: &HashDigest,
        power: u64,
    ) -> Vec<u8> {
        let mut out = Vec::with_capacity(params.width() + 49);
        out.push(kind as u8);
        params.write_element(&mut out, voter_pk);
        out.extend_from_slice(&round.to_be_bytes());
        out.extend_from_slice(digest);
        out.extend_from_slice(&power.to_be_bytes());
        out
    }

    pub fn new(
        params: &GroupParams,
        kind: VoteKind,
        voter: &KeyPair,
        round: u64,
        digest: HashDigest,
        power: u64,
    ) -> Self {
        let body = Self::encode_body(params, kind, &voter.pk, round, &digest, power);
        Vote {
            kind,
            voter_pk: voter.pk.clone(),
            round,
            blockmap_digest: digest,
            power,
            signature: crypto::sign(params, voter, VOTE_DOMAIN, &body),
        }
    }

    pub fn verify(&self, params: &GroupParams, verifier: &Verifier) -> bool {
        let body = Self::encode_body(
            params,
            self.kind,
            &self.voter_pk,
            self.round,
            &self.blockmap_digest,
            self.power,
        );
        verifier.signature(params, &self.voter_pk, VOTE_DOMAIN, &body, &self.signature)
    }
}

/// A winner's block for one branch, signed over `round u64 | block`.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal<B> {
    pub round: u64,
    pub block: B,
    pub signature: Signature,
}

impl<B: LedgerBlock> Proposal<B> {
    fn body(params: &GroupParams, round: u64, block: &B) -> Vec<u8> {
        let mut out = round.to_be_bytes().to_vec();
        out.extend_from_slice(&block.encode(params));
        out
    }

    pub fn new(params: &GroupParams, proposer: &KeyPair, round: u64, block: B) -> Self {
        let signature = crypto::sign(
            params,
            proposer,
            PROPOSAL_DOMAIN,
            &Self::body(params, round, &block),
        );
        Proposal {
            round,
            block,
            signature,
        }
    }

    pub fn signature_valid(&self, params: &GroupParams, verifier: &Verifier) -> bool {
        verifier.signature(
            params,
            self.block.proposer(),
            PROPOSAL_DOMAIN,
            &Self::body(params, self.round, &self.block),
            &self.signature,
        )
    }
}

/// Local round start: the pool snapshot every worker dispatches from and
/// the collision blocks to claim when the round ends.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSync {
    pub round: u64,
    pub pool: Vec<MetadataPack>,
    pub claims: Vec<CollisionBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message<B> {
    Proposal(Proposal<B>),
    PreVote(Vote),
    CommitVote(Vote),
    RoundSync(RoundSync),
}

impl<B> Message<B> {
    /// Tiebreak rank for same-instant deliveries.
    pub fn kind_rank(&self) -> u8 {
        match self {
            Message::RoundSync(_) => 0,
            Message::Proposal(_) => 1,
            Message::PreVote(_) => 2,
            Message::CommitVote(_) => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::RoundSync(_) => "round-sync",
            Message::Proposal(_) => "proposal",
            Message::PreVote(_) => "pre-vote",
            Message::CommitVote(_) => "commit-vote",
        }
    }
}
