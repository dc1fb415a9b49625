//! EnhancedPro: per-branch stake-weighted winner election followed by a
//! two-phase BFT vote on the whole BlockMap, plus the single-chain baseline
//! run by the same machinery.
//!
//! A round goes: every worker elects the winner of each branch from the
//! branch tip's check string, winners broadcast one proposal per assigned
//! branch, each worker pre-votes the digest of the proposals it accepted,
//! commit-votes a digest once it has seen two thirds of the power pre-vote
//! it, and decides at two thirds of commit power. The tree update then
//! appends the decided BlockMap and claims pending collision blocks.

mod ledger;
mod messages;
mod round;
mod stake;
mod worker;

use thiserror::Error;

pub use ledger::{BaselineChain, ChainBlock, Ledger, LedgerBlock};
pub use messages::{
    blockmap_digest, encode_blockmap, Message, Proposal, RoundSync, Vote, VoteKind,
    PROPOSAL_DOMAIN, VOTE_DOMAIN,
};
pub use round::{
    run_baseline_round, run_round, Cluster, Delivery, InstantTransport, RoundOutcome,
    ShuffledTransport, Transport,
};
pub use stake::{
    assign_pool, elect_winners, MetadataPool, RoundRandomness, SubNodeRange, SubNodeTable,
    WinnersMap, WorkerIdentity,
};
pub use worker::{
    validate_proposal, Behavior, FinishReport, Outgoing, ProposalRejection, Recipients, Worker,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("no workers")]
    EmptyTable,
    #[error("every worker needs at least one token")]
    ZeroTokens,
    #[error("two workers share a public key")]
    DuplicateWorker,
    #[error("total stake overflows u64")]
    StakeOverflow,
    #[error("round {round}: honest workers decided different BlockMaps")]
    SafetyViolation { round: u64 },
    #[error("round {round}: decided BlockMap is held by no worker")]
    MissingBlockMap { round: u64 },
    #[error("round {round}: decided BlockMap failed to append: {reason}")]
    AppendFailed { round: u64, reason: String },
}
