use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::ledger::{Ledger, LedgerBlock};
use super::messages::{blockmap_digest, Message, Proposal, RoundSync, Vote, VoteKind};
use super::stake::{
    assign_pool, elect_winners, RoundRandomness, SubNodeTable, WinnersMap, WorkerIdentity,
};
use crate::crypto::{std_hash, Element, HashDigest};
use crate::tree::{BranchId, CollisionBlock, MetadataPack, TreeError};

/// How a worker treats the protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Behavior {
    Honest,
    /// Sends nothing at all.
    Silent,
    /// Splits the other workers in two halves and tells each half a
    /// different story: two proposals per won branch, and pre-votes and
    /// commit votes for two digests.
    Equivocating,
    /// Votes honestly but proposes blocks whose metadata was altered after
    /// hashing.
    InvalidProposal,
}

impl Behavior {
    pub fn is_honest(self) -> bool {
        self == Behavior::Honest
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProposalRejection {
    #[error("branch B{0} has no metadata assigned this round")]
    NotAssigned(BranchId),
    #[error("proposer is not the elected winner")]
    WrongProposer,
    #[error("proposal signature does not verify")]
    BadSignature,
    #[error("VRF proof does not verify for the branch randomness")]
    BadVrf,
    #[error("block carries metadata other than the pool assignment")]
    AssignmentMismatch,
    #[error(transparent)]
    Ledger(#[from] TreeError),
}

/// Checks a proposal against the local view: elected winner, proposal
/// signature, VRF over the branch randomness, and linkage plus digest
/// against the local branch tip.
pub fn validate_proposal<L: Ledger>(
    ledger: &L,
    proposal: &Proposal<L::Block>,
    expected_winner: &Element,
    randomness: &RoundRandomness,
) -> Result<(), ProposalRejection> {
    let params = ledger.params();
    let block = &proposal.block;
    if block.proposer() != expected_winner {
        return Err(ProposalRejection::WrongProposer);
    }
    if !proposal.signature_valid(params, ledger.verifier()) {
        return Err(ProposalRejection::BadSignature);
    }
    if !ledger
        .verifier()
        .vrf(params, block.proposer(), &randomness.encode(), block.vrf())
    {
        return Err(ProposalRejection::BadVrf);
    }
    ledger.check_block(block)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Recipients {
    All,
    Only(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing<B> {
    pub to: Recipients,
    pub msg: Message<B>,
}

#[derive(Clone, Debug, Default)]
struct Tally {
    /// First vote per voter.
    votes: BTreeMap<Element, Vote>,
    power: HashMap<HashDigest, u64>,
}

impl Tally {
    /// Records the vote if it is the voter's first; returns the digest's
    /// new power when counted.
    fn add(&mut self, vote: Vote) -> Option<u64> {
        if self.votes.contains_key(&vote.voter_pk) {
            return None;
        }
        let p = self.power.entry(vote.blockmap_digest).or_default();
        *p += vote.power;
        let total = *p;
        self.votes.insert(vote.voter_pk.clone(), vote);
        Some(total)
    }

    fn power_of(&self, digest: &HashDigest) -> u64 {
        self.power.get(digest).copied().unwrap_or(0)
    }

    fn max_power(&self) -> u64 {
        self.power.values().copied().max().unwrap_or(0)
    }

    fn at_least(&self, quorum: u64) -> BTreeSet<HashDigest> {
        self.power
            .iter()
            .filter(|(_, p)| **p >= quorum)
            .map(|(d, _)| *d)
            .collect()
    }
}

#[derive(Clone, Debug)]
struct RoundState<B> {
    round: u64,
    randomness: BTreeMap<BranchId, RoundRandomness>,
    winners: WinnersMap,
    assignment: BTreeMap<BranchId, MetadataPack>,
    accepted: BTreeMap<BranchId, B>,
    rejected: BTreeMap<BranchId, ProposalRejection>,
    maps: HashMap<HashDigest, BTreeMap<BranchId, B>>,
    prevoted: Option<HashDigest>,
    committed: Option<HashDigest>,
    decided: Option<HashDigest>,
    prevotes: Tally,
    commits: Tally,
    claims: Vec<CollisionBlock>,
}

/// What a worker did when its round closed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinishReport {
    pub appended: Vec<BranchId>,
    pub rejected: Vec<(BranchId, TreeError)>,
    pub claimed: Vec<BranchId>,
    pub unclaimed: Vec<TreeError>,
}

/// One worker's protocol state machine and ledger replica.
#[derive(Clone, Debug)]
pub struct Worker<L: Ledger> {
    index: usize,
    identity: WorkerIdentity,
    behavior: Behavior,
    ledger: L,
    table: Arc<SubNodeTable>,
    rng: ChaCha20Rng,
    state: Option<RoundState<L::Block>>,
}

impl<L: Ledger> Worker<L> {
    pub fn new(
        index: usize,
        identity: WorkerIdentity,
        behavior: Behavior,
        ledger: L,
        table: Arc<SubNodeTable>,
        seed: u64,
    ) -> Self {
        let mut key = seed.to_be_bytes().to_vec();
        key.extend_from_slice(&(index as u64).to_be_bytes());
        Worker {
            index,
            identity,
            behavior,
            ledger,
            table,
            rng: ChaCha20Rng::from_seed(std_hash(&key)),
            state: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn identity(&self) -> &WorkerIdentity {
        &self.identity
    }

    pub fn pk(&self) -> &Element {
        &self.identity.keys.pk
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn ledger(&self) -> &L {
        &self.ledger
    }

    pub fn winners(&self) -> Option<&WinnersMap> {
        self.state.as_ref().map(|s| &s.winners)
    }

    pub fn assignment(&self) -> Option<&BTreeMap<BranchId, MetadataPack>> {
        self.state.as_ref().map(|s| &s.assignment)
    }

    pub fn rejected(&self) -> Option<&BTreeMap<BranchId, ProposalRejection>> {
        self.state.as_ref().map(|s| &s.rejected)
    }

    pub fn has_prevoted(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.prevoted.is_some())
    }

    pub fn decision(&self) -> Option<HashDigest> {
        self.state.as_ref().and_then(|s| s.decided)
    }

    pub fn map_for(&self, digest: &HashDigest) -> Option<&BTreeMap<BranchId, L::Block>> {
        self.state.as_ref().and_then(|s| s.maps.get(digest))
    }

    pub fn prevote_power(&self, digest: &HashDigest) -> u64 {
        self.state
            .as_ref()
            .map_or(0, |s| s.prevotes.power_of(digest))
    }

    pub fn commit_power(&self, digest: &HashDigest) -> u64 {
        self.state
            .as_ref()
            .map_or(0, |s| s.commits.power_of(digest))
    }

    pub fn max_prevote_power(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.prevotes.max_power())
    }

    pub fn max_commit_power(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.commits.max_power())
    }

    /// Digests this worker has seen reach commit quorum.
    pub fn commit_quorum_digests(&self) -> BTreeSet<HashDigest> {
        self.state
            .as_ref()
            .map_or_else(BTreeSet::new, |s| s.commits.at_least(self.table.quorum()))
    }

    /// Commit votes for `digest` this worker counted.
    pub fn certificate(&self, digest: &HashDigest) -> Vec<Vote> {
        self.state.as_ref().map_or_else(Vec::new, |s| {
            s.commits
                .votes
                .values()
                .filter(|v| v.blockmap_digest == *digest)
                .cloned()
                .collect()
        })
    }

    fn others_split(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.table.len();
        let others: Vec<usize> = (0..n).filter(|i| *i != self.index).collect();
        let half = others.len().div_ceil(2);
        let mut a = vec![self.index];
        a.extend_from_slice(&others[..half]);
        (a, others[half..].to_vec())
    }

    fn power(&self) -> u64 {
        self.identity.tokens
    }

    /// Round start. Returns this worker's proposals (and its pre-vote when
    /// no branch has work) plus the number of blocks it formed.
    pub fn begin_round(&mut self, sync: RoundSync) -> (Vec<Outgoing<L::Block>>, usize) {
        let randomness = self.ledger.randomness();
        let winners = elect_winners(&randomness, &self.table);
        let assignment = assign_pool(&sync.pool, randomness.keys().copied());
        self.state = Some(RoundState {
            round: sync.round,
            randomness,
            winners,
            assignment,
            accepted: BTreeMap::new(),
            rejected: BTreeMap::new(),
            maps: HashMap::new(),
            prevoted: None,
            committed: None,
            decided: None,
            prevotes: Tally::default(),
            commits: Tally::default(),
            claims: sync.claims,
        });
        let mut out = Vec::new();
        let mut formed = 0;
        if self.behavior != Behavior::Silent {
            let state = self.state.as_ref().expect("just set");
            let mine: Vec<(BranchId, MetadataPack)> = state
                .assignment
                .iter()
                .filter(|(b, _)| state.winners.get(b) == Some(self.pk()))
                .map(|(b, m)| (*b, m.clone()))
                .collect();
            for (branch, meta) in mine {
                formed += 1;
                out.extend(self.propose(branch, meta));
            }
        }
        out.extend(self.maybe_prevote(false));
        (out, formed)
    }

    fn propose(&mut self, branch: BranchId, meta: MetadataPack) -> Vec<Outgoing<L::Block>> {
        let state = self.state.as_ref().expect("round started");
        let round = state.round;
        let randomness = state.randomness[&branch].clone();
        let params = self.ledger.params().clone();
        let keys = self.identity.keys.clone();
        let Ok(mut block) = self.ledger.propose(
            branch,
            meta.clone(),
            &keys,
            &randomness,
            round,
            &mut self.rng,
        ) else {
            return Vec::new();
        };
        match self.behavior {
            Behavior::InvalidProposal => {
                tamper(&mut block);
                vec![Outgoing {
                    to: Recipients::All,
                    msg: Message::Proposal(Proposal::new(&params, &keys, round, block)),
                }]
            }
            Behavior::Equivocating => {
                let Ok(twin) =
                    self.ledger
                        .propose(branch, meta, &keys, &randomness, round, &mut self.rng)
                else {
                    return Vec::new();
                };
                let (a, b) = self.others_split();
                vec![
                    Outgoing {
                        to: Recipients::Only(a),
                        msg: Message::Proposal(Proposal::new(&params, &keys, round, block)),
                    },
                    Outgoing {
                        to: Recipients::Only(b),
                        msg: Message::Proposal(Proposal::new(&params, &keys, round, twin)),
                    },
                ]
            }
            _ => vec![Outgoing {
                to: Recipients::All,
                msg: Message::Proposal(Proposal::new(&params, &keys, round, block)),
            }],
        }
    }

    /// Pre-votes once every assigned branch has a verdict, or
    /// unconditionally when `timed_out`.
    fn maybe_prevote(&mut self, timed_out: bool) -> Vec<Outgoing<L::Block>> {
        let params = self.ledger.params().clone();
        let Some(state) = self.state.as_mut() else {
            return Vec::new();
        };
        if state.prevoted.is_some() {
            return Vec::new();
        }
        let resolved = state
            .assignment
            .keys()
            .all(|b| state.accepted.contains_key(b) || state.rejected.contains_key(b));
        if !resolved && !timed_out {
            return Vec::new();
        }
        let map = state.accepted.clone();
        let digest = blockmap_digest(&params, state.round, &map);
        state.maps.insert(digest, map);
        state.prevoted = Some(digest);
        self.cast(VoteKind::PreVote, digest)
    }

    fn cast(&mut self, kind: VoteKind, digest: HashDigest) -> Vec<Outgoing<L::Block>> {
        let params = self.ledger.params().clone();
        let round = self.state.as_ref().expect("round started").round;
        let wrap = |v: Vote| match kind {
            VoteKind::PreVote => Message::PreVote(v),
            VoteKind::Commit => Message::CommitVote(v),
        };
        match self.behavior {
            Behavior::Silent => Vec::new(),
            Behavior::Equivocating => {
                let mut fake_input = digest.to_vec();
                fake_input.extend_from_slice(&(self.index as u64).to_be_bytes());
                let fake = std_hash(&fake_input);
                let (a, b) = self.others_split();
                vec![
                    Outgoing {
                        to: Recipients::Only(a),
                        msg: wrap(Vote::new(
                            &params,
                            kind,
                            &self.identity.keys,
                            round,
                            digest,
                            self.power(),
                        )),
                    },
                    Outgoing {
                        to: Recipients::Only(b),
                        msg: wrap(Vote::new(
                            &params,
                            kind,
                            &self.identity.keys,
                            round,
                            fake,
                            self.power(),
                        )),
                    },
                ]
            }
            _ => vec![Outgoing {
                to: Recipients::All,
                msg: wrap(Vote::new(
                    &params,
                    kind,
                    &self.identity.keys,
                    round,
                    digest,
                    self.power(),
                )),
            }],
        }
    }

    /// The propose timeout fired: pre-vote on what has arrived.
    pub fn on_propose_timeout(&mut self) -> Vec<Outgoing<L::Block>> {
        self.maybe_prevote(true)
    }

    pub fn handle(&mut self, msg: Message<L::Block>) -> Vec<Outgoing<L::Block>> {
        match msg {
            Message::RoundSync(sync) => self.begin_round(sync).0,
            Message::Proposal(p) => self.on_proposal(p),
            Message::PreVote(v) => self.on_vote(v, VoteKind::PreVote),
            Message::CommitVote(v) => self.on_vote(v, VoteKind::Commit),
        }
    }

    fn on_proposal(&mut self, proposal: Proposal<L::Block>) -> Vec<Outgoing<L::Block>> {
        let Some(state) = self.state.as_ref() else {
            return Vec::new();
        };
        let branch = proposal.block.branch();
        if proposal.round != state.round
            || state.accepted.contains_key(&branch)
            || state.rejected.contains_key(&branch)
        {
            return Vec::new();
        }
        let verdict = match (state.assignment.get(&branch), state.winners.get(&branch)) {
            (Some(meta), Some(winner)) => {
                if proposal.block.meta() != meta {
                    Err(ProposalRejection::AssignmentMismatch)
                } else {
                    validate_proposal(&self.ledger, &proposal, winner, &state.randomness[&branch])
                }
            }
            _ => Err(ProposalRejection::NotAssigned(branch)),
        };
        let state = self.state.as_mut().expect("checked");
        match verdict {
            Ok(()) => {
                state.accepted.insert(branch, proposal.block);
            }
            Err(ProposalRejection::NotAssigned(_)) => return Vec::new(),
            Err(e) => {
                state.rejected.insert(branch, e);
            }
        }
        self.maybe_prevote(false)
    }

    fn on_vote(&mut self, vote: Vote, kind: VoteKind) -> Vec<Outgoing<L::Block>> {
        let quorum = self.table.quorum();
        let params = self.ledger.params().clone();
        let Some(state) = self.state.as_ref() else {
            return Vec::new();
        };
        if vote.kind != kind
            || vote.round != state.round
            || self.table.power_of(&vote.voter_pk) != Some(vote.power)
        {
            return Vec::new();
        }
        let tally = match kind {
            VoteKind::PreVote => &state.prevotes,
            VoteKind::Commit => &state.commits,
        };
        if tally.votes.contains_key(&vote.voter_pk) || !vote.verify(&params, self.ledger.verifier())
        {
            return Vec::new();
        }
        let digest = vote.blockmap_digest;
        let state = self.state.as_mut().expect("checked");
        match kind {
            VoteKind::PreVote => {
                let Some(power) = state.prevotes.add(vote) else {
                    return Vec::new();
                };
                if power >= quorum && state.committed.is_none() {
                    state.committed = Some(digest);
                    return self.cast(VoteKind::Commit, digest);
                }
            }
            VoteKind::Commit => {
                let Some(power) = state.commits.add(vote) else {
                    return Vec::new();
                };
                if power >= quorum && state.decided.is_none() {
                    state.decided = Some(digest);
                }
            }
        }
        Vec::new()
    }

    /// Checks a peer's commit certificate for `map` and adopts it as this
    /// worker's decision.
    pub fn adopt(
        &mut self,
        digest: HashDigest,
        map: &BTreeMap<BranchId, L::Block>,
        certificate: &[Vote],
    ) -> bool {
        let params = self.ledger.params().clone();
        let Some(state) = self.state.as_ref() else {
            return false;
        };
        if blockmap_digest(&params, state.round, map) != digest {
            return false;
        }
        let mut voters = BTreeSet::new();
        let mut power = 0;
        for v in certificate {
            if v.kind == VoteKind::Commit
                && v.round == state.round
                && v.blockmap_digest == digest
                && self.table.power_of(&v.voter_pk) == Some(v.power)
                && voters.insert(v.voter_pk.clone())
                && v.verify(&params, self.ledger.verifier())
            {
                power += v.power;
            }
        }
        if power < self.table.quorum() {
            return false;
        }
        let state = self.state.as_mut().expect("checked");
        state.maps.insert(digest, map.clone());
        state.decided = Some(digest);
        true
    }

    /// Tree update: append the decided BlockMap, then claim every collision
    /// block handed over at round start, committed or not.
    pub fn finish_round(&mut self) -> FinishReport {
        let mut report = FinishReport::default();
        let Some(state) = self.state.take() else {
            return report;
        };
        if let Some(map) = state.decided.and_then(|d| state.maps.get(&d)) {
            let r = self.ledger.append_blockmap(map);
            report.appended = r.appended;
            report.rejected = r.rejected;
        }
        for colli in &state.claims {
            match self.ledger.claim_collision(colli, state.round) {
                Ok(id) => report.claimed.push(id),
                Err(e) => report.unclaimed.push(e),
            }
        }
        report
    }
}

fn tamper<B: LedgerBlock>(block: &mut B) {
    block.meta_mut().keywords.push('!');
}
