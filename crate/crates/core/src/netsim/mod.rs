//! Deterministic discrete-event simulation of a worker network.
//!
//! Time is simulated milliseconds. Each round is charged three phases:
//! block formation from the [`CostModel`], message passing over a
//! [`SimTransport`] until every worker decides, and a database phase of one
//! write per appended block or claimed branch root. The next round starts
//! when the previous one ends. All metadata is queued at time zero, and a
//! [`CollisionActor`] releases returning-patient collisions on a fixed
//! interval.

mod actor;
mod metrics;
mod oracle;
mod transport;

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    BaselineChain, Behavior, Cluster, ConsensusError, Ledger, MetadataPool, RoundOutcome,
    WorkerIdentity,
};
use crate::crypto::{self, std_hash, KeyPair, Profile, Verifier};
use crate::tree::{Block, CollisionBlock, MedBlockTree, MetadataPack, TreeError, DEFAULT_BRANCH};

pub use actor::{CollisionActor, COLLISION_META_BASE};
pub use metrics::{MetricsLog, RoundRecord, Summary, CSV_HEADER, CSV_VERSION_LINE};
pub use oracle::{drain_schedule, replay_with_collisions};
pub use transport::{LatencyModel, RoundTiming, SimEvent, SimTransport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    MedBlockTree,
    Baseline,
}

impl std::str::FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "medblocktree" | "mbt" => Ok(Mode::MedBlockTree),
            "baseline" | "bc" => Ok(Mode::Baseline),
            other => Err(SimError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Simulated compute costs in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub sha_block_ms: u64,
    pub chame_block_ms: u64,
    pub colli_block_ms: u64,
    pub db_write_ms: u64,
    /// Time a worker spends receiving and checking one message.
    pub handle_ms: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            sha_block_ms: 55,
            chame_block_ms: 62,
            colli_block_ms: 27,
            db_write_ms: 11,
            handle_ms: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub worker_count: usize,
    /// Stake per worker; empty means one token each.
    pub tokens_per_worker: Vec<u64>,
    pub latency: LatencyModel,
    pub metadata_count: usize,
    /// `None` disables returning patients.
    pub collision_interval_s: Option<u64>,
    /// Branches present before the first round, sprouted from seed patients
    /// outside the measurement.
    pub initial_branches: usize,
    /// No collision is released while this many branches exist or are
    /// pending.
    pub branch_cap: Option<usize>,
    pub rng_seed: u64,
    pub mode: Mode,
    pub costs: CostModel,
    pub profile: Profile,
    pub propose_timeout_ms: u64,
    /// Abort after this many rounds; defaults to a bound no honest run
    /// reaches.
    pub max_rounds: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            worker_count: 4,
            tokens_per_worker: Vec::new(),
            latency: LatencyModel::fixed(100),
            metadata_count: 2000,
            collision_interval_s: None,
            initial_branches: 1,
            branch_cap: None,
            rng_seed: 0,
            mode: Mode::MedBlockTree,
            costs: CostModel::default(),
            profile: Profile::Test,
            propose_timeout_ms: 1000,
            max_rounds: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.worker_count == 0 {
            return bad("worker_count must be at least 1");
        }
        if !self.tokens_per_worker.is_empty() && self.tokens_per_worker.len() != self.worker_count {
            return bad("tokens_per_worker needs one entry per worker");
        }
        if self.tokens_per_worker.contains(&0) {
            return bad("every worker needs at least one token");
        }
        if self.collision_interval_s == Some(0) {
            return bad("collision interval must be positive");
        }
        if self.initial_branches == 0 {
            return bad("initial_branches must be at least 1");
        }
        if self.branch_cap.is_some_and(|c| c < self.initial_branches) {
            return bad("branch_cap is below initial_branches");
        }
        if self.mode == Mode::Baseline && self.initial_branches != 1 {
            return bad("the baseline has a single chain");
        }
        Ok(())
    }

    fn tokens(&self) -> Vec<u64> {
        if self.tokens_per_worker.is_empty() {
            vec![1; self.worker_count]
        } else {
            self.tokens_per_worker.clone()
        }
    }

    fn round_limit(&self) -> u64 {
        self.max_rounds
            .unwrap_or(2 * self.metadata_count as u64 + 100)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gave up after {0} rounds with metadata still queued")]
    RoundLimit(u64),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("setup failed: {0}")]
    Setup(#[from] TreeError),
    #[error("round {round}: {reason}")]
    Invariant { round: u64, reason: String },
}

/// Result of a run: the log plus the final ledger of the first worker.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub log: MetricsLog,
    pub tree: Option<MedBlockTree>,
    pub collisions_released: u64,
}

/// Deterministic in `config`: same config, same log.
pub fn run_simulation(config: &SimConfig) -> Result<MetricsLog, SimError> {
    simulate(config).map(|run| run.log)
}

pub fn simulate(config: &SimConfig) -> Result<SimRun, SimError> {
    config.validate()?;
    let params = config.profile.params();
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let authority = crypto::keygen(&params, &mut rng);
    let doctor = crypto::keygen(&params, &mut rng);
    let ids: Vec<WorkerIdentity> = config
        .tokens()
        .into_iter()
        .map(|tokens| WorkerIdentity {
            keys: crypto::keygen(&params, &mut rng),
            tokens,
        })
        .collect();
    let members: Vec<(WorkerIdentity, Behavior)> =
        ids.into_iter().map(|w| (w, Behavior::Honest)).collect();

    let mut patients: Vec<KeyPair> = Vec::with_capacity(config.metadata_count);
    let mut pool = MetadataPool::new();
    for id in 0..config.metadata_count as u64 {
        let p = crypto::keygen(&params, &mut rng);
        pool.push(MetadataPack {
            patient_pk: p.pk.clone(),
            doctor_pk: doctor.pk.clone(),
            timestamp_ms: 0,
            keywords: format!("visit-{id}"),
            meta_id: id,
        });
        patients.push(p);
    }

    match config.mode {
        Mode::Baseline => {
            let mut chain = BaselineChain::genesis(params, &authority);
            chain.set_verifier(Verifier::cached());
            let mut cluster = Cluster::new(chain, members, config.rng_seed)?;
            let log = drive(
                config,
                &mut cluster,
                &mut pool,
                |_, _| Vec::new(),
                |_, _, _| {},
            )?;
            Ok(SimRun {
                log,
                tree: None,
                collisions_released: 0,
            })
        }
        Mode::MedBlockTree => {
            let mut tree = MedBlockTree::genesis(params.clone(), &authority, &mut rng)?
                .with_verifier(Verifier::cached());
            preseed(&mut tree, config.initial_branches, &doctor, &mut rng)?;
            let mut cluster = Cluster::new(tree, members, config.rng_seed)?;
            let actor = RefCell::new(config.collision_interval_s.map(|s| {
                CollisionActor::new(
                    s * 1000,
                    config.costs.colli_block_ms,
                    doctor.pk.clone(),
                    config.branch_cap,
                )
            }));
            let log = drive(
                config,
                &mut cluster,
                &mut pool,
                |tree: &MedBlockTree, now| match actor.borrow_mut().as_mut() {
                    Some(a) => {
                        a.tick_until(now, tree);
                        a.take_ready(now)
                    }
                    None => Vec::new(),
                },
                |out: &RoundOutcome<Block>, claims, end| {
                    if let Some(a) = actor.borrow_mut().as_mut() {
                        for b in out.blockmap.values() {
                            a.register(patients[b.meta.meta_id as usize].clone(), end);
                        }
                        a.claimed(claims, end);
                    }
                },
            )?;
            let tree = cluster.ledger().clone();
            let report = tree.validate_tree();
            if !report.is_clean() {
                return Err(SimError::Invariant {
                    round: log.rounds(),
                    reason: report.to_string(),
                });
            }
            Ok(SimRun {
                log,
                tree: Some(tree),
                collisions_released: actor.into_inner().map_or(0, |a| a.released()),
            })
        }
    }
}

/// Sprouts `branches - 1` extra branches from seed patients before any
/// round runs.
fn preseed(
    tree: &mut MedBlockTree,
    branches: usize,
    doctor: &KeyPair,
    rng: &mut ChaCha20Rng,
) -> Result<(), TreeError> {
    let params = tree.params().clone();
    for k in 1..branches as u64 {
        let seed_patient = crypto::keygen(&params, rng);
        let meta = |tag: &str, id: u64| MetadataPack {
            patient_pk: seed_patient.pk.clone(),
            doctor_pk: doctor.pk.clone(),
            timestamp_ms: 0,
            keywords: format!("{tag}-{k}"),
            meta_id: COLLISION_META_BASE / 2 + id,
        };
        let block =
            tree.make_block(DEFAULT_BRANCH, meta("seed", 2 * k), doctor, b"seed", 0, rng)?;
        tree.append_block(block)?;
        let colli = tree.make_collision(&seed_patient, meta("branch", 2 * k + 1))?;
        tree.sprout_branch(&colli, 0)?;
    }
    Ok(())
}

fn drive<L, C, E>(
    config: &SimConfig,
    cluster: &mut Cluster<L>,
    pool: &mut MetadataPool,
    mut claims_at: C,
    mut on_end: E,
) -> Result<MetricsLog, SimError>
where
    L: Ledger,
    C: FnMut(&L, u64) -> Vec<CollisionBlock>,
    E: FnMut(&RoundOutcome<L::Block>, &[CollisionBlock], u64),
{
    let formation_ms = match config.mode {
        Mode::MedBlockTree => config.costs.chame_block_ms,
        Mode::Baseline => config.costs.sha_block_ms,
    };
    let mut log = MetricsLog::new();
    let mut now = 0u64;
    while !pool.is_empty() {
        if log.rounds() >= config.round_limit() {
            return Err(SimError::RoundLimit(log.rounds()));
        }
        let claims = claims_at(cluster.ledger(), now);
        let branches = cluster.ledger().branch_count();
        let round = cluster.next_round();
        let mut seed_input = config.rng_seed.to_be_bytes().to_vec();
        seed_input.extend_from_slice(&round.to_be_bytes());
        let mut transport = SimTransport::new(
            now,
            cluster.len(),
            config.latency,
            config.costs.handle_ms,
            formation_ms,
            config.propose_timeout_ms,
            std_hash(&seed_input),
        );
        let out = cluster.run_round(pool, claims.clone(), &mut transport)?;
        if out.unclaimed > 0 {
            return Err(SimError::Invariant {
                round,
                reason: format!("{} collision blocks were refused", out.unclaimed),
            });
        }
        let timing = transport.timing();
        let writes = (out.blocks_committed() + out.claimed.len()) as u64;
        let table = cluster.table();
        let winners = out
            .winners
            .iter()
            .map(|(b, pk)| (*b, table.position(pk).expect("winner is in the table")))
            .collect();
        let record = RoundRecord {
            round,
            start_ms: now,
            phase_self_ms: timing.self_ms,
            phase_net_ms: timing.net_ms,
            phase_db_ms: writes * config.costs.db_write_ms,
            committed: out.committed,
            blocks: out.blocks_committed(),
            branches,
            claimed: out.claimed.len(),
            winners,
        };
        now = record.end_ms();
        on_end(&out, &claims, now);
        log.push(record);
    }
    Ok(log)
}
