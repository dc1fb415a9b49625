use std::fmt::Write as _;
use std::time::{Duration, Instant};

use medblocktree::consensus::{BaselineChain, Ledger};
use medblocktree::crypto::{self, Profile, Verifier};
use medblocktree::netsim::{run_simulation, LatencyModel, Mode, SimConfig};
use medblocktree::store::{BlockStore, FileStore};
use medblocktree::tree::{MedBlockTree, MetadataPack, DEFAULT_BRANCH};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const MICRO_VERSION_LINE: &str = "# medblocktree-micro v1";
pub const MICRO_HEADER: &str = "op,clock,iterations,mean_s";

pub const MIN_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Host,
    Simulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroRow {
    pub op: String,
    pub clock: Clock,
    pub iterations: usize,
    pub mean_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroReport {
    pub rows: Vec<MicroRow>,
}

impl MicroReport {
    pub fn mean_s(&self, op: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.op == op).map(|r| r.mean_s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{MICRO_VERSION_LINE}\n{MICRO_HEADER}\n");
        for r in &self.rows {
            let clock = match r.clock {
                Clock::Host => "host",
                Clock::Simulated => "simulated",
            };
            writeln!(out, "{},{},{},{:.6}", r.op, clock, r.iterations, r.mean_s)
                .expect("writing to a String");
        }
        out
    }
}

/// Host timings of block formation and storage, plus the simulated
/// baseline round time at 100 and 200 ms links.
///
/// Each iteration forms a SHA-linked block, a chameleon block for a new
/// patient, a collision block re-targeting that patient's block, and writes
/// the chameleon block to a file store.
pub fn bench_micro(
    iterations: usize,
    profile: Profile,
    seed: u64,
) -> Result<MicroReport, BenchError> {
    if iterations < MIN_ITERATIONS {
        return Err(BenchError::Spec(format!(
            "need at least {MIN_ITERATIONS} iterations, got {iterations}"
        )));
    }
    let params = profile.params();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let authority = crypto::keygen(&params, &mut rng);
    let doctor = crypto::keygen(&params, &mut rng);
    let proposer = crypto::keygen(&params, &mut rng);
    let mut tree = MedBlockTree::genesis(params.clone(), &authority, &mut rng)?
        .with_verifier(Verifier::direct());
    let chain = BaselineChain::genesis(params.clone(), &authority);
    let chain_randomness = chain.randomness()[&DEFAULT_BRANCH].clone();
    let dir = tempfile::tempdir()?;
    let mut store = FileStore::open(params.clone(), dir.path().join("blocks.mbt"))?;

    let mut sha = Duration::ZERO;
    let mut chame = Duration::ZERO;
    let mut colli = Duration::ZERO;
    let mut write = Duration::ZERO;
    for i in 0..iterations as u64 {
        let patient = crypto::keygen(&params, &mut rng);
        let meta = MetadataPack {
            patient_pk: patient.pk.clone(),
            doctor_pk: doctor.pk.clone(),
            timestamp_ms: i,
            keywords: format!("visit-{i}"),
            meta_id: i,
        };
        let randomness = tree.randomness()[&DEFAULT_BRANCH].encode();

        let t = Instant::now();
        chain.propose(
            DEFAULT_BRANCH,
            meta.clone(),
            &proposer,
            &chain_randomness,
            1,
            &mut rng,
        )?;
        sha += t.elapsed();

        let t = Instant::now();
        let block = tree.make_block(
            DEFAULT_BRANCH,
            meta.clone(),
            &proposer,
            &randomness,
            i + 1,
            &mut rng,
        )?;
        chame += t.elapsed();

        tree.append_block(block.clone())?;
        let visit = MetadataPack {
            keywords: format!("return-{i}"),
            ..meta
        };
        let t = Instant::now();
        tree.make_collision(&patient, visit)?;
        colli += t.elapsed();

        let t = Instant::now();
        store.put_block(&block)?;
        write += t.elapsed();
    }

    let host = |op: &str, total: Duration| MicroRow {
        op: op.to_string(),
        clock: Clock::Host,
        iterations,
        mean_s: total.as_secs_f64() / iterations as f64,
    };
    let mut rows = vec![
        host("sha_block", sha),
        host("chame_block", chame),
        host("colli_block", colli),
        host("db_write", write),
    ];
    for latency in [100, 200] {
        let log = run_simulation(&SimConfig {
            latency: LatencyModel::fixed(latency),
            metadata_count: 20,
            mode: Mode::Baseline,
            rng_seed: seed,
            profile,
            ..SimConfig::default()
        })?;
        rows.push(MicroRow {
            op: format!("bc_round_{latency}ms"),
            clock: Clock::Simulated,
            iterations: log.records().len(),
            mean_s: log.total_ms() as f64 / 1000.0 / log.rounds() as f64,
        });
    }
    Ok(MicroReport { rows })
}
