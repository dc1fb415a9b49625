use std::collections::BTreeMap;
use std::sync::Arc;

use medblocktree::consensus::{
    assign_pool, elect_winners, run_baseline_round, run_round, validate_proposal, BaselineChain,
    Behavior, Cluster, InstantTransport, Ledger, Message, MetadataPool, Proposal,
    ProposalRejection, RoundRandomness, ShuffledTransport, SubNodeTable, Vote, VoteKind, Worker,
    WorkerIdentity,
};
use medblocktree::crypto::{self, std_hash, Element, GroupParams, KeyPair, Verifier};
use medblocktree::tree::{BlockIndex, BranchId, MedBlockTree, MetadataPack, DEFAULT_BRANCH};
use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

fn params() -> Arc<GroupParams> {
    GroupParams::test_profile()
}

fn workers(rng: &mut ChaCha20Rng, tokens: &[u64]) -> Vec<WorkerIdentity> {
    let g = params();
    tokens
        .iter()
        .map(|&t| WorkerIdentity {
            keys: crypto::keygen(&g, rng),
            tokens: t,
        })
        .collect()
}

fn pack(rng: &mut ChaCha20Rng, doctor: &KeyPair, id: u64) -> (KeyPair, MetadataPack) {
    let patient = crypto::keygen(&params(), rng);
    let meta = MetadataPack {
        patient_pk: patient.pk.clone(),
        doctor_pk: doctor.pk.clone(),
        timestamp_ms: id,
        keywords: format!("visit-{id}"),
        meta_id: id,
    };
    (patient, meta)
}

fn honest(ids: &[WorkerIdentity]) -> Vec<(WorkerIdentity, Behavior)> {
    ids.iter().map(|w| (w.clone(), Behavior::Honest)).collect()
}

fn genesis(rng: &mut ChaCha20Rng) -> MedBlockTree {
    let authority = crypto::keygen(&params(), rng);
    MedBlockTree::genesis(params(), &authority, rng)
        .unwrap()
        .with_verifier(Verifier::cached())
}

/// Sorted public keys, computed without the table.
fn sorted_pks(ids: &[WorkerIdentity]) -> Vec<Element> {
    let g = params();
    let mut pks: Vec<Element> = ids.iter().map(|w| w.keys.pk.clone()).collect();
    pks.sort_by_key(|pk| g.encode_element(pk));
    pks
}

fn random_zeta(rng: &mut ChaCha20Rng) -> Vec<u8> {
    let mut z = vec![0u8; params().width()];
    rng.fill_bytes(&mut z);
    z
}

fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (*o as f64 - e).powi(2) / e)
        .sum()
}

#[test]
fn single_worker_wins_every_branch() {
    let mut rng = ChaCha20Rng::seed_from_u64(300);
    let ids = workers(&mut rng, &[1]);
    let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
    let randomness: BTreeMap<BranchId, RoundRandomness> = (1..=5)
        .map(|b| {
            (
                b,
                RoundRandomness {
                    zeta: random_zeta(&mut rng),
                    branch: b,
                },
            )
        })
        .collect();
    let winners = elect_winners(&randomness, &table);
    assert_eq!(winners.len(), 5);
    assert!(winners.values().all(|pk| *pk == ids[0].keys.pk));
}

#[test]
fn hash_congruent_two_mod_four_picks_third_sorted_worker() {
    let mut rng = ChaCha20Rng::seed_from_u64(301);
    let ids = workers(&mut rng, &[1, 1, 1, 1]);
    let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
    assert_eq!(table.quorum(), 3);
    let third = sorted_pks(&ids)[2].clone();
    let mut hits = 0;
    for _ in 0..200 {
        let r = RoundRandomness {
            zeta: random_zeta(&mut rng),
            branch: 1,
        };
        // 256 is a multiple of 4, so the last digest byte fixes the residue.
        let residue = std_hash(&r.encode())[31] % 4;
        if residue != 2 {
            continue;
        }
        hits += 1;
        let winners = elect_winners(&BTreeMap::from([(1, r)]), &table);
        assert_eq!(winners[&1], third);
    }
    assert!(hits > 20);
}

#[test]
fn sub_node_ranges_tile_the_total() {
    let mut rng = ChaCha20Rng::seed_from_u64(302);
    let ids = workers(&mut rng, &[3, 1, 4, 1, 5]);
    let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
    assert_eq!(table.total(), 14);
    assert_eq!(table.quorum(), 10);
    let mut next = 0;
    for (r, pk) in table.ranges().iter().zip(sorted_pks(&ids)) {
        assert_eq!(r.start, next);
        assert_eq!(r.pk, pk);
        next += r.tokens;
    }
    assert_eq!(next, 14);
    for i in 0..14 {
        let r = &table.ranges()[table.owner_of(i)];
        assert!(r.start <= i && i < r.start + r.tokens);
    }
}

#[test]
fn election_is_identical_across_shuffled_tables() {
    let mut rng = ChaCha20Rng::seed_from_u64(303);
    let ids = workers(&mut rng, &[2, 1, 3, 1, 1, 2, 4, 1]);
    let tables: Vec<SubNodeTable> = (0..8)
        .map(|_| {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            SubNodeTable::from_identities(&params(), &shuffled).unwrap()
        })
        .collect();
    for _ in 0..1000 {
        let branches = rng.gen_range(1..=10u32);
        let randomness: BTreeMap<BranchId, RoundRandomness> = (1..=branches)
            .map(|b| {
                (
                    b,
                    RoundRandomness {
                        zeta: random_zeta(&mut rng),
                        branch: b,
                    },
                )
            })
            .collect();
        let first = elect_winners(&randomness, &tables[0]);
        for t in &tables[1..] {
            assert_eq!(elect_winners(&randomness, t), first);
        }
    }
}

#[test]
fn election_frequencies_follow_stake() {
    let mut rng = ChaCha20Rng::seed_from_u64(304);
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.95);
    for stakes in [[1u64, 1, 1, 1], [1, 2, 3, 4]] {
        let ids = workers(&mut rng, &stakes);
        let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
        let mut counts = vec![0u64; 4];
        let trials = 10_000;
        for _ in 0..trials {
            let r = RoundRandomness {
                zeta: random_zeta(&mut rng),
                branch: rng.gen_range(1..=9),
            };
            let w = elect_winners(&BTreeMap::from([(r.branch, r)]), &table);
            let pk = w.values().next().unwrap();
            counts[table.position(pk).unwrap()] += 1;
        }
        let expected: Vec<f64> = table
            .ranges()
            .iter()
            .map(|r| trials as f64 * r.tokens as f64 / table.total() as f64)
            .collect();
        let stat = chi_square(&counts, &expected);
        assert!(
            stat < critical,
            "stakes {stakes:?}: chi2 {stat} >= {critical}"
        );
    }
}

#[test]
fn changing_committed_metadata_moves_the_next_winner() {
    let mut rng = ChaCha20Rng::seed_from_u64(305);
    let ids = workers(&mut rng, &[1, 1, 1, 1]);
    let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
    let tree = genesis(&mut rng);
    let doctor = crypto::keygen(&params(), &mut rng);
    let trials = 1000u64;
    let mut changed = 0u64;
    for i in 0..trials {
        let (_, meta) = pack(&mut rng, &doctor, i);
        let mut alt = meta.clone();
        alt.keywords.push_str("-amended");
        let mut winner = |m: MetadataPack| {
            let mut t = tree.clone();
            let b = t
                .make_block(DEFAULT_BRANCH, m, &ids[0].keys, b"r", 1, &mut rng)
                .unwrap();
            t.append_block(b).unwrap();
            elect_winners(&t.randomness(), &table)[&DEFAULT_BRANCH].clone()
        };
        if winner(meta) != winner(alt) {
            changed += 1;
        }
    }
    // Independent winners differ with probability exactly 1 - 1/total; reject
    // only if the change count sits in the lower 1% tail of that binomial.
    let p = 1.0 - 1.0 / table.total() as f64;
    let tail = Binomial::new(p, trials).unwrap().cdf(changed);
    assert!(tail > 0.01, "{changed}/{trials} changed, lower tail {tail}");
}

#[test]
fn pool_assignment_is_fifo_over_ascending_branches() {
    let mut rng = ChaCha20Rng::seed_from_u64(306);
    let doctor = crypto::keygen(&params(), &mut rng);
    let claire = pack(&mut rng, &doctor, 1).1;
    let daisy = pack(&mut rng, &doctor, 2).1;

    let two = assign_pool(&[claire.clone(), daisy.clone()], [2, 1]);
    assert_eq!(two, BTreeMap::from([(1, claire.clone()), (2, daisy)]));

    let one = assign_pool(std::slice::from_ref(&claire), [1, 2, 3]);
    assert_eq!(one, BTreeMap::from([(1, claire)]));

    assert!(assign_pool(&[], [1, 2]).is_empty());
}

#[test]
fn pool_removes_committed_ids_in_place() {
    let mut rng = ChaCha20Rng::seed_from_u64(307);
    let doctor = crypto::keygen(&params(), &mut rng);
    let mut pool: MetadataPool = (0..5).map(|i| pack(&mut rng, &doctor, i).1).collect();
    assert_eq!(pool.remove_committed(&[1, 3, 99]), 2);
    let ids: Vec<u64> = pool.front(10).iter().map(|m| m.meta_id).collect();
    assert_eq!(ids, vec![0, 2, 4]);
}

struct Setup {
    tree: MedBlockTree,
    ids: Vec<WorkerIdentity>,
    table: SubNodeTable,
    doctor: KeyPair,
}

fn setup(seed: u64) -> (Setup, ChaCha20Rng) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tree = genesis(&mut rng);
    let ids = workers(&mut rng, &[1, 1, 1, 1]);
    let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
    let doctor = crypto::keygen(&params(), &mut rng);
    (
        Setup {
            tree,
            ids,
            table,
            doctor,
        },
        rng,
    )
}

fn keys_of<'a>(ids: &'a [WorkerIdentity], pk: &Element) -> &'a KeyPair {
    &ids.iter().find(|w| w.keys.pk == *pk).unwrap().keys
}

#[test]
fn honest_proposal_validates() {
    let (s, mut rng) = setup(310);
    let r = s.tree.randomness()[&DEFAULT_BRANCH].clone();
    let winner = elect_winners(&s.tree.randomness(), &s.table)[&DEFAULT_BRANCH].clone();
    let kp = keys_of(&s.ids, &winner);
    let meta = pack(&mut rng, &s.doctor, 1).1;
    let block = s
        .tree
        .propose(DEFAULT_BRANCH, meta, kp, &r, 1, &mut rng)
        .unwrap();
    assert!(s
        .tree
        .verifier()
        .vrf(&params(), &winner, &r.encode(), &block.vrf));
    let proposal = Proposal::new(&params(), kp, 1, block);
    assert_eq!(validate_proposal(&s.tree, &proposal, &winner, &r), Ok(()));
}

#[test]
fn non_winner_proposal_is_rejected() {
    let (s, mut rng) = setup(311);
    let r = s.tree.randomness()[&DEFAULT_BRANCH].clone();
    let winner = elect_winners(&s.tree.randomness(), &s.table)[&DEFAULT_BRANCH].clone();
    let other = s.ids.iter().find(|w| w.keys.pk != winner).unwrap();
    let meta = pack(&mut rng, &s.doctor, 1).1;
    let block = s
        .tree
        .propose(DEFAULT_BRANCH, meta, &other.keys, &r, 1, &mut rng)
        .unwrap();
    let proposal = Proposal::new(&params(), &other.keys, 1, block);
    assert_eq!(
        validate_proposal(&s.tree, &proposal, &winner, &r),
        Err(ProposalRejection::WrongProposer)
    );
}

#[test]
fn stale_randomness_fails_the_vrf_check() {
    let (mut s, mut rng) = setup(312);
    let stale = s.tree.randomness()[&DEFAULT_BRANCH].clone();
    let first = pack(&mut rng, &s.doctor, 1).1;
    let b = s
        .tree
        .make_block(DEFAULT_BRANCH, first, &s.ids[0].keys, b"r", 1, &mut rng)
        .unwrap();
    s.tree.append_block(b).unwrap();

    let fresh = s.tree.randomness()[&DEFAULT_BRANCH].clone();
    assert_ne!(fresh, stale);
    let winner = elect_winners(&s.tree.randomness(), &s.table)[&DEFAULT_BRANCH].clone();
    let kp = keys_of(&s.ids, &winner);
    let meta = pack(&mut rng, &s.doctor, 2).1;
    let block = s
        .tree
        .propose(DEFAULT_BRANCH, meta, kp, &stale, 2, &mut rng)
        .unwrap();
    let proposal = Proposal::new(&params(), kp, 2, block);
    assert_eq!(
        validate_proposal(&s.tree, &proposal, &winner, &fresh),
        Err(ProposalRejection::BadVrf)
    );
}

#[test]
fn forged_proposal_signature_is_rejected() {
    let (s, mut rng) = setup(313);
    let r = s.tree.randomness()[&DEFAULT_BRANCH].clone();
    let winner = elect_winners(&s.tree.randomness(), &s.table)[&DEFAULT_BRANCH].clone();
    let kp = keys_of(&s.ids, &winner);
    let meta = pack(&mut rng, &s.doctor, 1).1;
    let block = s
        .tree
        .propose(DEFAULT_BRANCH, meta, kp, &r, 1, &mut rng)
        .unwrap();
    let mut proposal = Proposal::new(&params(), kp, 1, block);
    proposal.round = 2;
    assert_eq!(
        validate_proposal(&s.tree, &proposal, &winner, &r),
        Err(ProposalRejection::BadSignature)
    );
}

fn fill_pool(rng: &mut ChaCha20Rng, doctor: &KeyPair, ids: std::ops::Range<u64>) -> MetadataPool {
    ids.map(|i| pack(rng, doctor, i).1).collect()
}

#[test]
fn four_honest_workers_commit() {
    let (s, mut rng) = setup(320);
    let mut cluster = Cluster::new(s.tree.clone(), honest(&s.ids), 1).unwrap();
    let mut pool = fill_pool(&mut rng, &s.doctor, 1..4);
    let out = run_round(
        &mut cluster,
        &mut pool,
        vec![],
        &mut InstantTransport::new(),
    )
    .unwrap();
    assert!(out.committed);
    assert_eq!(out.quorum, 3);
    assert!(out.vote_power_prevote >= 3 && out.vote_power_commit >= 3);
    assert_eq!(out.blocks_committed(), 1);
    assert_eq!(pool.len(), 2);
    for w in cluster.workers() {
        assert_eq!(w.ledger().block_count(), 2);
        assert_eq!(w.ledger(), cluster.ledger());
    }
    assert!(cluster.ledger().validate_tree().is_clean());
}

#[test]
fn two_silent_workers_stall_the_round() {
    let (s, mut rng) = setup(321);
    let members = s
        .ids
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let b = if i < 2 {
                Behavior::Silent
            } else {
                Behavior::Honest
            };
            (w.clone(), b)
        })
        .collect();
    let mut cluster = Cluster::new(s.tree.clone(), members, 2).unwrap();
    let mut pool = fill_pool(&mut rng, &s.doctor, 1..3);
    let before = pool.clone();
    let out = run_round(
        &mut cluster,
        &mut pool,
        vec![],
        &mut InstantTransport::new(),
    )
    .unwrap();
    assert!(!out.committed);
    assert!(out.vote_power_prevote < out.quorum);
    assert!(out.blockmap.is_empty());
    assert_eq!(pool, before);
    assert_eq!(cluster.ledger(), &s.tree);
    assert_eq!(cluster.next_round(), 2);
    assert_eq!(out.round, 1);
}

/// Genesis, Alice and Bob on B1, then Alice's collision sprouts B2.
fn two_branch_tree(
    rng: &mut ChaCha20Rng,
    doctor: &KeyPair,
    proposer: &KeyPair,
) -> (MedBlockTree, KeyPair) {
    let mut tree = genesis(rng);
    let (alice, a) = pack(rng, doctor, 101);
    let (bob, b) = pack(rng, doctor, 102);
    for (round, m) in [(1, a), (2, b)] {
        let blk = tree
            .make_block(DEFAULT_BRANCH, m, proposer, b"r", round, rng)
            .unwrap();
        tree.append_block(blk).unwrap();
    }
    let mut flu = tree.block(BlockIndex::new(1, 1)).unwrap().meta.clone();
    flu.keywords = "Flu".into();
    flu.meta_id = 103;
    let colli = tree.make_collision(&alice, flu).unwrap();
    tree.sprout_branch(&colli, 2).unwrap();
    (tree, bob)
}

#[test]
fn collision_and_two_packs_yield_three_branches() {
    let (s, mut rng) = setup(322);
    let (tree, bob) = two_branch_tree(&mut rng, &s.doctor, &s.ids[0].keys);
    let mut bob_flu = tree
        .block(tree.patient_tip(&bob.pk).unwrap())
        .unwrap()
        .meta
        .clone();
    bob_flu.keywords = "Flu".into();
    bob_flu.meta_id = 104;
    let colli = tree.make_collision(&bob, bob_flu).unwrap();

    let mut cluster = Cluster::new(tree.clone(), honest(&s.ids), 3).unwrap();
    let mut pool = fill_pool(&mut rng, &s.doctor, 1..3);
    let out = run_round(
        &mut cluster,
        &mut pool,
        vec![colli],
        &mut InstantTransport::new(),
    )
    .unwrap();
    assert!(out.committed);
    assert_eq!(out.blocks_committed(), 2);
    assert_eq!(out.claimed, vec![3]);
    let after = cluster.ledger();
    assert_eq!(after.branch_count(), 3);
    assert_eq!(after.block_count(), tree.block_count() + 2 + 1);
    assert_eq!(after.branch(1).unwrap().len(), 4);
    assert_eq!(after.branch(2).unwrap().len(), 2);
    let report = after.validate_tree();
    assert!(report.is_clean(), "{report}");
    assert!(pool.is_empty());
}

#[test]
fn failed_round_still_claims_collisions() {
    let (s, mut rng) = setup(323);
    let (tree, bob) = two_branch_tree(&mut rng, &s.doctor, &s.ids[0].keys);
    let mut m = tree
        .block(tree.patient_tip(&bob.pk).unwrap())
        .unwrap()
        .meta
        .clone();
    m.keywords = "Flu".into();
    let colli = tree.make_collision(&bob, m).unwrap();
    let members = s
        .ids
        .iter()
        .enumerate()
        .map(|(i, w)| {
            (
                w.clone(),
                if i == 0 {
                    Behavior::Honest
                } else {
                    Behavior::Silent
                },
            )
        })
        .collect();
    let mut cluster = Cluster::new(tree.clone(), members, 4).unwrap();
    let mut pool = fill_pool(&mut rng, &s.doctor, 1..3);
    let out = run_round(
        &mut cluster,
        &mut pool,
        vec![colli],
        &mut InstantTransport::new(),
    )
    .unwrap();
    assert!(!out.committed);
    assert_eq!(out.claimed, vec![3]);
    assert_eq!(pool.len(), 2);
    assert_eq!(cluster.ledger().branch_count(), 3);
}

#[test]
fn committed_blocks_per_round_equal_branch_count() {
    let (s, mut rng) = setup(324);
    let mut cluster = Cluster::new(s.tree.clone(), honest(&s.ids), 5).unwrap();
    let mut patients = BTreeMap::new();
    let mut pool = MetadataPool::new();
    for i in 1..60 {
        let (kp, m) = pack(&mut rng, &s.doctor, i);
        patients.insert(i, kp);
        pool.push(m);
    }
    let mut returning: Vec<u64> = Vec::new();
    for round in 0..12u64 {
        let claims = match returning.first() {
            Some(id) if round < 3 => {
                let p = &patients[id];
                let tree = cluster.ledger();
                let mut m = tree
                    .block(tree.patient_tip(&p.pk).unwrap())
                    .unwrap()
                    .meta
                    .clone();
                m.meta_id = 1000 + round;
                vec![tree.make_collision(p, m).unwrap()]
            }
            _ => vec![],
        };
        let branches = cluster.ledger().branch_count();
        let out = run_round(
            &mut cluster,
            &mut pool,
            claims,
            &mut InstantTransport::new(),
        )
        .unwrap();
        assert!(out.committed);
        assert_eq!(out.blocks_committed(), branches);
        returning = out.blockmap.values().map(|b| b.meta.meta_id).collect();
    }
    assert_eq!(cluster.ledger().branch_count(), 3);
    assert!(cluster.ledger().validate_tree().is_clean());
}

fn drain<L: Ledger>(
    cluster: &mut Cluster<L>,
    pool: &mut MetadataPool,
    step: impl Fn(&mut Cluster<L>, &mut MetadataPool) -> usize,
) -> u64 {
    let mut rounds = 0;
    while !pool.is_empty() {
        assert!(step(cluster, pool) > 0, "round {rounds} committed nothing");
        rounds += 1;
        assert!(rounds < 1000);
    }
    rounds
}

#[test]
fn baseline_commits_one_block_per_round_like_a_single_branch() {
    let (s, mut rng) = setup(330);
    let authority = crypto::keygen(&params(), &mut rng);
    let mut chain = BaselineChain::genesis(params(), &authority);
    chain.set_verifier(Verifier::cached());
    let packs: Vec<MetadataPack> = (1..=25).map(|i| pack(&mut rng, &s.doctor, i).1).collect();

    let mut baseline = Cluster::new(chain, honest(&s.ids), 6).unwrap();
    let mut pool: MetadataPool = packs.iter().cloned().collect();
    let base_rounds = drain(&mut baseline, &mut pool, |c, p| {
        run_baseline_round(c, p, &mut InstantTransport::new())
            .unwrap()
            .blocks_committed()
    });
    assert_eq!(base_rounds, 25);
    let chain = baseline.ledger();
    assert_eq!(chain.block_count(), 26);
    assert_eq!(chain.validate(), Ok(()));
    let order: Vec<u64> = chain.blocks()[1..].iter().map(|b| b.meta.meta_id).collect();
    assert_eq!(order, (1..=25).collect::<Vec<_>>());

    let mut tree = Cluster::new(s.tree.clone(), honest(&s.ids), 6).unwrap();
    let mut pool: MetadataPool = packs.into_iter().collect();
    let tree_rounds = drain(&mut tree, &mut pool, |c, p| {
        run_round(c, p, vec![], &mut InstantTransport::new())
            .unwrap()
            .blocks_committed()
    });
    assert_eq!(tree_rounds, base_rounds);
}

#[test]
fn baseline_refuses_collision_claims() {
    let mut rng = ChaCha20Rng::seed_from_u64(331);
    let doctor = crypto::keygen(&params(), &mut rng);
    let (tree, bob) = two_branch_tree(&mut rng, &doctor, &doctor);
    let m = tree
        .block(tree.patient_tip(&bob.pk).unwrap())
        .unwrap()
        .meta
        .clone();
    let colli = tree.make_collision(&bob, m).unwrap();
    let mut chain = BaselineChain::genesis(params(), &doctor);
    assert!(chain.claim_collision(&colli, 1).is_err());
    assert_eq!(chain.branch_count(), 1);
}

#[test]
fn equivocator_never_splits_the_decision() {
    let (s, mut rng) = setup(340);
    let liar = s.ids[0].keys.pk.clone();
    let members: Vec<(WorkerIdentity, Behavior)> = s
        .ids
        .iter()
        .map(|w| {
            let b = if w.keys.pk == liar {
                Behavior::Equivocating
            } else {
                Behavior::Honest
            };
            (w.clone(), b)
        })
        .collect();
    let mut liar_won = 0;
    for schedule in 0..40u64 {
        let mut cluster = Cluster::new(s.tree.clone(), members.clone(), schedule).unwrap();
        let mut pool = fill_pool(&mut rng, &s.doctor, 1..4);
        for _ in 0..3 {
            let mut transport = ShuffledTransport::new(schedule);
            let out = run_round(&mut cluster, &mut pool, vec![], &mut transport)
                .expect("honest workers agree");
            assert!(out.quorum_digests.len() <= 1);
            if out.winners.values().any(|pk| *pk == liar) {
                liar_won += 1;
            }
        }
        let reference = cluster.ledger();
        for w in cluster
            .workers()
            .iter()
            .filter(|w| w.behavior().is_honest())
        {
            assert_eq!(w.ledger(), reference);
        }
        assert!(reference.validate_tree().is_clean());
    }
    assert!(liar_won > 0);
}

#[test]
fn tampered_proposals_are_left_out_of_the_blockmap() {
    let (s, mut rng) = setup(341);
    let cheat = s.ids[1].keys.pk.clone();
    let members: Vec<(WorkerIdentity, Behavior)> = s
        .ids
        .iter()
        .map(|w| {
            let b = if w.keys.pk == cheat {
                Behavior::InvalidProposal
            } else {
                Behavior::Honest
            };
            (w.clone(), b)
        })
        .collect();
    let mut cluster = Cluster::new(s.tree.clone(), members, 7).unwrap();
    let mut pool = fill_pool(&mut rng, &s.doctor, 1..40);
    let mut excluded = 0;
    for _ in 0..20 {
        let head = pool.front(1)[0].meta_id;
        let before = pool.len();
        let out = run_round(
            &mut cluster,
            &mut pool,
            vec![],
            &mut InstantTransport::new(),
        )
        .unwrap();
        assert!(out.committed);
        if out.winners[&DEFAULT_BRANCH] == cheat {
            excluded += 1;
            assert!(out.blockmap.is_empty());
            assert_eq!(pool.len(), before);
            assert_eq!(pool.front(1)[0].meta_id, head);
        } else {
            assert_eq!(out.blocks_committed(), 1);
        }
    }
    assert!(excluded > 0);
    assert!(cluster.ledger().validate_tree().is_clean());
}

#[test]
fn duplicate_forged_and_misweighted_votes_are_ignored() {
    let (s, _) = setup(342);
    let table = Arc::new(SubNodeTable::from_identities(&params(), &s.ids).unwrap());
    let me = table.position(&s.ids[0].keys.pk).unwrap();
    let mut w = Worker::new(
        me,
        s.ids[0].clone(),
        Behavior::Honest,
        s.tree.clone(),
        table.clone(),
        9,
    );
    let sync = medblocktree::consensus::RoundSync {
        round: 1,
        pool: vec![],
        claims: vec![],
    };
    let (out, formed) = w.begin_round(sync);
    assert_eq!(formed, 0);
    assert!(w.has_prevoted());
    assert!(matches!(out[0].msg, Message::PreVote(_)));

    let g = params();
    let digest = std_hash(b"some blockmap");
    let voter = &s.ids[1].keys;
    let vote = Vote::new(&g, VoteKind::PreVote, voter, 1, digest, 1);
    w.handle(Message::PreVote(vote.clone()));
    w.handle(Message::PreVote(vote.clone()));
    assert_eq!(w.prevote_power(&digest), 1);

    let heavy = Vote::new(&g, VoteKind::PreVote, &s.ids[2].keys, 1, digest, 2);
    w.handle(Message::PreVote(heavy));
    assert_eq!(w.prevote_power(&digest), 1);

    let mut forged = Vote::new(&g, VoteKind::PreVote, &s.ids[3].keys, 1, digest, 1);
    forged.blockmap_digest = std_hash(b"other");
    w.handle(Message::PreVote(forged));
    assert_eq!(w.prevote_power(&std_hash(b"other")), 0);

    let late = Vote::new(&g, VoteKind::PreVote, &s.ids[3].keys, 2, digest, 1);
    w.handle(Message::PreVote(late));
    assert_eq!(w.prevote_power(&digest), 1);

    let commit_as_prevote = Vote::new(&g, VoteKind::Commit, &s.ids[3].keys, 1, digest, 1);
    w.handle(Message::PreVote(commit_as_prevote));
    assert_eq!(w.prevote_power(&digest), 1);
}

#[test]
fn quorum_is_two_thirds_rounded_up() {
    let mut rng = ChaCha20Rng::seed_from_u64(343);
    for (stakes, q) in [
        (vec![1], 1),
        (vec![1, 1, 1], 2),
        (vec![1, 1, 1, 1], 3),
        (vec![1, 2, 3, 4], 7),
        (vec![5; 3], 10),
    ] {
        let ids = workers(&mut rng, &stakes);
        let table = SubNodeTable::from_identities(&params(), &ids).unwrap();
        let oracle = (BigUint::from(2 * table.total()) + BigUint::from(2u8)) / BigUint::from(3u8);
        assert_eq!(table.quorum(), q);
        assert_eq!(BigUint::from(table.quorum()), oracle);
    }
}
