use std::collections::BTreeMap;
use std::io::Cursor;

use medblocktree::crypto::{self, Element, GroupParams, KeyPair};
use medblocktree::tree::{
    export_tree, import_tree, Block, BlockIndex, CollisionRejection, Finding, MedBlockTree,
    MetadataPack, TreeError, DEFAULT_BRANCH,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Cast {
    authority: KeyPair,
    doctor: KeyPair,
    worker: KeyPair,
    alice: KeyPair,
    bob: KeyPair,
    claire: KeyPair,
    daisy: KeyPair,
}

fn cast(rng: &mut ChaCha20Rng) -> Cast {
    let g = GroupParams::test_profile();
    Cast {
        authority: crypto::keygen(&g, rng),
        doctor: crypto::keygen(&g, rng),
        worker: crypto::keygen(&g, rng),
        alice: crypto::keygen(&g, rng),
        bob: crypto::keygen(&g, rng),
        claire: crypto::keygen(&g, rng),
        daisy: crypto::keygen(&g, rng),
    }
}

fn meta(patient: &KeyPair, doctor: &KeyPair, keywords: &str, id: u64) -> MetadataPack {
    MetadataPack {
        patient_pk: patient.pk.clone(),
        doctor_pk: doctor.pk.clone(),
        timestamp_ms: 1_700_000_000_000 + id,
        keywords: keywords.to_string(),
        meta_id: id,
    }
}

fn append(
    tree: &mut MedBlockTree,
    c: &Cast,
    branch: u32,
    m: MetadataPack,
    round: u64,
    rng: &mut ChaCha20Rng,
) -> Block {
    let block = tree
        .make_block(branch, m, &c.worker, b"randomness", round, rng)
        .unwrap();
    tree.append_block(block.clone()).unwrap();
    block
}

/// Default chain genesis, Alice<cold>, Bob<COVID>; then Alice<Flu> sprouts B2.
fn two_branch_tree(c: &Cast, rng: &mut ChaCha20Rng) -> MedBlockTree {
    let mut tree = MedBlockTree::genesis(GroupParams::test_profile(), &c.authority, rng).unwrap();
    append(
        &mut tree,
        c,
        DEFAULT_BRANCH,
        meta(&c.alice, &c.doctor, "cold", 1),
        1,
        rng,
    );
    append(
        &mut tree,
        c,
        DEFAULT_BRANCH,
        meta(&c.bob, &c.doctor, "COVID", 2),
        2,
        rng,
    );
    let colli = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "Flu", 3))
        .unwrap();
    assert_eq!(tree.sprout_branch(&colli, 2).unwrap(), 2);
    tree
}

#[test]
fn genesis_holds_one_block_with_zero_pre_hash() {
    let mut rng = ChaCha20Rng::seed_from_u64(100);
    let c = cast(&mut rng);
    let tree = MedBlockTree::genesis(GroupParams::test_profile(), &c.authority, &mut rng).unwrap();
    assert_eq!(tree.branch_ids().collect::<Vec<_>>(), vec![1]);
    assert_eq!(tree.block_count(), 1);
    let g0 = tree.genesis_block();
    assert_eq!(g0.index, BlockIndex::new(1, 0));
    assert!(g0.pre_hash.is_zero());
    assert_eq!(tree.former_block(1), Some(g0));
    let params = tree.params();
    assert!(crypto::verify(
        params,
        &c.authority.pk,
        &g0.message(params),
        &g0.digest
    ));
}

#[test]
fn genesis_is_deterministic_under_fixed_entropy() {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let c = cast(&mut rng);
    let g = GroupParams::test_profile();
    let a =
        MedBlockTree::genesis(g.clone(), &c.authority, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
    let b = MedBlockTree::genesis(g, &c.authority, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn default_chain_links_alice_then_bob() {
    let mut rng = ChaCha20Rng::seed_from_u64(102);
    let c = cast(&mut rng);
    let mut tree =
        MedBlockTree::genesis(GroupParams::test_profile(), &c.authority, &mut rng).unwrap();
    let genesis_h = tree.genesis_block().digest.h.clone();
    let alice = append(
        &mut tree,
        &c,
        1,
        meta(&c.alice, &c.doctor, "cold", 1),
        1,
        &mut rng,
    );
    assert_eq!(alice.index, BlockIndex::new(1, 1));
    assert_eq!(alice.pre_hash, genesis_h);
    let bob = append(
        &mut tree,
        &c,
        1,
        meta(&c.bob, &c.doctor, "COVID", 2),
        2,
        &mut rng,
    );
    assert_eq!(bob.index, BlockIndex::new(1, 2));
    assert_eq!(bob.pre_hash, alice.digest.h);

    let again = tree.make_block(
        1,
        meta(&c.alice, &c.doctor, "Flu", 3),
        &c.worker,
        b"r",
        3,
        &mut rng,
    );
    assert_eq!(again.unwrap_err(), TreeError::ReturningPatient);
    let unknown = tree.make_block(
        9,
        meta(&c.claire, &c.doctor, "Flu", 3),
        &c.worker,
        b"r",
        3,
        &mut rng,
    );
    assert_eq!(unknown.unwrap_err(), TreeError::UnknownBranch(9));
}

#[test]
fn alice_flu_collision_keeps_hash_and_genesis_pre_hash() {
    let mut rng = ChaCha20Rng::seed_from_u64(103);
    let c = cast(&mut rng);
    let mut tree =
        MedBlockTree::genesis(GroupParams::test_profile(), &c.authority, &mut rng).unwrap();
    let alice = append(
        &mut tree,
        &c,
        1,
        meta(&c.alice, &c.doctor, "cold", 1),
        1,
        &mut rng,
    );
    append(
        &mut tree,
        &c,
        1,
        meta(&c.bob, &c.doctor, "COVID", 2),
        2,
        &mut rng,
    );

    let flu = meta(&c.alice, &c.doctor, "Flu", 3);
    let colli = tree.make_collision(&c.alice, flu.clone()).unwrap();
    assert_eq!(colli.origin_index, alice.index);
    assert_eq!(colli.block.digest.h, alice.digest.h);
    assert_ne!(colli.block.digest.zeta, alice.digest.zeta);
    assert_eq!(colli.block.pre_hash, tree.genesis_block().digest.h);
    let params = tree.params().clone();
    assert!(crypto::verify(
        &params,
        &c.alice.pk,
        &flu.encode(&params),
        &colli.block.digest
    ));

    let same = tree.make_collision(&c.alice, alice.meta.clone()).unwrap();
    assert_eq!(same.block.digest, alice.digest);

    assert_eq!(
        tree.make_collision(&c.claire, meta(&c.claire, &c.doctor, "Flu", 4))
            .unwrap_err(),
        TreeError::NoOrigin
    );
    assert_eq!(
        tree.make_collision(&c.alice, meta(&c.bob, &c.doctor, "Flu", 4))
            .unwrap_err(),
        TreeError::PatientMismatch
    );

    let b2 = tree.sprout_branch(&colli, 3).unwrap();
    assert_eq!(b2, 2);
    let root = &tree.branch(2).unwrap()[0];
    assert_eq!(root.index, BlockIndex::new(2, 0));
    assert_eq!(root.meta, flu);
    assert_eq!(tree.patient_tip(&c.alice.pk), Some(BlockIndex::new(2, 0)));
    assert_eq!(tree.former_block(2), Some(root));
    assert_eq!(
        tree.sprout_branch(&colli, 3).unwrap_err(),
        TreeError::InvalidCollision(CollisionRejection::Duplicate)
    );
    assert!(tree.validate_tree().is_clean());
}

#[test]
fn updated_tree_example_with_three_branches() {
    let mut rng = ChaCha20Rng::seed_from_u64(104);
    let c = cast(&mut rng);
    let mut tree = two_branch_tree(&c, &mut rng);
    let bob_covid = tree.block(BlockIndex::new(1, 2)).unwrap().clone();
    let alice_flu = tree.block(BlockIndex::new(2, 0)).unwrap().clone();

    let bob_flu = tree
        .make_collision(&c.bob, meta(&c.bob, &c.doctor, "Flu", 4))
        .unwrap();
    let claire = tree
        .make_block(
            1,
            meta(&c.claire, &c.doctor, "Flu", 5),
            &c.worker,
            b"r1",
            3,
            &mut rng,
        )
        .unwrap();
    let daisy = tree
        .make_block(
            2,
            meta(&c.daisy, &c.doctor, "COVID", 6),
            &c.worker,
            b"r2",
            3,
            &mut rng,
        )
        .unwrap();
    let blockmap = BTreeMap::from([(1, claire.clone()), (2, daisy.clone())]);
    let report = tree.append_blockmap(&blockmap);
    assert!(report.is_complete(), "{:?}", report.rejected);
    assert_eq!(tree.sprout_branch(&bob_flu, 3).unwrap(), 3);

    assert_eq!(tree.branch_count(), 3);
    assert_eq!(
        tree.block(BlockIndex::new(1, 3)).unwrap().pre_hash,
        bob_covid.digest.h
    );
    assert_eq!(
        tree.block(BlockIndex::new(2, 1)).unwrap().pre_hash,
        alice_flu.digest.h
    );
    let b3 = &tree.branch(3).unwrap()[0];
    assert_eq!(b3.pre_hash, bob_covid.pre_hash);
    assert_eq!(b3.digest.h, bob_covid.digest.h);
    assert_eq!(tree.origins().get(&3), Some(&BlockIndex::new(1, 2)));
    assert_eq!(tree.block_count(), 7);
    assert!(tree.validate_tree().is_clean(), "{}", tree.validate_tree());
}

#[test]
fn empty_blockmap_changes_nothing() {
    let mut rng = ChaCha20Rng::seed_from_u64(105);
    let c = cast(&mut rng);
    let mut tree = two_branch_tree(&c, &mut rng);
    let before = tree.clone();
    let report = tree.append_blockmap(&BTreeMap::new());
    assert!(report.appended.is_empty() && report.rejected.is_empty());
    assert_eq!(tree, before);
}

#[test]
fn stale_pre_hash_rejects_only_its_branch() {
    let mut rng = ChaCha20Rng::seed_from_u64(106);
    let c = cast(&mut rng);
    let mut tree = two_branch_tree(&c, &mut rng);
    let claire = tree
        .make_block(
            1,
            meta(&c.claire, &c.doctor, "Flu", 5),
            &c.worker,
            b"r",
            3,
            &mut rng,
        )
        .unwrap();
    let mut daisy = tree
        .make_block(
            2,
            meta(&c.daisy, &c.doctor, "COVID", 6),
            &c.worker,
            b"r",
            3,
            &mut rng,
        )
        .unwrap();
    daisy.pre_hash = tree.genesis_block().digest.h.clone();
    let report = tree.append_blockmap(&BTreeMap::from([(1, claire), (2, daisy)]));
    assert_eq!(report.appended, vec![1]);
    assert_eq!(report.rejected, vec![(2, TreeError::StalePreHash(2))]);
    assert_eq!(tree.branch(2).unwrap().len(), 1);
    assert_eq!(tree.branch(1).unwrap().len(), 4);
    assert!(tree.validate_tree().is_clean());
}

#[test]
fn blockmap_rejects_key_block_mismatch_and_double_patient() {
    let mut rng = ChaCha20Rng::seed_from_u64(107);
    let c = cast(&mut rng);
    let mut tree = two_branch_tree(&c, &mut rng);
    let on_b1 = tree
        .make_block(
            1,
            meta(&c.claire, &c.doctor, "Flu", 5),
            &c.worker,
            b"r",
            3,
            &mut rng,
        )
        .unwrap();
    let report = tree.append_blockmap(&BTreeMap::from([(2, on_b1)]));
    assert_eq!(
        report.rejected,
        vec![(2, TreeError::BranchMismatch { key: 2, block: 1 })]
    );

    let a = tree
        .make_block(
            1,
            meta(&c.claire, &c.doctor, "Flu", 5),
            &c.worker,
            b"r",
            3,
            &mut rng,
        )
        .unwrap();
    let b = tree
        .make_block(
            2,
            meta(&c.claire, &c.doctor, "cold", 6),
            &c.worker,
            b"r",
            3,
            &mut rng,
        )
        .unwrap();
    let report = tree.append_blockmap(&BTreeMap::from([(1, a), (2, b)]));
    assert_eq!(report.appended, vec![1]);
    assert_eq!(report.rejected, vec![(2, TreeError::ReturningPatient)]);
}

#[test]
fn collision_from_stale_origin_is_rejected() {
    let mut rng = ChaCha20Rng::seed_from_u64(108);
    let c = cast(&mut rng);
    let mut tree =
        MedBlockTree::genesis(GroupParams::test_profile(), &c.authority, &mut rng).unwrap();
    append(
        &mut tree,
        &c,
        1,
        meta(&c.alice, &c.doctor, "cold", 1),
        1,
        &mut rng,
    );
    let first = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "Flu", 2))
        .unwrap();
    let second = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "COVID", 3))
        .unwrap();
    tree.sprout_branch(&first, 2).unwrap();
    assert_eq!(
        tree.validate_collision(&second),
        Err(CollisionRejection::OriginNotPatientTip)
    );
    let chained = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "COVID", 3))
        .unwrap();
    assert_eq!(chained.origin_index, BlockIndex::new(2, 0));
    assert_eq!(tree.sprout_branch(&chained, 3).unwrap(), 3);
    assert!(tree.validate_tree().is_clean());
}

#[test]
fn forged_collision_without_trapdoor_is_rejected() {
    let mut rng = ChaCha20Rng::seed_from_u64(109);
    let c = cast(&mut rng);
    let mut tree =
        MedBlockTree::genesis(GroupParams::test_profile(), &c.authority, &mut rng).unwrap();
    append(
        &mut tree,
        &c,
        1,
        meta(&c.alice, &c.doctor, "cold", 1),
        1,
        &mut rng,
    );
    let mut forged = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "Flu", 2))
        .unwrap();
    forged.block.meta.keywords = "HIV".into();
    assert_eq!(
        tree.validate_collision(&forged),
        Err(CollisionRejection::DigestInvalid)
    );

    let mut moved = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "Flu", 2))
        .unwrap();
    moved.block.pre_hash = Element::zero();
    assert_eq!(
        tree.validate_collision(&moved),
        Err(CollisionRejection::PreHashMismatch)
    );

    let mut rehashed = tree
        .make_collision(&c.alice, meta(&c.alice, &c.doctor, "Flu", 2))
        .unwrap();
    let params = tree.params().clone();
    rehashed.block.digest = crypto::chamhash(
        &params,
        &c.alice.pk,
        &rehashed.block.message(&params),
        &mut rng,
    )
    .unwrap();
    assert_eq!(
        tree.validate_collision(&rehashed),
        Err(CollisionRejection::HashMismatch)
    );
}

fn rebuild(tree: &MedBlockTree, mutate: impl FnOnce(&mut Vec<Block>)) -> MedBlockTree {
    let mut blocks: Vec<Block> = tree.blocks().cloned().collect();
    mutate(&mut blocks);
    MedBlockTree::from_raw(tree.params().clone(), blocks, tree.origins().clone())
}

#[test]
fn flipped_metadata_byte_gives_exactly_one_finding() {
    let mut rng = ChaCha20Rng::seed_from_u64(110);
    let c = cast(&mut rng);
    let tree = two_branch_tree(&c, &mut rng);
    let faulty = rebuild(&tree, |blocks| {
        let bob = blocks
            .iter_mut()
            .find(|b| b.index == BlockIndex::new(1, 2))
            .unwrap();
        let mut bytes = bob.meta.keywords.clone().into_bytes();
        bytes[0] ^= 0x01;
        bob.meta.keywords = String::from_utf8(bytes).unwrap();
    });
    let report = faulty.validate_tree();
    assert_eq!(
        report.findings,
        vec![Finding::DigestInvalid(BlockIndex::new(1, 2))]
    );
}

#[test]
fn root_with_foreign_hash_is_flagged() {
    let mut rng = ChaCha20Rng::seed_from_u64(111);
    let c = cast(&mut rng);
    let tree = two_branch_tree(&c, &mut rng);
    let params = tree.params().clone();
    let faulty = rebuild(&tree, |blocks| {
        let root = blocks
            .iter_mut()
            .find(|b| b.index == BlockIndex::new(2, 0))
            .unwrap();
        root.digest =
            crypto::chamhash(&params, &c.alice.pk, &root.message(&params), &mut rng).unwrap();
    });
    assert_eq!(
        faulty.validate_tree().findings,
        vec![Finding::RootHashMismatch(2)]
    );
}

#[test]
fn broken_linkage_and_gaps_are_located() {
    let mut rng = ChaCha20Rng::seed_from_u64(112);
    let c = cast(&mut rng);
    let tree = two_branch_tree(&c, &mut rng);
    let relinked = rebuild(&tree, |blocks| {
        blocks[2].pre_hash = Element::zero();
    });
    assert_eq!(
        relinked.validate_tree().findings,
        vec![Finding::BrokenLinkage(BlockIndex::new(1, 2))]
    );

    let gapped = rebuild(&tree, |blocks| {
        blocks.remove(1);
    });
    let findings = gapped.validate_tree().findings;
    assert!(findings.contains(&Finding::IndexDiscontinuity {
        branch: 1,
        position: 1,
        found: BlockIndex::new(1, 2)
    }));
    assert!(findings.contains(&Finding::BrokenLinkage(BlockIndex::new(1, 2))));

    let orphan = MedBlockTree::from_raw(
        tree.params().clone(),
        tree.blocks().cloned().collect::<Vec<_>>(),
        BTreeMap::new(),
    );
    assert_eq!(
        orphan.validate_tree().findings,
        vec![Finding::MissingOrigin(2)]
    );
}

#[test]
fn export_import_round_trip_is_lossless() {
    let mut rng = ChaCha20Rng::seed_from_u64(113);
    let c = cast(&mut rng);
    let mut tree = two_branch_tree(&c, &mut rng);
    let bob_flu = tree
        .make_collision(&c.bob, meta(&c.bob, &c.doctor, "Flu", 4))
        .unwrap();
    tree.sprout_branch(&bob_flu, 3).unwrap();
    let mut buf = Vec::new();
    export_tree(&tree, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + tree.block_count());
    let back = import_tree(Cursor::new(buf)).unwrap();
    assert_eq!(back, tree);
    assert!(back.validate_tree().is_clean());

    let tampered = text.replacen("\"COVID\"", "\"COVIE\"", 1);
    let bad = import_tree(Cursor::new(tampered.into_bytes())).unwrap();
    assert_eq!(bad.validate_tree().findings.len(), 1);

    let wrong_header = text.replacen("medblocktree-export", "other", 1);
    assert!(matches!(
        import_tree(Cursor::new(wrong_header.into_bytes())),
        Err(TreeError::Import(_))
    ));
}

#[derive(Clone, Debug)]
enum Op {
    NewPatient { branch_pick: u8 },
    Return { patient_pick: u8 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => any::<u8>().prop_map(|branch_pick| Op::NewPatient { branch_pick }),
        1 => any::<u8>().prop_map(|patient_pick| Op::Return { patient_pick }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Any tree built only through the public operations validates clean,
    /// keeps linkage on every branch, and keeps patient tips equal to a scan.
    #[test]
    fn operation_sequences_keep_every_invariant(seed in any::<u64>(), ops in prop::collection::vec(op(), 1..24)) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = GroupParams::test_profile();
        let authority = crypto::keygen(&g, &mut rng);
        let doctor = crypto::keygen(&g, &mut rng);
        let mut tree = MedBlockTree::genesis(g.clone(), &authority, &mut rng).unwrap();
        let mut patients: Vec<KeyPair> = Vec::new();
        let mut branch_history = vec![tree.branch_count()];
        for (round, op) in ops.into_iter().enumerate() {
            let round = round as u64 + 1;
            match op {
                Op::NewPatient { branch_pick } => {
                    let ids: Vec<u32> = tree.branch_ids().collect();
                    let branch = ids[branch_pick as usize % ids.len()];
                    let p = crypto::keygen(&g, &mut rng);
                    let m = meta(&p, &doctor, "visit", round);
                    let block = tree.make_block(branch, m, &doctor, b"r", round, &mut rng).unwrap();
                    tree.append_block(block).unwrap();
                    patients.push(p);
                }
                Op::Return { patient_pick } => {
                    if patients.is_empty() {
                        continue;
                    }
                    let p = &patients[patient_pick as usize % patients.len()];
                    let colli = tree.make_collision(p, meta(p, &doctor, "return", 1000 + round)).unwrap();
                    let id = tree.sprout_branch(&colli, round).unwrap();
                    prop_assert_eq!(id as usize, tree.branch_count());
                    prop_assert_eq!(tree.patient_tip(&p.pk), Some(BlockIndex::new(id, 0)));
                }
            }
            branch_history.push(tree.branch_count());
        }
        prop_assert!(branch_history.windows(2).all(|w| w[0] <= w[1]));
        let report = tree.validate_tree();
        prop_assert!(report.is_clean(), "{}", report);
        prop_assert_eq!(&tree.scan_patient_tips(), tree.patient_tips());
        for blocks in tree.branches().values() {
            for pair in blocks.windows(2) {
                prop_assert_eq!(&pair[1].pre_hash, &pair[0].digest.h);
            }
        }
    }
}
