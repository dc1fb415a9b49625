use std::collections::BTreeMap;

use crate::crypto::{Element, KeyPair};
use crate::tree::{CollisionBlock, MedBlockTree, MetadataPack};

/// First id handed to collision metadata; pool packs stay below it.
pub const COLLISION_META_BASE: u64 = 1 << 40;

#[derive(Clone, Debug)]
struct Patient {
    keys: KeyPair,
    /// Time from which the patient's current tip is committed.
    available_at: u64,
    last_return: Option<u64>,
    order: u64,
    pending: bool,
}

#[derive(Clone, Debug)]
struct Pending {
    ready_at: u64,
    colli: CollisionBlock,
}

/// Returning patients. Every `interval_ms` of simulated time the patient
/// who returned least recently (never-returned first, oldest commit first)
/// re-targets their latest block onto a new visit. The collision block is
/// ready `colli_ms` after the tick and is handed to the first round that
/// starts after that.
#[derive(Clone, Debug)]
pub struct CollisionActor {
    interval_ms: u64,
    colli_ms: u64,
    doctor: Element,
    next_tick: u64,
    patients: BTreeMap<Element, Patient>,
    pending: Vec<Pending>,
    registered: u64,
    released: u64,
    skipped: u64,
    branch_cap: Option<usize>,
}

impl CollisionActor {
    pub fn new(
        interval_ms: u64,
        colli_ms: u64,
        doctor: Element,
        branch_cap: Option<usize>,
    ) -> Self {
        assert!(interval_ms > 0, "collision interval must be positive");
        CollisionActor {
            interval_ms,
            colli_ms,
            doctor,
            next_tick: interval_ms,
            patients: BTreeMap::new(),
            pending: Vec::new(),
            registered: 0,
            released: 0,
            skipped: 0,
            branch_cap,
        }
    }

    /// A first-time patient's block committed at `at`.
    pub fn register(&mut self, keys: KeyPair, at: u64) {
        self.registered += 1;
        self.patients.insert(
            keys.pk.clone(),
            Patient {
                keys,
                available_at: at,
                last_return: None,
                order: self.registered,
                pending: false,
            },
        );
    }

    pub fn released(&self) -> u64 {
        self.released
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Fires every tick at or before `now` against `tree`.
    pub fn tick_until(&mut self, now: u64, tree: &MedBlockTree) {
        while self.next_tick <= now {
            let tick = self.next_tick;
            self.next_tick += self.interval_ms;
            let capped = self
                .branch_cap
                .is_some_and(|cap| tree.branch_count() + self.pending.len() >= cap);
            let choice = self
                .patients
                .values()
                .filter(|p| !p.pending && p.available_at <= tick)
                .min_by_key(|p| (p.last_return.is_some(), p.last_return, p.order))
                .map(|p| p.keys.clone());
            let Some(keys) = choice.filter(|_| !capped) else {
                self.skipped += 1;
                continue;
            };
            let meta = MetadataPack {
                patient_pk: keys.pk.clone(),
                doctor_pk: self.doctor.clone(),
                timestamp_ms: tick,
                keywords: format!("return-{}", self.released + 1),
                meta_id: COLLISION_META_BASE + self.released,
            };
            let colli = tree
                .make_collision(&keys, meta)
                .expect("eligible patients have a committed tip");
            self.released += 1;
            self.patients
                .get_mut(&keys.pk)
                .expect("chosen above")
                .pending = true;
            self.pending.push(Pending {
                ready_at: tick + self.colli_ms,
                colli,
            });
        }
    }

    /// Collision blocks ready by `now`, in release order.
    pub fn take_ready(&mut self, now: u64) -> Vec<CollisionBlock> {
        let (ready, waiting): (Vec<Pending>, Vec<Pending>) =
            self.pending.drain(..).partition(|p| p.ready_at <= now);
        self.pending = waiting;
        ready.into_iter().map(|p| p.colli).collect()
    }

    /// The round ending at `at` claimed `claims`.
    pub fn claimed(&mut self, claims: &[CollisionBlock], at: u64) {
        for c in claims {
            if let Some(p) = self.patients.get_mut(&c.block.meta.patient_pk) {
                p.pending = false;
                p.available_at = at;
                p.last_return = Some(at);
            }
        }
    }
}
