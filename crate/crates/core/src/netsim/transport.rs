use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{Delivery, Message, Transport};

/// Per-link delay. Every message between two distinct workers takes
/// `base_ms` plus a uniform draw from `0..=jitter_ms`; a worker's message to
/// itself arrives at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base_ms: u64,
    pub jitter_ms: u64,
}

impl LatencyModel {
    pub fn fixed(base_ms: u64) -> Self {
        LatencyModel {
            base_ms,
            jitter_ms: 0,
        }
    }

    pub fn delay<R: Rng>(&self, from: usize, to: usize, rng: &mut R) -> u64 {
        if from == to {
            return 0;
        }
        let jitter = if self.jitter_ms == 0 {
            0
        } else {
            rng.gen_range(0..=self.jitter_ms)
        };
        self.base_ms + jitter
    }
}

/// A scheduled message delivery.
///
/// Ordered by `(at, kind rank, sender position, seq)`: same-instant
/// deliveries go round-sync, proposals, pre-votes, commits, and within a
/// kind by sender in table order. `seq` makes the order total.
#[derive(Clone, Debug)]
pub struct SimEvent<B> {
    pub at: u64,
    pub sent: u64,
    pub seq: u64,
    pub delivery: Delivery<B>,
}

impl<B> SimEvent<B> {
    fn key(&self) -> (u64, u8, usize, u64) {
        (
            self.at,
            self.delivery.msg.kind_rank(),
            self.delivery.from,
            self.seq,
        )
    }
}

impl<B> PartialEq for SimEvent<B> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<B> Eq for SimEvent<B> {}

impl<B> PartialOrd for SimEvent<B> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<B> Ord for SimEvent<B> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Time accounting for one round, all in simulated milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundTiming {
    pub self_ms: u64,
    pub net_ms: u64,
}

/// Discrete-event transport for a single round.
///
/// Each worker has a clock: the instant it is next free. Handling a message
/// occupies the recipient for `handle_ms` starting at the later of arrival
/// and its clock, and whatever it sends in response leaves when it is done.
/// Nothing is sent earlier than the last delivery, so arrivals come out in
/// time order.
#[derive(Debug)]
pub struct SimTransport<B> {
    start: u64,
    /// Arrival time of the last delivered event.
    now: u64,
    clock: Vec<u64>,
    queue: BinaryHeap<Reverse<SimEvent<B>>>,
    latency: LatencyModel,
    rng: ChaCha20Rng,
    handle_ms: u64,
    formation_ms: u64,
    timeout_ms: u64,
    seq: u64,
    formed_any: bool,
    decided_at: Vec<Option<u64>>,
    history: Vec<(u64, u64)>,
    record: bool,
}

impl<B> SimTransport<B> {
    pub fn new(
        start: u64,
        workers: usize,
        latency: LatencyModel,
        handle_ms: u64,
        formation_ms: u64,
        timeout_ms: u64,
        seed: [u8; 32],
    ) -> Self {
        SimTransport {
            start,
            now: start,
            clock: vec![start; workers],
            queue: BinaryHeap::new(),
            latency,
            rng: ChaCha20Rng::from_seed(seed),
            handle_ms,
            formation_ms,
            timeout_ms,
            seq: 0,
            formed_any: false,
            decided_at: vec![None; workers],
            history: Vec::new(),
            record: false,
        }
    }

    /// Keep `(sent, delivered)` times of every message for inspection.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn history(&self) -> &[(u64, u64)] {
        &self.history
    }

    pub fn clock(&self, worker: usize) -> u64 {
        self.clock[worker]
    }

    pub fn decided_at(&self, worker: usize) -> Option<u64> {
        self.decided_at[worker]
    }

    /// Self-processing and network phases. The network phase runs until the
    /// last worker decides, or until the last worker goes idle when nobody
    /// did.
    pub fn timing(&self) -> RoundTiming {
        let self_ms = if self.formed_any {
            self.formation_ms
        } else {
            0
        };
        let end = self
            .decided_at
            .iter()
            .flatten()
            .copied()
            .max()
            .unwrap_or_else(|| self.clock.iter().copied().max().unwrap_or(self.start));
        RoundTiming {
            self_ms,
            net_ms: end.saturating_sub(self.start + self_ms),
        }
    }
}

impl<B> Transport<B> for SimTransport<B> {
    fn send(&mut self, from: usize, to: usize, msg: Message<B>) {
        let sent = self.clock[from].max(self.now);
        let at = sent + self.latency.delay(from, to, &mut self.rng);
        self.seq += 1;
        self.queue.push(Reverse(SimEvent {
            at,
            sent,
            seq: self.seq,
            delivery: Delivery { from, to, msg },
        }));
    }

    fn deliver(&mut self) -> Option<Delivery<B>> {
        let Reverse(ev) = self.queue.pop()?;
        if self.record {
            self.history.push((ev.sent, ev.at));
        }
        self.now = ev.at;
        let to = ev.delivery.to;
        self.clock[to] = self.clock[to].max(ev.at) + self.handle_ms;
        Some(ev.delivery)
    }

    /// Block formation runs in parallel across a worker's branches, so it
    /// is charged once.
    fn formed(&mut self, worker: usize, _blocks: usize) {
        self.formed_any = true;
        self.clock[worker] = self.clock[worker].max(self.start + self.formation_ms);
    }

    fn timed_out(&mut self, worker: usize) {
        self.clock[worker] = self.clock[worker]
            .max(self.start + self.timeout_ms)
            .max(self.now);
    }

    fn decided(&mut self, worker: usize) {
        self.decided_at[worker] = Some(self.clock[worker]);
    }
}
