/// Expected blocks per round from pool drain alone.
///
/// Each round takes `min(branches, remaining)` packs; `claims[r]` branches
/// join after round `r`. Stops once the pool is empty.
pub fn drain_schedule(
    metadata_count: usize,
    initial_branches: usize,
    claims: &[usize],
) -> Vec<usize> {
    let mut out = Vec::new();
    let mut remaining = metadata_count;
    let mut branches = initial_branches;
    while remaining > 0 {
        let take = branches.min(remaining);
        remaining -= take;
        branches += claims.get(out.len()).copied().unwrap_or(0);
        out.push(take);
    }
    out
}

/// Replays a run from its round durations: collision ticks every
/// `interval_ms`, each ready `colli_ms` later and claimed at the end of the
/// first round starting no earlier than that. Returns `(blocks, claims)`
/// per round. Assumes every tick finds a returning patient.
pub fn replay_with_collisions(
    metadata_count: usize,
    initial_branches: usize,
    interval_ms: Option<u64>,
    colli_ms: u64,
    durations_ms: &[u64],
) -> (Vec<usize>, Vec<usize>) {
    let mut blocks = Vec::new();
    let mut claims = Vec::new();
    let mut remaining = metadata_count;
    let mut branches = initial_branches;
    let mut now = 0u64;
    let mut next_tick = interval_ms;
    while remaining > 0 {
        let r = blocks.len();
        let mut ready = 0;
        if let Some(iv) = interval_ms {
            while let Some(t) = next_tick {
                if t + colli_ms > now {
                    break;
                }
                ready += 1;
                next_tick = Some(t + iv);
            }
        }
        let take = branches.min(remaining);
        remaining -= take;
        blocks.push(take);
        claims.push(ready);
        branches += ready;
        let Some(d) = durations_ms.get(r) else {
            break;
        };
        now += d;
    }
    (blocks, claims)
}
