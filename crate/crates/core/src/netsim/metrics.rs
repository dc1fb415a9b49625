use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::tree::BranchId;

pub const CSV_VERSION_LINE: &str = "# medblocktree-metrics v1";
pub const CSV_HEADER: &str =
    "round,phase_self_ms,phase_net_ms,phase_db_ms,blocks,branches,winner_list";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub start_ms: u64,
    pub phase_self_ms: u64,
    pub phase_net_ms: u64,
    pub phase_db_ms: u64,
    pub committed: bool,
    pub blocks: usize,
    /// Branches taking part in the round.
    pub branches: usize,
    /// Branches sprouted at the end of the round.
    pub claimed: usize,
    /// Elected worker position per branch.
    pub winners: Vec<(BranchId, usize)>,
}

impl RoundRecord {
    pub fn duration_ms(&self) -> u64 {
        self.phase_self_ms + self.phase_net_ms + self.phase_db_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms()
    }

    /// `branch:worker` pairs joined by `|`.
    pub fn winner_list(&self) -> String {
        let parts: Vec<String> = self
            .winners
            .iter()
            .map(|(b, w)| format!("{b}:{w}"))
            .collect();
        parts.join("|")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub overall_s: f64,
    pub avg_bps: f64,
    pub avg_time_per_block_s: f64,
    pub rounds: u64,
}

/// Append-only per-round log of one simulation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsLog {
    records: Vec<RoundRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: RoundRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn rounds(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn total_blocks(&self) -> usize {
        self.records.iter().map(|r| r.blocks).sum()
    }

    pub fn total_claimed(&self) -> usize {
        self.records.iter().map(|r| r.claimed).sum()
    }

    pub fn total_ms(&self) -> u64 {
        self.records.iter().map(RoundRecord::duration_ms).sum()
    }

    pub fn summary(&self) -> Summary {
        let overall_s = self.total_ms() as f64 / 1000.0;
        let blocks = self.total_blocks() as f64;
        Summary {
            overall_s,
            avg_bps: if overall_s > 0.0 {
                blocks / overall_s
            } else {
                0.0
            },
            avg_time_per_block_s: if blocks > 0.0 {
                overall_s / blocks
            } else {
                0.0
            },
            rounds: self.rounds(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_VERSION_LINE);
        out.push('\n');
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.round,
                r.phase_self_ms,
                r.phase_net_ms,
                r.phase_db_ms,
                r.blocks,
                r.branches,
                r.winner_list()
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }
}
