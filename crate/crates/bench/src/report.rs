use std::fmt::Write as _;

use medblocktree::netsim::MetricsLog;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const SUMMARY_VERSION_LINE: &str = "# medblocktree-summary v1";
pub const SUMMARY_HEADER: &str = "label,overall_s,avg_bps,avg_time_per_block_s,rounds,blocks,\
mean_round_ms,mean_self_ms,mean_net_ms,mean_db_ms";

pub const FAIRNESS_VERSION_LINE: &str = "# medblocktree-fairness v1";
pub const FAIRNESS_HEADER: &str = "label,elections,worker,wins,share,chi2,p_value";

/// One system's totals over a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub overall_s: f64,
    pub avg_bps: f64,
    pub avg_time_per_block_s: f64,
    pub rounds: u64,
    pub blocks: usize,
    pub mean_round_ms: f64,
    pub mean_self_ms: f64,
    pub mean_net_ms: f64,
    pub mean_db_ms: f64,
}

impl SummaryRow {
    pub fn from_log(label: impl Into<String>, log: &MetricsLog) -> Self {
        let s = log.summary();
        let records = log.records();
        let mean = |f: fn(&medblocktree::netsim::RoundRecord) -> u64| {
            if records.is_empty() {
                0.0
            } else {
                records.iter().map(f).sum::<u64>() as f64 / records.len() as f64
            }
        };
        SummaryRow {
            label: label.into(),
            overall_s: s.overall_s,
            avg_bps: s.avg_bps,
            avg_time_per_block_s: s.avg_time_per_block_s,
            rounds: s.rounds,
            blocks: log.total_blocks(),
            mean_round_ms: mean(|r| r.duration_ms()),
            mean_self_ms: mean(|r| r.phase_self_ms),
            mean_net_ms: mean(|r| r.phase_net_ms),
            mean_db_ms: mean(|r| r.phase_db_ms),
        }
    }

    /// At least one round, and `avg_bps * overall_s` recovers the block
    /// count to within one block.
    pub fn check(&self) -> Result<(), String> {
        if self.rounds == 0 {
            return Err(format!("{}: no rounds", self.label));
        }
        let recovered = self.avg_bps * self.overall_s;
        if (recovered - self.blocks as f64).abs() > 1.0 {
            return Err(format!(
                "{}: bps x time = {recovered:.3} but {} blocks",
                self.label, self.blocks
            ));
        }
        Ok(())
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_VERSION_LINE}\n{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.3},{:.4},{:.4},{},{},{:.2},{:.2},{:.2},{:.2}",
            r.label,
            r.overall_s,
            r.avg_bps,
            r.avg_time_per_block_s,
            r.rounds,
            r.blocks,
            r.mean_round_ms,
            r.mean_self_ms,
            r.mean_net_ms,
            r.mean_db_ms
        )
        .expect("writing to a String");
    }
    out
}

/// Winner tallies for one configuration against the stake proportions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub label: String,
    pub counts: Vec<u64>,
    pub weights: Vec<u64>,
    pub chi2: f64,
    pub p_value: f64,
}

impl FairnessRow {
    pub fn new(label: impl Into<String>, counts: Vec<u64>, weights: Vec<u64>) -> Self {
        let (chi2, p_value) = chi_square_test(&counts, &weights);
        FairnessRow {
            label: label.into(),
            counts,
            weights,
            chi2,
            p_value,
        }
    }

    /// Wins per table position over every elected branch in `log`.
    pub fn from_log(label: impl Into<String>, log: &MetricsLog, workers: usize) -> Self {
        let mut counts = vec![0u64; workers];
        for r in log.records() {
            for (_, w) in &r.winners {
                counts[*w] += 1;
            }
        }
        Self::new(label, counts, vec![1; workers])
    }

    pub fn elections(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn passes(&self, significance: f64) -> bool {
        self.p_value >= significance
    }
}

/// Pearson statistic of `counts` against shares proportional to `weights`,
/// with its upper-tail p-value.
pub fn chi_square_test(counts: &[u64], weights: &[u64]) -> (f64, f64) {
    assert_eq!(counts.len(), weights.len());
    assert!(counts.len() >= 2, "need two categories");
    let n: u64 = counts.iter().sum();
    let w: u64 = weights.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(weights)
        .map(|(&o, &k)| {
            let e = n as f64 * k as f64 / w as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    (chi2, 1.0 - dist.cdf(chi2))
}

pub fn fairness_csv(rows: &[FairnessRow]) -> String {
    let mut out = format!("{FAIRNESS_VERSION_LINE}\n{FAIRNESS_HEADER}\n");
    for r in rows {
        let n = r.elections();
        for (w, c) in r.counts.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{:.4}",
                r.label,
                n,
                w,
                c,
                *c as f64 / n.max(1) as f64,
                r.chi2,
                r.p_value
            )
            .expect("writing to a String");
        }
    }
    out
}
