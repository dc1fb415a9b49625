use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use medblocktree::netsim::{simulate, LatencyModel, MetricsLog, Mode, SimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::micro::{bench_micro, MicroReport, MIN_ITERATIONS};
use crate::report::{fairness_csv, summary_csv, FairnessRow, SummaryRow};
use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Branches,
    Latency,
    Nodes,
    CollisionRate,
    Fairness,
    Bench,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Branches => "D1-branches",
            Dimension::Latency => "D2-latency",
            Dimension::Nodes => "D3-nodes",
            Dimension::CollisionRate => "D4-collision-rate",
            Dimension::Fairness => "D5-fairness",
            Dimension::Bench => "bench",
        }
    }

    /// Sweep values used when none are given.
    pub fn default_sweep(self) -> Vec<u64> {
        match self {
            Dimension::Branches => (1..=10).collect(),
            Dimension::Latency => vec![100, 200],
            Dimension::Nodes => vec![4, 8, 12, 16],
            Dimension::CollisionRate => vec![30, 60, 90, 120],
            Dimension::Fairness => vec![3, 6, 9],
            Dimension::Bench => vec![1000],
        }
    }

    fn sweep_range(self) -> (u64, u64) {
        match self {
            Dimension::Branches | Dimension::Fairness => (1, 64),
            Dimension::Latency => (1, 10_000),
            Dimension::Nodes => (1, 64),
            Dimension::CollisionRate => (1, 86_400),
            Dimension::Bench => (MIN_ITERATIONS as u64, 1_000_000),
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let head = lower.split('-').next().unwrap_or_default();
        match head {
            "d1" | "branches" => Ok(Dimension::Branches),
            "d2" | "latency" => Ok(Dimension::Latency),
            "d3" | "nodes" => Ok(Dimension::Nodes),
            "d4" | "collision" => Ok(Dimension::CollisionRate),
            "d5" | "fairness" => Ok(Dimension::Fairness),
            "bench" => Ok(Dimension::Bench),
            _ => Err(BenchError::Spec(format!("unknown dimension {s:?}"))),
        }
    }
}

/// One experiment: a dimension, the values it sweeps and the configuration
/// everything else is taken from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dimension: Dimension,
    pub sweep: Vec<u64>,
    /// Branch counts run at each latency of a latency sweep.
    pub branch_counts: Vec<usize>,
    pub repetitions: u32,
    pub seed: u64,
    pub base: SimConfig,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    /// The evaluation defaults: 4 workers, 100 ms links, 2000 packs, and
    /// returning patients every 60 s for the network-size sweep.
    pub fn new(dimension: Dimension) -> Self {
        let mut base = SimConfig::default();
        if dimension == Dimension::Nodes {
            base.collision_interval_s = Some(60);
        }
        ExperimentSpec {
            dimension,
            sweep: dimension.default_sweep(),
            branch_counts: (1..=10).collect(),
            repetitions: 1,
            seed: 0,
            base,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.repetitions == 0 {
            return Err(BenchError::Spec("repetitions must be at least 1".into()));
        }
        if self.sweep.is_empty() {
            return Err(BenchError::Spec("empty sweep".into()));
        }
        let (lo, hi) = self.dimension.sweep_range();
        if let Some(v) = self.sweep.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(BenchError::Spec(format!(
                "{}: sweep value {v} outside {lo}..={hi}",
                self.dimension
            )));
        }
        if self.dimension == Dimension::Latency
            && (self.branch_counts.is_empty() || self.branch_counts.contains(&0))
        {
            return Err(BenchError::Spec("branch counts must be positive".into()));
        }
        if self.dimension != Dimension::Bench {
            for p in self.points() {
                p.config.validate()?;
            }
        }
        Ok(())
    }

    fn baseline(&self, latency_ms: Option<u64>) -> SimConfig {
        let mut c = self.base.clone();
        c.mode = Mode::Baseline;
        c.initial_branches = 1;
        c.collision_interval_s = None;
        c.branch_cap = None;
        if let Some(l) = latency_ms {
            c.latency = LatencyModel::fixed(l);
        }
        c
    }

    fn tree(&self) -> SimConfig {
        let mut c = self.base.clone();
        c.mode = Mode::MedBlockTree;
        c
    }

    /// Every run of the experiment in output order, baseline rows included.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut runs: Vec<(String, SimConfig)> = Vec::new();
        let fixed = |n: u64| {
            let mut c = self.tree();
            c.initial_branches = n as usize;
            c.collision_interval_s = None;
            c.branch_cap = None;
            c
        };
        match self.dimension {
            Dimension::Branches | Dimension::Fairness => {
                runs.push(("BC".into(), self.baseline(None)));
                for &n in &self.sweep {
                    runs.push((format!("MBT(B{n})"), fixed(n)));
                }
            }
            Dimension::Latency => {
                for &l in &self.sweep {
                    runs.push((format!("BC({l}ms)"), self.baseline(Some(l))));
                    for &n in &self.branch_counts {
                        let mut c = fixed(n as u64);
                        c.latency = LatencyModel::fixed(l);
                        runs.push((format!("MBT(B{n},{l}ms)"), c));
                    }
                }
            }
            Dimension::Nodes => {
                runs.push((
                    format!("BC({}n)", self.base.worker_count),
                    self.baseline(None),
                ));
                for &w in &self.sweep {
                    let mut c = self.tree();
                    c.worker_count = w as usize;
                    c.tokens_per_worker.clear();
                    runs.push((format!("MBT({w}n)"), c));
                }
            }
            Dimension::CollisionRate => {
                runs.push(("BC".into(), self.baseline(None)));
                for &s in &self.sweep {
                    let mut c = self.tree();
                    c.collision_interval_s = Some(s);
                    runs.push((format!("MBT({s}s)"), c));
                }
            }
            Dimension::Bench => {}
        }
        let mut points = Vec::with_capacity(runs.len() * self.repetitions as usize);
        for rep in 0..self.repetitions {
            for (label, config) in &runs {
                let label = if self.repetitions > 1 {
                    format!("{label}#{rep}")
                } else {
                    label.clone()
                };
                let mut config = config.clone();
                config.rng_seed = self.seed.wrapping_add(rep as u64);
                points.push(SweepPoint {
                    index: points.len(),
                    label,
                    config,
                });
            }
        }
        points
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub config: SimConfig,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub index: usize,
    pub label: String,
    pub config: SimConfig,
    pub log: MetricsLog,
    pub collisions_released: u64,
}

/// Runs every point on its own simulator, `threads` at a time (`None` for
/// one per core). Results come back in point order whatever the thread
/// count.
pub fn run_sweep(
    points: &[SweepPoint],
    threads: Option<usize>,
) -> Result<Vec<RunResult>, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| BenchError::Spec(format!("thread pool: {e}")))?;
    let mut results = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let run = simulate(&p.config).map_err(|source| BenchError::Run {
                    label: p.label.clone(),
                    source,
                })?;
                Ok(RunResult {
                    index: p.index,
                    label: p.label.clone(),
                    config: p.config.clone(),
                    log: run.log,
                    collisions_released: run.collisions_released,
                })
            })
            .collect::<Result<Vec<_>, BenchError>>()
    })?;
    results.sort_by_key(|r| r.index);
    Ok(results)
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub dimension: Dimension,
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<RunResult>,
    pub fairness: Vec<FairnessRow>,
    pub micro: Option<MicroReport>,
}

impl ExperimentReport {
    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn run(&self, label: &str) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.rows)
    }

    /// `summary.csv`, one metrics CSV per run under `runs/`, and
    /// `fairness.csv` or `micro.csv` where they apply.
    pub fn write_to(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        if let Some(m) = &self.micro {
            std::fs::write(dir.join("micro.csv"), m.to_csv())?;
            return Ok(());
        }
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        let runs = dir.join("runs");
        std::fs::create_dir_all(&runs)?;
        for r in &self.runs {
            std::fs::write(
                runs.join(format!("{}.csv", file_stem(&r.label))),
                r.log.to_csv(),
            )?;
        }
        if !self.fairness.is_empty() {
            std::fs::write(dir.join("fairness.csv"), fairness_csv(&self.fairness))?;
        }
        Ok(())
    }
}

/// `MBT(B3,100ms)` becomes `mbt_b3_100ms`.
pub fn file_stem(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

pub fn run_experiment(
    spec: &ExperimentSpec,
    threads: Option<usize>,
) -> Result<ExperimentReport, BenchError> {
    spec.validate()?;
    if spec.dimension == Dimension::Bench {
        let micro = bench_micro(spec.sweep[0] as usize, spec.base.profile, spec.seed)?;
        let report = ExperimentReport {
            dimension: spec.dimension,
            rows: Vec::new(),
            runs: Vec::new(),
            fairness: Vec::new(),
            micro: Some(micro),
        };
        if let Some(dir) = &spec.out {
            report.write_to(dir)?;
        }
        return Ok(report);
    }
    let runs = run_sweep(&spec.points(), threads)?;
    let rows: Vec<SummaryRow> = runs
        .iter()
        .map(|r| SummaryRow::from_log(r.label.clone(), &r.log))
        .collect();
    for row in &rows {
        row.check().map_err(|reason| BenchError::Invariant {
            label: row.label.clone(),
            reason,
        })?;
    }
    let fairness = if spec.dimension == Dimension::Fairness {
        runs.iter()
            .map(|r| FairnessRow::from_log(r.label.clone(), &r.log, r.config.worker_count))
            .collect()
    } else {
        Vec::new()
    };
    let report = ExperimentReport {
        dimension: spec.dimension,
        rows,
        runs,
        fairness,
        micro: None,
    };
    if let Some(dir) = &spec.out {
        report.write_to(dir)?;
    }
    Ok(report)
}
