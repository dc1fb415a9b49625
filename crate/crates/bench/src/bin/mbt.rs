use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mbt_bench::{fairness_csv, run_experiment, BenchError, Dimension, ExperimentSpec};
use medblocktree::netsim::{simulate, LatencyModel, Mode};
use medblocktree::tree::{read_tree_file, write_tree_file};

#[derive(Parser)]
#[command(name = "mbt", version, about = "MedBlockTree experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    latency_ms: Option<u64>,
    #[arg(long, global = true)]
    metadata_count: Option<usize>,
    /// Simulated seconds between returning patients.
    #[arg(long, global = true)]
    collision_interval_s: Option<u64>,
    /// Branches present before the first round.
    #[arg(long, global = true)]
    branches: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// medblocktree | baseline
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Output directory for CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated values replacing the default sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    sweep: Option<Vec<u64>>,
    #[arg(long, global = true, default_value_t = 1)]
    repetitions: u32,
    /// Sweep worker threads; one per core when unset.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Host timings of block formation and storage.
    Bench {
        #[arg(long, default_value_t = 1000)]
        iterations: u64,
    },
    /// Throughput over fixed branch counts.
    D1,
    /// Phase durations at different link latencies.
    D2,
    /// Throughput over network sizes.
    D3,
    /// Throughput over collision intervals.
    D4,
    /// Winner proportions.
    D5,
    /// One simulation with the given flags.
    Run {
        /// Write the final tree here.
        #[arg(long)]
        export_tree: Option<PathBuf>,
    },
    /// Check an exported tree.
    Validate { path: PathBuf },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
        .map_err(|e: medblocktree::netsim::SimError| e.to_string())
}

fn spec(dimension: Dimension, opts: &Opts) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(dimension);
    let base = &mut spec.base;
    if let Some(w) = opts.workers {
        base.worker_count = w;
    }
    if let Some(l) = opts.latency_ms {
        base.latency = LatencyModel::fixed(l);
    }
    if let Some(n) = opts.metadata_count {
        base.metadata_count = n;
    }
    if let Some(s) = opts.collision_interval_s {
        base.collision_interval_s = Some(s);
    }
    if let Some(b) = opts.branches {
        base.initial_branches = b;
        spec.branch_counts = vec![b];
    }
    if let Some(m) = opts.mode {
        base.mode = m;
    }
    if let Some(s) = &opts.sweep {
        spec.sweep = s.clone();
    }
    spec.repetitions = opts.repetitions;
    spec.seed = opts.seed;
    spec.base.rng_seed = opts.seed;
    spec.out = opts.out.clone();
    spec
}

fn experiment(dimension: Dimension, opts: &Opts) -> Result<(), BenchError> {
    let report = run_experiment(&spec(dimension, opts), opts.threads)?;
    if let Some(m) = &report.micro {
        print!("{}", m.to_csv());
        return Ok(());
    }
    print!("{}", report.summary_csv());
    if !report.fairness.is_empty() {
        print!("{}", fairness_csv(&report.fairness));
    }
    Ok(())
}

fn run(opts: &Opts, export_tree: Option<PathBuf>) -> Result<(), BenchError> {
    let config = spec(Dimension::Branches, opts).base;
    let run = simulate(&config)?;
    println!("{}", run.log.summary_json());
    if let Some(dir) = &opts.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), run.log.to_csv())?;
        std::fs::write(dir.join("summary.json"), run.log.summary_json())?;
    }
    if let Some(path) = export_tree {
        let tree = run
            .tree
            .ok_or_else(|| BenchError::Spec("the baseline has no tree to export".into()))?;
        write_tree_file(&tree, &path)?;
    }
    Ok(())
}

fn validate(path: &Path) -> Result<(), BenchError> {
    let tree = read_tree_file(path)?;
    let report = tree.validate_tree();
    if !report.is_clean() {
        return Err(BenchError::Invariant {
            label: path.display().to_string(),
            reason: report.to_string(),
        });
    }
    println!(
        "ok: {} blocks on {} branches",
        tree.block_count(),
        tree.branch_count()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = &cli.opts;
    let result = match cli.command {
        Command::Bench { iterations } => {
            let mut o = spec(Dimension::Bench, opts);
            o.sweep = vec![iterations];
            run_experiment(&o, opts.threads).map(|r| {
                if let Some(m) = r.micro {
                    print!("{}", m.to_csv());
                }
            })
        }
        Command::D1 => experiment(Dimension::Branches, opts),
        Command::D2 => experiment(Dimension::Latency, opts),
        Command::D3 => experiment(Dimension::Nodes, opts),
        Command::D4 => experiment(Dimension::CollisionRate, opts),
        Command::D5 => experiment(Dimension::Fairness, opts),
        Command::Run { export_tree } => run(opts, export_tree),
        Command::Validate { path } => validate(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mbt: {e}");
            ExitCode::FAILURE
        }
    }
}
