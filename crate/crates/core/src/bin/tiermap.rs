use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use tiermap::harness::history::{group_by_key, load_history, save_history};
use tiermap::harness::{check_key_history, run_bench, run_stress, BenchConfig, HarnessError, Impl, OpRecord};
use tiermap::DEFAULT_BUCKETS;

#[derive(Parser)]
#[command(name = "tiermap", about = "Benchmark and verify the concurrent map tiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure reads/s and writes/s over a fixed window.
    Bench(Workload),
    /// Run a fixed number of operations, optionally recording and checking them.
    Stress {
        #[command(flatten)]
        workload: Workload,
        /// Total operations across all worker threads.
        #[arg(long, default_value_t = 100_000)]
        ops: u64,
        /// Record every operation and check per-key linearizability.
        #[arg(long)]
        record: bool,
        /// Write the recorded history here (implies --record).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Check a recorded history file.
    Check {
        #[arg(long)]
        history: PathBuf,
    },
}

#[derive(Args)]
struct Workload {
    #[arg(long = "impl", value_enum, default_value_t = Impl::Lockfree)]
    imp: Impl,
    #[arg(long, default_value_t = 1)]
    readers: usize,
    #[arg(long, default_value_t = 0)]
    writers: usize,
    #[arg(long, default_value_t = 5.0)]
    duration_secs: f64,
    #[arg(long, default_value_t = 1 << 16)]
    keyspace: u64,
    /// Defaults to half the keyspace.
    #[arg(long)]
    prefill: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    nbuckets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give every thread a mixed stream with this percentage of reads.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=100))]
    read_pct: Option<u8>,
    /// Append one CSV row per run here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Workload {
    fn config(&self) -> Result<BenchConfig, HarnessError> {
        if !(self.duration_secs.is_finite() && self.duration_secs >= 0.0) {
            return Err(HarnessError::InvalidConfig("duration must be a non-negative number".into()));
        }
        Ok(BenchConfig {
            imp: self.imp,
            readers: self.readers,
            writers: self.writers,
            duration: Duration::from_secs_f64(self.duration_secs),
            keyspace: self.keyspace,
            prefill: self.prefill.unwrap_or(self.keyspace / 2),
            nbuckets: self.nbuckets,
            seed: self.seed,
            read_pct: self.read_pct,
            csv_path: self.csv.clone(),
        })
    }
}

/// Checks every key; prints failures. Returns whether all keys passed.
fn check_all(records: Vec<OpRecord>) -> Result<bool, HarnessError> {
    let by_key = group_by_key(records);
    let mut failed = 0;
    for (key, history) in &by_key {
        let verdict = check_key_history(history)?;
        if !verdict.linearizable {
            failed += 1;
            println!("key {key}: NOT linearizable; counterexample:");
            for r in verdict.counterexample.unwrap_or_default() {
                println!("  {r}");
            }
        }
    }
    println!("checked {} keys: {} failed", by_key.len(), failed);
    Ok(failed == 0)
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Bench(w) => {
            let config = w.config()?;
            if config.imp == Impl::Coarse {
                eprintln!("coarse lock: std::sync::RwLock (platform default fairness)");
            }
            let report = run_bench(&config)?;
            println!("{}", tiermap::harness::CSV_HEADER);
            for row in &report.rows {
                println!("{}", row.csv_line());
            }
            Ok(true)
        }
        Command::Stress {
            workload,
            ops,
            record,
            history,
        } => {
            let config = workload.config()?;
            let record = record || history.is_some();
            let outcome = run_stress(&config, ops, record)?;
            println!(
                "{}: {} ops on {} threads, {} keys present afterwards",
                config.imp,
                outcome.ops,
                config.threads(),
                outcome.snapshot.len()
            );
            if !record {
                return Ok(true);
            }
            let mut records: Vec<OpRecord> = outcome.history.into_values().flatten().collect();
            records.sort_by_key(|r| (r.invoke_ns, r.thread));
            if let Some(path) = &history {
                save_history(path, &records)?;
            }
            check_all(records)
        }
        Command::Check { history } => check_all(load_history(&history)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
