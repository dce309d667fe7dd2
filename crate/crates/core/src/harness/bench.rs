//! Fixed-window throughput benchmark.
//!
//! The map is prefilled, then every worker waits on a start barrier and runs
//! its seeded op stream until the main thread raises the stop flag. Each
//! worker counts its own reads and writes; totals are summed after join.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use super::workload::{prefill_entries, OpStream, Role};
use super::{build_map, HarnessError, Impl};
use crate::api::ConcurrentMap;
use crate::lockfree::DEFAULT_BUCKETS;

pub const CSV_HEADER: &str = "impl,readers,writers,duration_s,reads_per_sec,writes_per_sec,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub imp: Impl,
    pub readers: usize,
    pub writers: usize,
    pub duration: Duration,
    pub keyspace: u64,
    pub prefill: u64,
    pub nbuckets: usize,
    pub seed: u64,
    /// When set, all `readers + writers` threads run a mixed stream with this
    /// percentage of gets instead of dedicated reader and writer roles.
    pub read_pct: Option<u8>,
    pub csv_path: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            imp: Impl::Lockfree,
            readers: 1,
            writers: 0,
            duration: Duration::from_secs(5),
            keyspace: 1 << 16,
            prefill: 1 << 15,
            nbuckets: DEFAULT_BUCKETS,
            seed: 0,
            read_pct: None,
            csv_path: None,
        }
    }
}

impl BenchConfig {
    pub fn threads(&self) -> usize {
        self.readers + self.writers
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_owned()));
        if self.threads() == 0 {
            return bad("need at least one reader or writer");
        }
        if self.keyspace == 0 {
            return bad("keyspace must be at least 1");
        }
        if self.prefill > self.keyspace {
            return bad("prefill exceeds keyspace");
        }
        if self.nbuckets == 0 {
            return bad("nbuckets must be at least 1");
        }
        if self.read_pct.is_some_and(|p| p > 100) {
            return bad("read percentage above 100");
        }
        Ok(())
    }

    /// Role of worker `thread` (0-based).
    pub fn role(&self, thread: usize) -> Role {
        match self.read_pct {
            Some(read_pct) => Role::Mixed { read_pct },
            None if thread < self.readers => Role::Reader,
            None => Role::Writer,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub imp: Impl,
    pub readers: usize,
    pub writers: usize,
    pub duration_s: f64,
    pub reads_per_sec: f64,
    pub writes_per_sec: f64,
    pub seed: u64,
}

impl BenchRow {
    pub fn total_per_sec(&self) -> f64 {
        self.reads_per_sec + self.writes_per_sec
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.1},{:.1},{}",
            self.imp,
            self.readers,
            self.writers,
            self.duration_s,
            self.reads_per_sec,
            self.writes_per_sec,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Builds the configured map and benchmarks it.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, HarnessError> {
    config.validate()?;
    let map = build_map(config.imp, config.nbuckets)?;
    run_bench_on(map, config)
}

/// Benchmarks an existing (normally empty) map with `config`'s workload.
pub fn run_bench_on(map: Arc<dyn ConcurrentMap>, config: &BenchConfig) -> Result<BenchReport, HarnessError> {
    config.validate()?;
    for (k, v) in prefill_entries(config.seed, config.keyspace, config.prefill) {
        map.insert(k, v);
    }

    let threads = config.threads();
    let start = Barrier::new(threads + 1);
    let stop = AtomicBool::new(false);
    let (counts, window) = std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|t| {
                let (map, start, stop) = (&map, &start, &stop);
                let ops = OpStream::new(config.seed, t, config.role(t), config.keyspace);
                s.spawn(move || {
                    let (mut reads, mut writes) = (0u64, 0u64);
                    start.wait();
                    for (i, op) in ops.enumerate() {
                        if i % 32 == 0 && stop.load(Ordering::Relaxed) {
                            break;
                        }
                        std::hint::black_box(op.apply(map.as_ref()));
                        if op.is_read() {
                            reads += 1;
                        } else {
                            writes += 1;
                        }
                    }
                    (reads, writes)
                })
            })
            .collect();
        start.wait();
        let t0 = Instant::now();
        std::thread::sleep(config.duration);
        stop.store(true, Ordering::Relaxed);
        let window = t0.elapsed();
        let counts: Vec<(u64, u64)> = workers
            .into_iter()
            .map(|w| w.join().expect("bench worker panicked"))
            .collect();
        (counts, window)
    });

    let secs = window.as_secs_f64();
    let reads: u64 = counts.iter().map(|c| c.0).sum();
    let writes: u64 = counts.iter().map(|c| c.1).sum();
    let row = BenchRow {
        imp: config.imp,
        readers: config.readers,
        writers: config.writers,
        duration_s: secs,
        reads_per_sec: reads as f64 / secs,
        writes_per_sec: writes as f64 / secs,
        seed: config.seed,
    };
    if let Some(path) = &config.csv_path {
        append_csv(path, &row)?;
    }
    Ok(BenchReport { rows: vec![row] })
}

/// Appends `row`, writing the header first if the file is new or empty.
pub fn append_csv(path: &PathBuf, row: &BenchRow) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.clone(),
        source,
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io)?;
    if file.metadata().map_err(io)?.len() == 0 {
        writeln!(file, "{CSV_HEADER}").map_err(io)?;
    }
    writeln!(file, "{}", row.csv_line()).map_err(io)
}
