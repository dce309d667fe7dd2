//! Operation-count-bounded stress runs with optional history recording.

use std::collections::BTreeMap;
use std::sync::{Arc, Barrier};
use std::time::Instant;

use super::bench::BenchConfig;
use super::history::{group_by_key, OpKind, OpRecord};
use super::workload::{prefill_entries, Op, OpStream};
use super::{build_map, HarnessError};
use crate::api::{ConcurrentMap, Key, Value};

/// Largest keyspace accepted for recorded runs.
pub const MAX_RECORDED_KEYSPACE: u64 = 256;

#[derive(Debug, Clone, Default)]
pub struct StressOutcome {
    /// Map contents after all workers joined, read back over the keyspace.
    pub snapshot: BTreeMap<Key, Value>,
    /// Recorded operations per key, prefill included. Empty unless recording.
    pub history: BTreeMap<Key, Vec<OpRecord>>,
    pub ops: u64,
}

/// Per-thread clock that keeps each thread's records strictly ordered.
struct Clock {
    base: Instant,
    last: u64,
}

impl Clock {
    fn tick(&mut self) -> u64 {
        let now = self.base.elapsed().as_nanos() as u64;
        self.last = now.max(self.last + 1);
        self.last
    }
}

fn record(thread: u32, op: Op, clock: &mut Clock, map: &dyn ConcurrentMap) -> OpRecord {
    let invoke_ns = clock.tick();
    let report = op.apply(map);
    let respond_ns = clock.tick();
    let (key, kind, arg) = match op {
        Op::Insert(k, v) => (k, OpKind::Insert, Some(v)),
        Op::Get(k) => (k, OpKind::Get, None),
        Op::Remove(k) => (k, OpKind::Remove, None),
    };
    OpRecord {
        thread,
        key,
        kind,
        arg,
        invoke_ns,
        respond_ns,
        report,
    }
}

pub fn run_stress(config: &BenchConfig, ops: u64, record: bool) -> Result<StressOutcome, HarnessError> {
    config.validate()?;
    let map = build_map(config.imp, config.nbuckets)?;
    run_stress_on(map, config, ops, record)
}

/// Runs `ops` operations split across `config`'s threads against `map`.
///
/// Prefill inserts are recorded under thread id `readers + writers`, ahead of
/// every worker operation in real time.
pub fn run_stress_on(
    map: Arc<dyn ConcurrentMap>,
    config: &BenchConfig,
    ops: u64,
    record_ops: bool,
) -> Result<StressOutcome, HarnessError> {
    config.validate()?;
    if record_ops && config.keyspace > MAX_RECORDED_KEYSPACE {
        return Err(HarnessError::InvalidConfig(format!(
            "recorded runs need keyspace <= {MAX_RECORDED_KEYSPACE}"
        )));
    }
    let threads = config.threads();
    let base = Instant::now();
    let mut records = Vec::new();

    let mut clock = Clock { base, last: 0 };
    for (k, v) in prefill_entries(config.seed, config.keyspace, config.prefill) {
        let r = record(threads as u32, Op::Insert(k, v), &mut clock, map.as_ref());
        if record_ops {
            records.push(r);
        }
    }
    let after_prefill = clock.last;

    let start = Barrier::new(threads);
    let per_thread: Vec<Vec<OpRecord>> = std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|t| {
                let (map, start) = (&map, &start);
                let share = ops / threads as u64 + u64::from((t as u64) < ops % threads as u64);
                let stream = OpStream::new(config.seed, t, config.role(t), config.keyspace);
                s.spawn(move || {
                    let mut clock = Clock {
                        base,
                        last: after_prefill,
                    };
                    let mut out = Vec::with_capacity(if record_ops { share as usize } else { 0 });
                    start.wait();
                    for op in stream.take(share as usize) {
                        let r = record(t as u32, op, &mut clock, map.as_ref());
                        if record_ops {
                            out.push(r);
                        }
                    }
                    out
                })
            })
            .collect();
        workers
            .into_iter()
            .map(|w| w.join().expect("stress worker panicked"))
            .collect()
    });
    records.extend(per_thread.into_iter().flatten());

    let snapshot = (0..config.keyspace)
        .filter_map(|k| match map.get(k) {
            crate::api::MapReport::Found(v) => Some((k, v)),
            _ => None,
        })
        .collect();
    Ok(StressOutcome {
        snapshot,
        history: group_by_key(records),
        ops,
    })
}
