//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits nonzero if any criterion fails.
//!
//! Throughput criteria depend on the host. A criterion whose stated
//! precondition the host does not meet is reported as N/A with the
//! measurement it would have judged.

use std::collections::{BTreeSet, HashMap};
use std::process::ExitCode;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiermap::ebr::Reclaim;
use tiermap::harness::faults::{Fault, FaultyMap};
use tiermap::harness::workload::Op;
use tiermap::harness::{
    build_map, check_key_history, oracle_map, run_bench, run_stress, run_stress_on, BenchConfig, Impl, StressOutcome,
};
use tiermap::{
    bucket_index, hash_key, CoarseMap, Collector, ConcurrentMap, EbrConfig, Guard, LockFreeList, LockFreeMap, MapHandle,
    MapReport, StripedMap, DEFAULT_BUCKETS,
};

enum Outcome {
    Pass(String),
    Fail(String),
    NotApplicable(String),
}

use Outcome::{Fail, NotApplicable, Pass};

fn judge(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------- A1

fn a1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let ops: Vec<Op> = (0..100_000)
        .map(|_| {
            let key = rng.gen_range(0..2_048u64);
            match rng.gen_range(0..3) {
                0 => Op::Insert(key, rng.gen()),
                1 => Op::Get(key),
                _ => Op::Remove(key),
            }
        })
        .collect();
    let mut oracle = oracle_map();
    let expected: Vec<MapReport> = ops
        .iter()
        .map(|op| match *op {
            Op::Insert(k, v) => oracle.insert(k, v),
            Op::Get(k) => oracle.get(k),
            Op::Remove(k) => oracle.remove(k),
        })
        .collect();
    let mut mismatches = Vec::new();
    for imp in Impl::ALL {
        let map = build_map(imp, 256).expect("valid bucket count");
        if let Some(i) = ops.iter().zip(&expected).position(|(op, want)| op.apply(map.as_ref()) != *want) {
            mismatches.push(format!("{imp} diverges at op {i} ({:?})", ops[i]));
        }
    }
    let detail = format!("{} ops x 3 tiers; {}", ops.len(), if mismatches.is_empty() { "all reports identical".into() } else { mismatches.join("; ") });
    judge(mismatches.is_empty(), detail)
}

// ---------------------------------------------------------------- A2

fn a2_config(imp: Impl) -> BenchConfig {
    BenchConfig {
        imp,
        readers: 4,
        writers: 4,
        keyspace: 64,
        prefill: 32,
        nbuckets: 16,
        seed: 0xA2,
        read_pct: Some(50),
        ..BenchConfig::default()
    }
}

/// Number of keys whose history fails the checker.
fn failing_keys(out: &StressOutcome, stop_at_first: bool) -> usize {
    let mut failed = 0;
    for h in out.history.values() {
        let v = check_key_history(h).expect("single-key history");
        if !v.linearizable {
            assert!(v.counterexample.is_some_and(|c| !c.is_empty()));
            failed += 1;
            if stop_at_first {
                break;
            }
        }
    }
    failed
}

fn a2_concurrent_correctness() -> Outcome {
    let out = run_stress(&a2_config(Impl::Lockfree), 100_000, true).expect("valid config");
    let violations = failing_keys(&out, false);
    let faults = [
        ("lost-write", Fault::LostWrite { every: 100 }),
        ("stale-read", Fault::StaleRead { every: 20 }),
        ("double-remove", Fault::DoubleRemove),
    ];
    let mut missed = Vec::new();
    for (name, fault) in faults {
        let shim = Arc::new(FaultyMap::new(fault));
        let out = run_stress_on(shim, &a2_config(Impl::Coarse), 20_000, true).expect("valid config");
        if failing_keys(&out, true) == 0 {
            missed.push(name);
        }
    }
    let detail = format!(
        "{} keys checked, {violations} violations; fault shims missed: {}",
        out.history.len(),
        if missed.is_empty() { "none".into() } else { missed.join(",") }
    );
    judge(violations == 0 && missed.is_empty() && out.history.len() == 64, detail)
}

// ---------------------------------------------------------------- A3 / A4

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Median total ops/s over five runs.
fn median_throughput(config: &BenchConfig) -> f64 {
    median(
        (0..5)
            .map(|run| {
                let c = BenchConfig {
                    seed: config.seed + run,
                    ..config.clone()
                };
                run_bench(&c).expect("valid config").rows[0].total_per_sec()
            })
            .collect(),
    )
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn a3_read_scaling() -> Outcome {
    let c = cores();
    let t = c.clamp(1, 8);
    let read_only = |readers| BenchConfig {
        imp: Impl::Lockfree,
        readers,
        writers: 0,
        duration: Duration::from_secs(5),
        seed: 0xA3,
        ..BenchConfig::default()
    };
    if c < 4 {
        // Precondition unmet; measure the 8-thread ratio for the record.
        let one = median_throughput(&read_only(1));
        let eight = median_throughput(&read_only(8));
        return NotApplicable(format!(
            "host has {c} core(s), criterion needs >= 4; measured 8-reader/1-reader = {:.2} ({eight:.0} vs {one:.0} reads/s)",
            eight / one
        ));
    }
    let one = median_throughput(&read_only(1));
    let many = median_throughput(&read_only(t));
    let need = 0.5 * t as f64 * one;
    judge(
        many >= need,
        format!("T={t}: {many:.0} reads/s vs single {one:.0} (need >= {need:.0}, ratio {:.2})", many / one),
    )
}

fn a4_tier_ordering() -> Outcome {
    let mixed = |imp| BenchConfig {
        imp,
        readers: 8,
        writers: 0,
        read_pct: Some(90),
        duration: Duration::from_secs(2),
        nbuckets: DEFAULT_BUCKETS,
        seed: 0xA4,
        ..BenchConfig::default()
    };
    let coarse = median_throughput(&mixed(Impl::Coarse));
    let striped = median_throughput(&mixed(Impl::Striped));
    let lockfree = median_throughput(&mixed(Impl::Lockfree));
    judge(
        lockfree >= striped && striped >= 1.1 * coarse,
        format!(
            "8 threads 90/10 on {} core(s): lockfree {lockfree:.0}, striped {striped:.0}, coarse {coarse:.0} ops/s (need lockfree >= striped >= {:.0})",
            cores(),
            1.1 * coarse
        ),
    )
}

// ---------------------------------------------------------------- A5

fn a5_ebr_safety() -> Outcome {
    let handle = MapHandle::with_config(256, EbrConfig { cadence: 64, poison: true }).expect("valid config");
    let config = BenchConfig {
        imp: Impl::Lockfree,
        readers: 4,
        writers: 4,
        keyspace: 1_024,
        prefill: 512,
        nbuckets: 256,
        seed: 0xA5,
        read_pct: Some(50),
        ..BenchConfig::default()
    };
    run_stress_on(Arc::new(handle.clone()), &config, 1_000_000, false).expect("valid config");
    handle.quiesce();
    let s = handle.ebr_stats();
    judge(
        s.canary_hits == 0 && s.pending() == 0 && s.destroyed == s.retired && s.retired > 0,
        format!(
            "1e6 ops, 8 threads: canary hits {}, retired {}, destroyed {}, pending {}",
            s.canary_hits,
            s.retired,
            s.destroyed,
            s.pending()
        ),
    )
}

// ---------------------------------------------------------------- A6

struct Probe {
    id: usize,
    freed: Arc<std::sync::Mutex<Vec<usize>>>,
}

impl Reclaim for Probe {}

impl Drop for Probe {
    fn drop(&mut self) {
        self.freed.lock().unwrap().push(self.id);
    }
}

fn a6_epoch_semantics() -> Outcome {
    let collector = Collector::with_config(EbrConfig {
        cadence: u64::MAX,
        poison: false,
    })
    .expect("valid config");
    let locals = [collector.register(), collector.register(), collector.register()];
    let freed = Arc::new(std::sync::Mutex::new(Vec::new()));
    let mut retired_at: Vec<(usize, u64)> = Vec::new(); // (participant, epoch)
    let mut rng = ChaCha8Rng::seed_from_u64(0xA6);
    let mut errors = Vec::new();
    let mut advances = (0, 0);

    let mut guards: [Option<Guard<'_>>; 3] = [None, None, None];
    let mut already_freed = 0;
    for step in 0..20_000 {
        let who = rng.gen_range(0..3);
        match rng.gen_range(0..10) {
            0..=1 => {
                guards[who] = match guards[who].take() {
                    Some(_) => None,
                    None => Some(locals[who].pin().expect("not pinned")),
                };
            }
            2..=4 => {
                if let Some(g) = &guards[who] {
                    let id = retired_at.len();
                    retired_at.push((who, collector.global_epoch()));
                    unsafe {
                        g.retire(Box::into_raw(Box::new(Probe {
                            id,
                            freed: freed.clone(),
                        })))
                    };
                }
            }
            5..=7 => {
                let global = collector.global_epoch();
                let stale = locals.iter().any(|l| l.is_pinned() && l.announced_epoch() != global);
                let advanced = collector.try_advance();
                if advanced == stale {
                    errors.push(format!("step {step}: try_advance={advanced} with stale announcer={stale}"));
                }
                if advanced {
                    advances.0 += 1;
                } else {
                    advances.1 += 1;
                }
            }
            _ => {
                if let Some(g) = &guards[who] {
                    g.collect();
                    let now = collector.global_epoch();
                    // Liveness: everything this participant retired two epochs ago is gone.
                    let gone: BTreeSet<usize> = freed.lock().unwrap().iter().copied().collect();
                    for (id, &(p, e)) in retired_at.iter().enumerate() {
                        if p == who && e + 2 <= now && !gone.contains(&id) {
                            errors.push(format!("step {step}: object {id} retired at {e} still live at {now}"));
                        }
                    }
                }
            }
        }
        // Safety: nothing is freed before the global epoch reaches its retire epoch + 2.
        let now = collector.global_epoch();
        let list = freed.lock().unwrap();
        for &id in &list[already_freed..] {
            let e = retired_at[id].1;
            if now < e + 2 {
                errors.push(format!("step {step}: object {id} retired at {e} freed at epoch {now}"));
            }
        }
        already_freed = list.len();
        if errors.len() > 5 {
            break;
        }
    }
    drop(guards);
    let detail = format!(
        "{} retirements, {} freed, {} advances / {} refusals; {}",
        retired_at.len(),
        freed.lock().unwrap().len(),
        advances.0,
        advances.1,
        if errors.is_empty() { "no violations".into() } else { errors.join("; ") }
    );
    judge(errors.is_empty() && advances.0 > 10 && advances.1 > 10, detail)
}

// ---------------------------------------------------------------- A7

fn a7_sequence(rng: &mut ChaCha8Rng, collector: &Collector) -> Result<(), String> {
    let local = collector.register();
    let list = LockFreeList::new();
    let mut oracle: HashMap<u64, u64> = HashMap::new();
    let mut ever_marked = BTreeSet::new();
    for _ in 0..rng.gen_range(1..60) {
        let g = local.pin().expect("not pinned");
        let k = rng.gen_range(0..20u64);
        match rng.gen_range(0..8) {
            0..=2 => {
                let v = rng.gen();
                let want = oracle.insert(k, v).map_or(MapReport::Inserted, MapReport::Replaced);
                if list.insert(k, v, &g) != want {
                    return Err(format!("insert {k} != {want}"));
                }
            }
            3..=4 => {
                let want = oracle.remove(&k).map_or(MapReport::NotFound, MapReport::Removed);
                if list.remove(k, &g) != want {
                    return Err(format!("remove {k} != {want}"));
                }
            }
            5..=6 => {
                let want = oracle.get(&k).map_or(MapReport::NotFound, |&v| MapReport::Found(v));
                if list.get(k, &g) != want {
                    return Err(format!("get {k} != {want}"));
                }
            }
            _ => {
                // A remover stalled between marking and unlinking.
                if oracle.remove(&k).is_some() {
                    list.inject_mark(k, &g);
                }
            }
        }
        let snap = list.snapshot(&g);
        let live: Vec<u64> = snap.iter().filter(|n| !n.next_marked).map(|n| n.key).collect();
        if !live.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!("unsorted reachable keys {live:?}"));
        }
        if live.iter().copied().collect::<BTreeSet<_>>() != oracle.keys().copied().collect() {
            return Err(format!("reachable {live:?} != oracle"));
        }
        for n in &snap {
            if n.next_marked {
                ever_marked.insert(n.addr);
            } else if ever_marked.contains(&n.addr) {
                return Err(format!("node {} went marked -> unmarked", n.key));
            }
        }
    }
    Ok(())
}

/// Two threads race `op` on key `i` in trial `i`; returns the per-trial reports.
fn race(map: &LockFreeMap, trials: u64, op: impl Fn(&LockFreeMap, u64, u64) -> MapReport + Sync) -> Vec<(MapReport, MapReport)> {
    let barrier = Barrier::new(2);
    let per_thread: Vec<Vec<MapReport>> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..2u64)
            .map(|t| {
                let (barrier, op) = (&barrier, &op);
                s.spawn(move || {
                    (0..trials)
                        .map(|i| {
                            barrier.wait();
                            op(map, i, t)
                        })
                        .collect()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().expect("race worker")).collect()
    });
    per_thread[0].iter().copied().zip(per_thread[1].iter().copied()).collect()
}

fn a7_list_properties() -> Outcome {
    let collector = Collector::with_config(EbrConfig {
        cadence: u64::MAX,
        poison: false,
    })
    .expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(0xA7);
    let mut seq_errors = Vec::new();
    for i in 0..10_000 {
        if let Err(e) = a7_sequence(&mut rng, &collector) {
            seq_errors.push(format!("sequence {i}: {e}"));
        }
    }

    const TRIALS: u64 = 10_000;
    let map = LockFreeMap::new(1_024).expect("valid buckets");
    let inserts = race(&map, TRIALS, |m, k, t| m.insert(k, t));
    let bad_inserts = inserts
        .iter()
        .filter(|r| !matches!(r, (MapReport::Inserted, MapReport::Replaced(0)) | (MapReport::Replaced(1), MapReport::Inserted)))
        .count();
    // Every key now holds the losing thread's value; race to remove it.
    let removes = race(&map, TRIALS, |m, k, _| m.remove(k));
    let bad_removes = removes
        .iter()
        .filter(|(a, b)| {
            let wins = [a, b].iter().filter(|r| matches!(r, MapReport::Removed(_))).count();
            let losses = [a, b].iter().filter(|r| **r == &MapReport::NotFound).count();
            (wins, losses) != (1, 1)
        })
        .count();

    let detail = format!(
        "10000 sequences: {} violations; {TRIALS} insert races: {bad_inserts} bad; {TRIALS} remove races: {bad_removes} bad",
        seq_errors.len()
    );
    let detail = match seq_errors.first() {
        Some(e) => format!("{detail}; first: {e}"),
        None => detail,
    };
    judge(seq_errors.is_empty() && bad_inserts == 0 && bad_removes == 0, detail)
}

// ---------------------------------------------------------------- A8

/// Reference FNV-1a/64, written out independently of the library.
fn reference_fnv1a(key: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in key.to_le_bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

type Placement<'a> = Box<dyn Fn(usize) -> Vec<u64> + 'a>;

fn a8_hash_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let keys: BTreeSet<u64> = (0..10_000).map(|_| rng.gen()).collect();
    let mut errors = Vec::new();
    for n in [1usize, 2, 8, 128] {
        let coarse = CoarseMap::new(n).expect("valid buckets");
        let striped = StripedMap::new(n).expect("valid buckets");
        let lockfree = LockFreeMap::new(n).expect("valid buckets");
        for &k in &keys {
            let want = (reference_fnv1a(k) % n as u64) as usize;
            if bucket_index(hash_key(k), n) != want {
                errors.push(format!("bucket_index({k}, {n})"));
            }
            coarse.insert(k, k);
            striped.insert(k, k);
            lockfree.insert(k, k);
        }
        let placements: [(&str, Placement<'_>); 3] = [
            ("coarse", Box::new(|b| coarse.bucket_keys(b))),
            ("striped", Box::new(|b| striped.bucket_keys(b))),
            ("lockfree", Box::new(|b| lockfree.bucket_keys(b))),
        ];
        for (name, bucket_keys) in placements {
            let mut seen = 0;
            for b in 0..n {
                for k in bucket_keys(b) {
                    seen += 1;
                    if (reference_fnv1a(k) % n as u64) as usize != b {
                        errors.push(format!("{name}: key {k} in bucket {b} of {n}"));
                    }
                }
            }
            if seen != keys.len() {
                errors.push(format!("{name}: {seen} of {} keys placed with n={n}", keys.len()));
            }
        }
    }
    let detail = format!(
        "{} keys x nbuckets {{1,2,8,128}} x 3 tiers: {}",
        keys.len(),
        if errors.is_empty() { "exact".into() } else { format!("{} mismatches, first {}", errors.len(), errors[0]) }
    );
    judge(errors.is_empty(), detail)
}

// ----------------------------------------------------------------

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are accepted and ignored.
    let criteria: [Criterion; 8] = [
        ("A1 oracle equivalence", Duration::from_secs(30), a1_oracle_equivalence),
        ("A2 concurrent correctness", Duration::from_secs(120), a2_concurrent_correctness),
        ("A3 read scaling", Duration::from_secs(300), a3_read_scaling),
        ("A4 tier ordering", Duration::from_secs(300), a4_tier_ordering),
        ("A5 EBR safety", Duration::from_secs(180), a5_ebr_safety),
        ("A6 EBR epoch semantics", Duration::from_secs(1), a6_epoch_semantics),
        ("A7 list micro-properties", Duration::from_secs(120), a7_list_properties),
        ("A8 hash conformance", Duration::from_secs(5), a8_hash_conformance),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let over = if took > budget {
            format!(" [over runtime budget {:?}]", budget)
        } else {
            String::new()
        };
        let (tag, detail) = match outcome {
            Pass(d) if over.is_empty() => ("PASS", d),
            Pass(d) | Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            NotApplicable(d) => ("N/A ", d),
        };
        println!("{tag} {name}: {detail} ({:.1}s){over}", took.as_secs_f64());
    }
    if failed == 0 {
        println!("acceptance: all applicable criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
