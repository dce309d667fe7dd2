//! Seeded per-thread operation streams shared by the benchmark and stress runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::api::{ConcurrentMap, Key, MapReport, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Insert(Key, Value),
    Get(Key),
    Remove(Key),
}

impl Op {
    pub fn is_read(self) -> bool {
        matches!(self, Op::Get(_))
    }

    pub fn apply(self, map: &dyn ConcurrentMap) -> MapReport {
        match self {
            Op::Insert(k, v) => map.insert(k, v),
            Op::Get(k) => map.get(k),
            Op::Remove(k) => map.remove(k),
        }
    }
}

/// What a worker thread does with its operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Uniform random gets.
    Reader,
    /// Uniform random keys, inserts and removes 50/50.
    Writer,
    /// Gets with the given percent probability, writer ops otherwise.
    Mixed { read_pct: u8 },
}

/// Deterministic op generator: same seed, thread index and keyspace give the
/// same stream.
pub struct OpStream {
    rng: ChaCha8Rng,
    role: Role,
    keyspace: u64,
}

/// RNG for stream `stream` of `seed`. Stream 0 is reserved for prefill.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl OpStream {
    pub fn new(seed: u64, thread: usize, role: Role, keyspace: u64) -> Self {
        assert!(keyspace > 0);
        OpStream {
            rng: stream_rng(seed, thread as u64 + 1),
            role,
            keyspace,
        }
    }

    fn write(&mut self, key: Key) -> Op {
        if self.rng.gen::<bool>() {
            Op::Insert(key, self.rng.gen())
        } else {
            Op::Remove(key)
        }
    }
}

impl Iterator for OpStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        let key = self.rng.gen_range(0..self.keyspace);
        Some(match self.role {
            Role::Reader => Op::Get(key),
            Role::Writer => self.write(key),
            Role::Mixed { read_pct } => {
                if self.rng.gen_range(0..100u8) < read_pct {
                    Op::Get(key)
                } else {
                    self.write(key)
                }
            }
        })
    }
}

/// `count` distinct keys drawn uniformly from `0..keyspace`, with random values.
pub fn prefill_entries(seed: u64, keyspace: u64, count: u64) -> Vec<(Key, Value)> {
    let mut rng = stream_rng(seed, 0);
    let keys: Vec<Key> = if keyspace <= usize::MAX as u64 {
        rand::seq::index::sample(&mut rng, keyspace as usize, count as usize)
            .into_iter()
            .map(|k| k as Key)
            .collect()
    } else {
        let mut set = std::collections::HashSet::new();
        while (set.len() as u64) < count {
            set.insert(rng.gen_range(0..keyspace));
        }
        set.into_iter().collect()
    };
    keys.into_iter().map(|k| (k, rng.gen())).collect()
}
