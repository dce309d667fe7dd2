//! Concurrent `u64 -> u64` maps in three tiers of increasing sophistication:
//!
//! * [`CoarseMap`]: a chained hashmap behind a single reader-writer lock.
//! * [`StripedMap`]: one exclusive lock per bucket over sorted chains.
//! * [`LockFreeMap`] / [`MapHandle`]: an array of Harris lock-free sorted
//!   lists whose removed nodes are reclaimed by the epoch scheme in [`ebr`].
//!
//! All three implement [`ConcurrentMap`] and place keys identically
//! (FNV-1a/64 of the key's little-endian bytes, modulo the bucket count).
//! The [`harness`] module holds the benchmark, stress and linearizability
//! tooling used by the `tiermap` binary.

pub mod api;
pub mod coarse;
pub mod ebr;
pub mod harness;
pub mod list;
pub mod lockfree;
pub mod striped;

pub use api::{bucket_index, fnv1a, hash_key, ConcurrentMap, Digest, Key, MapError, MapReport, Value};
pub use coarse::CoarseMap;
pub use ebr::{Collector, EbrConfig, EbrError, EbrStats, Guard, LocalHandle};
pub use list::LockFreeList;
pub use lockfree::{LockFreeMap, MapHandle, DEFAULT_BUCKETS};
pub use striped::StripedMap;
