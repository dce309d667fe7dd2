//! Lock-free hashmap: a fixed array of [`LockFreeList`] buckets sharing one
//! epoch collector. Every operation pins, works on one bucket, and unpins.

use std::sync::Arc;

use crate::api::{bucket_index, check_buckets, hash_key, ConcurrentMap, Key, MapError, MapReport, Value};
use crate::ebr::{Collector, EbrConfig, EbrStats, Guard};
use crate::list::LockFreeList;

/// Bucket count used by the benchmark CLI unless overridden.
pub const DEFAULT_BUCKETS: usize = 1 << 16;

pub struct LockFreeMap {
    buckets: Box<[LockFreeList]>,
    collector: Collector,
}

impl LockFreeMap {
    pub fn new(nbuckets: usize) -> Result<Self, MapError> {
        LockFreeMap::with_collector(nbuckets, Collector::new())
    }

    pub fn with_config(nbuckets: usize, config: EbrConfig) -> Result<Self, MapError> {
        let collector = Collector::with_config(config)?;
        LockFreeMap::with_collector(nbuckets, collector)
    }

    fn with_collector(nbuckets: usize, collector: Collector) -> Result<Self, MapError> {
        let nbuckets = check_buckets(nbuckets)?;
        Ok(LockFreeMap {
            buckets: (0..nbuckets).map(|_| LockFreeList::new()).collect(),
            collector,
        })
    }

    pub fn nbuckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    fn bucket(&self, key: Key) -> &LockFreeList {
        &self.buckets[bucket_index(hash_key(key), self.buckets.len())]
    }

    /// Runs `f` pinned on the calling thread's participant.
    pub fn pinned<R>(&self, f: impl FnOnce(&Guard<'_>) -> R) -> R {
        self.collector.with_local(|local| {
            let guard = local.pin().expect("map operations never nest pins");
            f(&guard)
        })
    }

    /// Advances and collects from the calling thread until everything retired
    /// so far is destroyed, provided no other thread is pinned.
    pub fn quiesce(&self) -> usize {
        self.collector.with_local(|local| local.flush())
    }

    pub fn ebr_stats(&self) -> EbrStats {
        self.collector.stats()
    }

    /// Physically linked data nodes across all buckets, including ones that
    /// are marked but not yet unlinked.
    pub fn physical_len(&mut self) -> usize {
        self.buckets.iter_mut().map(LockFreeList::physical_len).sum()
    }

    /// Nodes and boxed value cells still owned by the buckets. After a full
    /// drain, `ebr_stats().allocated == destroyed + live_allocations()`.
    pub fn live_allocations(&mut self) -> usize {
        self.buckets.iter_mut().map(LockFreeList::live_allocations).sum()
    }

    pub fn restarts(&self) -> u64 {
        self.buckets.iter().map(LockFreeList::restarts).sum()
    }

    #[cfg(any(test, feature = "test-hooks"))]
    pub fn bucket_keys(&self, b: usize) -> Vec<Key> {
        self.pinned(|g| self.buckets[b].live_keys(g))
    }

    #[cfg(any(test, feature = "test-hooks"))]
    pub fn bucket_list(&self, b: usize) -> &LockFreeList {
        &self.buckets[b]
    }
}

impl ConcurrentMap for LockFreeMap {
    fn insert(&self, key: Key, value: Value) -> MapReport {
        self.pinned(|g| self.bucket(key).insert(key, value, g))
    }

    fn get(&self, key: Key) -> MapReport {
        self.pinned(|g| self.bucket(key).get(key, g))
    }

    fn remove(&self, key: Key) -> MapReport {
        self.pinned(|g| self.bucket(key).remove(key, g))
    }

    fn name(&self) -> &'static str {
        "lockfree"
    }
}

/// Cloneable, `Send` handle to a shared [`LockFreeMap`]. Each thread using a
/// clone gets its own epoch participant on first use.
#[derive(Clone)]
pub struct MapHandle {
    map: Arc<LockFreeMap>,
}

impl MapHandle {
    pub fn new(nbuckets: usize) -> Result<Self, MapError> {
        Ok(MapHandle {
            map: Arc::new(LockFreeMap::new(nbuckets)?),
        })
    }

    pub fn with_config(nbuckets: usize, config: EbrConfig) -> Result<Self, MapError> {
        Ok(MapHandle {
            map: Arc::new(LockFreeMap::with_config(nbuckets, config)?),
        })
    }

    pub fn map(&self) -> &LockFreeMap {
        &self.map
    }

    pub fn insert(&self, key: Key, value: Value) -> MapReport {
        self.map.insert(key, value)
    }

    pub fn get(&self, key: Key) -> MapReport {
        self.map.get(key)
    }

    pub fn remove(&self, key: Key) -> MapReport {
        self.map.remove(key)
    }
}

impl std::ops::Deref for MapHandle {
    type Target = LockFreeMap;

    fn deref(&self) -> &LockFreeMap {
        &self.map
    }
}

impl ConcurrentMap for MapHandle {
    fn insert(&self, key: Key, value: Value) -> MapReport {
        self.map.insert(key, value)
    }

    fn get(&self, key: Key) -> MapReport {
        self.map.get(key)
    }

    fn remove(&self, key: Key) -> MapReport {
        self.map.remove(key)
    }

    fn name(&self) -> &'static str {
        "lockfree"
    }
}
