//! Baseline tier: a chained hashmap behind one map-wide reader-writer lock.

use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::api::{bucket_index, check_buckets, hash_key, ConcurrentMap, Key, MapError, MapReport, Value};

struct Table {
    buckets: Vec<Vec<(Key, Value)>>,
    len: usize,
}

impl Table {
    fn bucket(&self, key: Key) -> usize {
        bucket_index(hash_key(key), self.buckets.len())
    }
}

/// All reads take the shared side of the lock, all mutations the exclusive side.
pub struct CoarseMap {
    table: RwLock<Table>,
}

impl CoarseMap {
    pub fn new(nbuckets: usize) -> Result<Self, MapError> {
        let nbuckets = check_buckets(nbuckets)?;
        Ok(CoarseMap {
            table: RwLock::new(Table {
                buckets: (0..nbuckets).map(|_| Vec::new()).collect(),
                len: 0,
            }),
        })
    }

    // A panicking thread can't leave the table half-updated (every mutation is
    // a single push/assign/swap_remove), so poisoning is ignored.
    fn read(&self) -> RwLockReadGuard<'_, Table> {
        self.table.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Table> {
        self.table.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.read().len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nbuckets(&self) -> usize {
        self.read().buckets.len()
    }

    /// Keys stored in bucket `b`, in storage order.
    #[cfg(any(test, feature = "test-hooks"))]
    pub fn bucket_keys(&self, b: usize) -> Vec<Key> {
        self.read().buckets[b].iter().map(|&(k, _)| k).collect()
    }
}

impl ConcurrentMap for CoarseMap {
    fn insert(&self, key: Key, value: Value) -> MapReport {
        let mut table = self.write();
        let b = table.bucket(key);
        if let Some(slot) = table.buckets[b].iter_mut().find(|(k, _)| *k == key) {
            let prior = std::mem::replace(&mut slot.1, value);
            return MapReport::Replaced(prior);
        }
        table.buckets[b].push((key, value));
        table.len += 1;
        MapReport::Inserted
    }

    fn get(&self, key: Key) -> MapReport {
        let table = self.read();
        let b = table.bucket(key);
        match table.buckets[b].iter().find(|(k, _)| *k == key) {
            Some(&(_, v)) => MapReport::Found(v),
            None => MapReport::NotFound,
        }
    }

    fn remove(&self, key: Key) -> MapReport {
        let mut table = self.write();
        let b = table.bucket(key);
        match table.buckets[b].iter().position(|(k, _)| *k == key) {
            Some(i) => {
                let (_, v) = table.buckets[b].swap_remove(i);
                table.len -= 1;
                MapReport::Removed(v)
            }
            None => MapReport::NotFound,
        }
    }

    fn name(&self) -> &'static str {
        "coarse"
    }
}
