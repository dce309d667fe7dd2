//! Fine-grained tier: one exclusive lock per bucket, each guarding a chain
//! sorted strictly ascending by key.

use std::sync::{Mutex, MutexGuard};

use crate::api::{bucket_index, check_buckets, hash_key, ConcurrentMap, Key, MapError, MapReport, Value};

struct Entry {
    key: Key,
    value: Value,
    next: Link,
}

type Link = Option<Box<Entry>>;

#[derive(Default)]
struct Chain {
    head: Link,
}

impl Chain {
    /// Slot holding the first entry with key >= `key` (or the terminal `None`).
    fn seek(&mut self, key: Key) -> &mut Link {
        let mut cur = &mut self.head;
        while cur.as_ref().is_some_and(|e| e.key < key) {
            cur = &mut cur.as_mut().unwrap().next;
        }
        cur
    }

    fn find(&self, key: Key) -> (Option<Value>, usize) {
        let mut probes = 0;
        let mut cur = &self.head;
        while let Some(e) = cur {
            probes += 1;
            if e.key >= key {
                return ((e.key == key).then_some(e.value), probes);
            }
            cur = &e.next;
        }
        (None, probes)
    }

    #[cfg(any(test, feature = "test-hooks"))]
    fn keys(&self) -> Vec<Key> {
        let mut out = Vec::new();
        let mut cur = &self.head;
        while let Some(e) = cur {
            out.push(e.key);
            cur = &e.next;
        }
        out
    }

    fn is_sorted(&self) -> bool {
        let mut cur = &self.head;
        while let Some(e) = cur {
            match &e.next {
                Some(n) if n.key <= e.key => return false,
                next => cur = next,
            }
        }
        true
    }
}

impl Drop for Chain {
    // Iterative so long chains don't overflow the stack.
    fn drop(&mut self) {
        let mut cur = self.head.take();
        while let Some(mut e) = cur {
            cur = e.next.take();
        }
    }
}

#[repr(align(64))]
struct Bucket {
    chain: Mutex<Chain>,
}

#[cfg(debug_assertions)]
thread_local! {
    static HELD: std::cell::Cell<u32> = const { std::cell::Cell::new(0) };
}

/// Lock guard that, in debug builds, asserts no thread ever holds two bucket locks.
struct Locked<'a> {
    guard: MutexGuard<'a, Chain>,
}

impl<'a> Locked<'a> {
    fn new(bucket: &'a Bucket) -> Self {
        #[cfg(debug_assertions)]
        HELD.with(|h| {
            assert_eq!(h.get(), 0, "striped map: second bucket lock requested");
            h.set(1);
        });
        // Chains are only mutated through complete relinks, so a poisoned lock
        // still guards a well-formed chain.
        let guard = bucket.chain.lock().unwrap_or_else(|e| e.into_inner());
        Locked { guard }
    }
}

impl Drop for Locked<'_> {
    fn drop(&mut self) {
        debug_assert!(self.guard.is_sorted());
        #[cfg(debug_assertions)]
        HELD.with(|h| h.set(0));
    }
}

pub struct StripedMap {
    buckets: Box<[Bucket]>,
}

impl StripedMap {
    pub fn new(nbuckets: usize) -> Result<Self, MapError> {
        let nbuckets = check_buckets(nbuckets)?;
        Ok(StripedMap {
            buckets: (0..nbuckets)
                .map(|_| Bucket {
                    chain: Mutex::new(Chain::default()),
                })
                .collect(),
        })
    }

    pub fn nbuckets(&self) -> usize {
        self.buckets.len()
    }

    fn lock(&self, key: Key) -> Locked<'_> {
        Locked::new(&self.buckets[bucket_index(hash_key(key), self.buckets.len())])
    }

    /// Snapshot of bucket `b`'s chain, taken under its lock.
    #[cfg(any(test, feature = "test-hooks"))]
    pub fn bucket_keys(&self, b: usize) -> Vec<Key> {
        Locked::new(&self.buckets[b]).guard.keys()
    }

    /// Number of chain entries a `get(key)` examines before it can answer.
    #[cfg(any(test, feature = "test-hooks"))]
    pub fn probe_count(&self, key: Key) -> usize {
        self.lock(key).guard.find(key).1
    }

    /// Bucket locks the calling thread holds right now (debug builds only).
    #[cfg(all(debug_assertions, any(test, feature = "test-hooks")))]
    pub fn locks_held_by_current_thread() -> u32 {
        HELD.with(|h| h.get())
    }
}

impl ConcurrentMap for StripedMap {
    fn insert(&self, key: Key, value: Value) -> MapReport {
        let mut locked = self.lock(key);
        let slot = locked.guard.seek(key);
        match slot {
            Some(e) if e.key == key => MapReport::Replaced(std::mem::replace(&mut e.value, value)),
            _ => {
                let next = slot.take();
                *slot = Some(Box::new(Entry { key, value, next }));
                MapReport::Inserted
            }
        }
    }

    fn get(&self, key: Key) -> MapReport {
        match self.lock(key).guard.find(key).0 {
            Some(v) => MapReport::Found(v),
            None => MapReport::NotFound,
        }
    }

    fn remove(&self, key: Key) -> MapReport {
        let mut locked = self.lock(key);
        let slot = locked.guard.seek(key);
        match slot.take() {
            Some(mut e) if e.key == key => {
                *slot = e.next.take();
                MapReport::Removed(e.value)
            }
            other => {
                *slot = other;
                MapReport::NotFound
            }
        }
    }

    fn name(&self) -> &'static str {
        "striped"
    }
}
