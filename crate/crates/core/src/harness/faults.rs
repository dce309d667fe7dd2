//! Deliberately broken maps for checking that the linearizability checker
//! catches real bugs. Each wraps the oracle in a mutex and misbehaves on a
//! fixed schedule.

use std::collections::HashMap;
use std::sync::Mutex;

use super::oracle::OracleMap;
use crate::api::{ConcurrentMap, Key, MapReport, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Every `n`-th insert reports success but stores nothing.
    LostWrite { every: u64 },
    /// Every `n`-th get of a key that has been overwritten returns the
    /// previous value.
    StaleRead { every: u64 },
    /// A remove of an absent key reports the value removed last time, once
    /// per removal.
    DoubleRemove,
}

#[derive(Default)]
struct State {
    map: OracleMap,
    calls: u64,
    previous: HashMap<Key, Value>,
    last_removed: HashMap<Key, Value>,
}

pub struct FaultyMap {
    fault: Fault,
    state: Mutex<State>,
}

impl FaultyMap {
    pub fn new(fault: Fault) -> Self {
        FaultyMap {
            fault,
            state: Mutex::new(State::default()),
        }
    }

    fn state(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ConcurrentMap for FaultyMap {
    fn insert(&self, key: Key, value: Value) -> MapReport {
        let mut s = self.state();
        s.calls += 1;
        if let Fault::LostWrite { every } = self.fault {
            if s.calls.is_multiple_of(every) {
                return match s.map.get(key) {
                    MapReport::Found(v) => MapReport::Replaced(v),
                    _ => MapReport::Inserted,
                };
            }
        }
        let report = s.map.insert(key, value);
        if let MapReport::Replaced(prior) = report {
            s.previous.insert(key, prior);
        }
        report
    }

    fn get(&self, key: Key) -> MapReport {
        let mut s = self.state();
        s.calls += 1;
        if let Fault::StaleRead { every } = self.fault {
            if s.calls.is_multiple_of(every) {
                if let (MapReport::Found(cur), Some(&old)) = (s.map.get(key), s.previous.get(&key)) {
                    if cur != old {
                        return MapReport::Found(old);
                    }
                }
            }
        }
        s.map.get(key)
    }

    fn remove(&self, key: Key) -> MapReport {
        let mut s = self.state();
        s.calls += 1;
        let report = s.map.remove(key);
        if self.fault == Fault::DoubleRemove {
            match report {
                MapReport::Removed(v) => {
                    s.last_removed.insert(key, v);
                }
                MapReport::NotFound => {
                    if let Some(v) = s.last_removed.remove(&key) {
                        return MapReport::Removed(v);
                    }
                }
                _ => {}
            }
        }
        report
    }

    fn name(&self) -> &'static str {
        "faulty"
    }
}
