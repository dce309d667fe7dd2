//! Sequential reference map with the same report semantics as every tier.

use std::collections::HashMap;

use crate::api::{Key, MapReport, Value};

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct OracleMap {
    entries: HashMap<Key, Value>,
}

/// A fresh, empty reference map.
pub fn oracle_map() -> OracleMap {
    OracleMap::default()
}

impl OracleMap {
    pub fn insert(&mut self, key: Key, value: Value) -> MapReport {
        match self.entries.insert(key, value) {
            Some(prior) => MapReport::Replaced(prior),
            None => MapReport::Inserted,
        }
    }

    pub fn get(&self, key: Key) -> MapReport {
        match self.entries.get(&key) {
            Some(&v) => MapReport::Found(v),
            None => MapReport::NotFound,
        }
    }

    pub fn remove(&mut self, key: Key) -> MapReport {
        match self.entries.remove(&key) {
            Some(v) => MapReport::Removed(v),
            None => MapReport::NotFound,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contents(&self) -> std::collections::BTreeMap<Key, Value> {
        self.entries.iter().map(|(&k, &v)| (k, v)).collect()
    }
}
