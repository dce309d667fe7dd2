//! The map contract shared by every tier, plus the hash and bucket placement
//! functions they all agree on.

use std::fmt;

use thiserror::Error;

/// Map key. The full 64-bit range is legal.
pub type Key = u64;

/// Map value. No value is reserved.
pub type Value = u64;

/// 64-bit FNV-1a digest of a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u64);

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a/64 over an arbitrary byte string. `fnv1a(&[])` is the offset basis.
pub fn fnv1a(bytes: &[u8]) -> Digest {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    Digest(hash)
}

/// Hashes the key's eight little-endian bytes with FNV-1a/64.
#[inline]
pub fn hash_key(key: Key) -> Digest {
    fnv1a(&key.to_le_bytes())
}

/// `digest mod nbuckets`. Callers validate `nbuckets` at construction.
#[inline]
pub fn bucket_index(digest: Digest, nbuckets: usize) -> usize {
    debug_assert!(nbuckets > 0);
    (digest.0 % nbuckets as u64) as usize
}

/// Outcome of a single map operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapReport {
    Inserted,
    Replaced(Value),
    Found(Value),
    NotFound,
    Removed(Value),
}

impl fmt::Display for MapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapReport::Inserted => f.write_str("Inserted"),
            MapReport::Replaced(v) => write!(f, "Replaced:{v}"),
            MapReport::Found(v) => write!(f, "Found:{v}"),
            MapReport::NotFound => f.write_str("NotFound"),
            MapReport::Removed(v) => write!(f, "Removed:{v}"),
        }
    }
}

impl std::str::FromStr for MapReport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (tag, payload) = match s.split_once(':') {
            Some((t, p)) => (t, Some(p)),
            None => (s, None),
        };
        let value = || -> Result<Value, String> {
            payload
                .ok_or_else(|| format!("report {s:?} is missing its value"))?
                .parse()
                .map_err(|e| format!("bad value in report {s:?}: {e}"))
        };
        match (tag, payload) {
            ("Inserted", None) => Ok(MapReport::Inserted),
            ("NotFound", None) => Ok(MapReport::NotFound),
            ("Replaced", _) => Ok(MapReport::Replaced(value()?)),
            ("Found", _) => Ok(MapReport::Found(value()?)),
            ("Removed", _) => Ok(MapReport::Removed(value()?)),
            _ => Err(format!("unknown report {s:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("bucket count must be at least 1")]
    ZeroBuckets,
    #[error(transparent)]
    Reclamation(#[from] crate::ebr::EbrError),
}

pub(crate) fn check_buckets(nbuckets: usize) -> Result<usize, MapError> {
    if nbuckets == 0 {
        Err(MapError::ZeroBuckets)
    } else {
        Ok(nbuckets)
    }
}

/// A key-value map safe for concurrent use from any number of threads.
///
/// `insert` has upsert semantics: it reports `Inserted` when the key was
/// absent and `Replaced(prior)` otherwise.
pub trait ConcurrentMap: Send + Sync {
    fn insert(&self, key: Key, value: Value) -> MapReport;
    fn get(&self, key: Key) -> MapReport;
    fn remove(&self, key: Key) -> MapReport;
    fn name(&self) -> &'static str;
}

impl<M: ConcurrentMap + ?Sized> ConcurrentMap for std::sync::Arc<M> {
    fn insert(&self, key: Key, value: Value) -> MapReport {
        (**self).insert(key, value)
    }
    fn get(&self, key: Key) -> MapReport {
        (**self).get(key)
    }
    fn remove(&self, key: Key) -> MapReport {
        (**self).remove(key)
    }
    fn name(&self) -> &'static str {
        (**self).name()
    }
}
