//! Benchmark runner, stress generator, sequential oracle, fault-injection
//! shims and the per-key linearizability checker.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::api::{ConcurrentMap, Key, MapError};
use crate::coarse::CoarseMap;
use crate::lockfree::MapHandle;
use crate::striped::StripedMap;

pub mod bench;
pub mod checker;
pub mod faults;
pub mod history;
pub mod oracle;
pub mod stress;
pub mod workload;

pub use bench::{run_bench, run_bench_on, BenchConfig, BenchReport, BenchRow, CSV_HEADER};
pub use checker::{check_key_history, Verdict};
pub use history::{OpKind, OpRecord};
pub use oracle::{oracle_map, OracleMap};
pub use stress::{run_stress, run_stress_on, StressOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown implementation {0:?} (expected coarse, striped or lockfree)")]
    UnknownImpl(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("history line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("history mixes keys {0} and {1}")]
    MixedKeys(Key, Key),
}

/// The three map tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Impl {
    Coarse,
    Striped,
    Lockfree,
}

impl Impl {
    pub const ALL: [Impl; 3] = [Impl::Coarse, Impl::Striped, Impl::Lockfree];

    pub fn as_str(self) -> &'static str {
        match self {
            Impl::Coarse => "coarse",
            Impl::Striped => "striped",
            Impl::Lockfree => "lockfree",
        }
    }
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Impl {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Impl::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| HarnessError::UnknownImpl(s.to_owned()))
    }
}

/// Builds an empty map of the given tier.
pub fn build_map(imp: Impl, nbuckets: usize) -> Result<Arc<dyn ConcurrentMap>, MapError> {
    Ok(match imp {
        Impl::Coarse => Arc::new(CoarseMap::new(nbuckets)?),
        Impl::Striped => Arc::new(StripedMap::new(nbuckets)?),
        Impl::Lockfree => Arc::new(MapHandle::new(nbuckets)?),
    })
}
