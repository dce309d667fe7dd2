//! Recorded operation histories and their line-delimited text format:
//!
//! ```text
//! thread,key,kind,arg,invoke_ns,respond_ns,report
//! ```
//!
//! `kind` is `insert`, `get` or `remove`; `arg` is the inserted value or `-`;
//! `report` is `Inserted`, `Replaced:V`, `Found:V`, `NotFound` or `Removed:V`.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use super::HarnessError;
use crate::api::{Key, MapReport, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Insert,
    Get,
    Remove,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Insert => "insert",
            OpKind::Get => "get",
            OpKind::Remove => "remove",
        })
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "insert" => Ok(OpKind::Insert),
            "get" => Ok(OpKind::Get),
            "remove" => Ok(OpKind::Remove),
            other => Err(format!("unknown operation kind {other:?}")),
        }
    }
}

/// One completed map operation with its real-time interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpRecord {
    pub thread: u32,
    pub key: Key,
    pub kind: OpKind,
    /// Value written by an insert.
    pub arg: Option<Value>,
    pub invoke_ns: u64,
    pub respond_ns: u64,
    pub report: MapReport,
}

impl fmt::Display for OpRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},", self.thread, self.key, self.kind)?;
        match self.arg {
            Some(v) => write!(f, "{v}")?,
            None => f.write_str("-")?,
        }
        write!(f, ",{},{},{}", self.invoke_ns, self.respond_ns, self.report)
    }
}

impl FromStr for OpRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        let [thread, key, kind, arg, invoke, respond, report] = fields[..] else {
            return Err(format!("expected 7 fields, found {}", fields.len()));
        };
        let num = |name: &str, s: &str| -> Result<u64, String> {
            s.parse().map_err(|e| format!("bad {name} {s:?}: {e}"))
        };
        let kind: OpKind = kind.parse()?;
        let arg = match arg {
            "-" | "" => None,
            s => Some(num("arg", s)?),
        };
        if kind == OpKind::Insert && arg.is_none() {
            return Err("insert record without an argument".into());
        }
        let rec = OpRecord {
            thread: thread
                .parse()
                .map_err(|e| format!("bad thread {thread:?}: {e}"))?,
            key: num("key", key)?,
            kind,
            arg,
            invoke_ns: num("invoke_ns", invoke)?,
            respond_ns: num("respond_ns", respond)?,
            report: report.parse()?,
        };
        if rec.respond_ns <= rec.invoke_ns {
            return Err(format!(
                "response {} does not follow invocation {}",
                rec.respond_ns, rec.invoke_ns
            ));
        }
        Ok(rec)
    }
}

pub fn write_history<'a>(
    out: &mut impl Write,
    records: impl IntoIterator<Item = &'a OpRecord>,
) -> std::io::Result<()> {
    writeln!(out, "# thread,key,kind,arg,invoke_ns,respond_ns,report")?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

pub fn save_history<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a OpRecord>,
) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    write_history(&mut out, records).map_err(io)?;
    out.flush().map_err(io)
}

pub fn parse_history(input: impl BufRead) -> Result<Vec<OpRecord>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| HarnessError::Io {
            path: "<history>".into(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(trimmed.parse().map_err(|message| HarnessError::Parse {
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

pub fn load_history(path: &Path) -> Result<Vec<OpRecord>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_history(std::io::BufReader::new(file))
}

/// Splits a mixed history into per-key histories.
pub fn group_by_key(records: impl IntoIterator<Item = OpRecord>) -> BTreeMap<Key, Vec<OpRecord>> {
    let mut by_key: BTreeMap<Key, Vec<OpRecord>> = BTreeMap::new();
    for r in records {
        by_key.entry(r.key).or_default().push(r);
    }
    by_key
}
