//! Per-key linearizability checking.
//!
//! Map keys are independent, so a map history is linearizable iff each key's
//! sub-history is linearizable against an atomic register holding
//! `Option<Value>`: inserts write `Some(v)`, removes write `None`, gets read.
//! Each operation's report must also agree with the register state it was
//! linearized against.
//!
//! The search linearizes operations one at a time in the style of
//! Wing & Gong / Lowe: at each step any pending operation that no other
//! pending operation precedes in real time may go next. Visited
//! `(linearized set, register state)` pairs are memoized so each is
//! expanded at most once.

use std::collections::HashSet;

use super::history::{OpKind, OpRecord};
use super::HarnessError;
use crate::api::{MapReport, Value};

type State = Option<Value>;

/// Checker outcome for one key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub linearizable: bool,
    /// For a failed check: a sub-history that is itself not linearizable and
    /// from which no single operation can be dropped without it becoming so.
    pub counterexample: Option<Vec<OpRecord>>,
}

/// Applies `op` to `state`, or `None` when its report contradicts `state`.
pub fn apply(state: State, op: &OpRecord) -> Option<State> {
    match (op.kind, op.report, state) {
        (OpKind::Insert, MapReport::Inserted, None) => Some(op.arg),
        (OpKind::Insert, MapReport::Replaced(prior), Some(cur)) if prior == cur => Some(op.arg),
        (OpKind::Get, MapReport::Found(v), Some(cur)) if v == cur => Some(state),
        (OpKind::Get, MapReport::NotFound, None) => Some(None),
        (OpKind::Remove, MapReport::Removed(v), Some(cur)) if v == cur => Some(None),
        (OpKind::Remove, MapReport::NotFound, None) => Some(None),
        _ => None,
    }
}

struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn flip(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }
}

/// Exhaustive memoized search over `ops` (any order) from `initial`.
pub fn is_linearizable_from(ops: &[OpRecord], initial: State) -> bool {
    let mut ops = ops.to_vec();
    ops.sort_by_key(|o| (o.invoke_ns, o.respond_ns));
    let n = ops.len();
    if n == 0 {
        return true;
    }

    let mut done = Bits::new(n);
    let mut seen: HashSet<(Vec<u64>, State)> = HashSet::new();
    // Each frame: state before choosing, candidate ops, index of next candidate to try.
    let mut stack: Vec<(State, Vec<usize>, usize)> = Vec::new();
    let mut lo = 0; // every op below `lo` is linearized
    let mut linearized = 0;

    let candidates = |done: &Bits, lo: usize| -> Vec<usize> {
        let mut min_respond = u64::MAX;
        let mut out = Vec::new();
        for (i, op) in ops.iter().enumerate().skip(lo) {
            if op.invoke_ns > min_respond {
                break;
            }
            if !done.get(i) {
                out.push(i);
                min_respond = min_respond.min(op.respond_ns);
            }
        }
        // Anything invoked after the earliest pending response must wait for it.
        out.retain(|&i| ops[i].invoke_ns <= min_respond);
        out
    };

    stack.push((initial, candidates(&done, lo), 0));
    while let Some(frame) = stack.last_mut() {
        let (before, cands, next) = (frame.0, &frame.1, &mut frame.2);
        if *next >= cands.len() {
            stack.pop();
            if stack.is_empty() {
                return false;
            }
            // Undo the choice made by the parent frame.
            let parent = stack.last().unwrap();
            let undone = parent.1[parent.2 - 1];
            done.flip(undone);
            linearized -= 1;
            lo = lo.min(undone);
            continue;
        }
        let i = cands[*next];
        *next += 1;
        let Some(after) = apply(before, &ops[i]) else {
            continue;
        };
        done.flip(i);
        if !seen.insert((done.0.clone(), after)) {
            done.flip(i);
            continue;
        }
        linearized += 1;
        if linearized == n {
            return true;
        }
        while lo < n && done.get(lo) {
            lo += 1;
        }
        let c = candidates(&done, lo);
        stack.push((after, c, 0));
    }
    false
}

/// Checks one key's history, starting from an absent key.
///
/// Returns an error if the records do not all share one key.
pub fn check_key_history(history: &[OpRecord]) -> Result<Verdict, HarnessError> {
    if let Some(first) = history.first() {
        if let Some(other) = history.iter().find(|r| r.key != first.key) {
            return Err(HarnessError::MixedKeys(first.key, other.key));
        }
    }
    if is_linearizable_from(history, None) {
        return Ok(Verdict {
            linearizable: true,
            counterexample: None,
        });
    }
    Ok(Verdict {
        linearizable: false,
        counterexample: Some(shrink(history)),
    })
}

/// Finds a short failing prefix (by invocation time), then drops operations
/// one at a time while the remainder still fails, until none can be dropped.
fn shrink(history: &[OpRecord]) -> Vec<OpRecord> {
    let mut sorted = history.to_vec();
    sorted.sort_by_key(|o| (o.invoke_ns, o.respond_ns));
    let fails = |ops: &[OpRecord]| !is_linearizable_from(ops, None);

    let mut len = 1;
    while len < sorted.len() && !fails(&sorted[..len]) {
        len = (len * 2).min(sorted.len());
    }
    let mut cex = sorted[..len].to_vec();
    // Dropping one op can make an earlier one droppable, so repeat to a fixpoint.
    loop {
        let before = cex.len();
        let mut i = 0;
        while i < cex.len() {
            let mut trial = cex.clone();
            trial.remove(i);
            if fails(&trial) {
                cex = trial;
            } else {
                i += 1;
            }
        }
        if cex.len() == before {
            return cex;
        }
    }
}
