//! Kernel read/write sets and implicit barrier insertion.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{HostArg, HostOp, HostProgram, HostStmt, Launch};
use crate::lang::ast::{Block, ExprKind, LValue, StmtKind};
use crate::lang::KernelProgram;

/// Parameter indices a kernel may load from and store to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct AccessSummary {
    pub reads: BTreeSet<usize>,
    pub writes: BTreeSet<usize>,
}

/// Buffer names touched by one op.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct BufferSets {
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
}

impl BufferSets {
    /// True when `later` must not run before `self` has finished:
    /// read-after-write, write-after-read or write-after-write.
    pub fn conflicts_with(&self, later: &BufferSets) -> bool {
        self.writes.iter().any(|b| later.reads.contains(b) || later.writes.contains(b))
            || self.reads.iter().any(|b| later.writes.contains(b))
    }

    fn absorb(&mut self, other: &BufferSets) {
        self.reads.extend(other.reads.iter().cloned());
        self.writes.extend(other.writes.iter().cloned());
    }
}

pub fn summarize_access(k: &KernelProgram) -> AccessSummary {
    let index_of: HashMap<&str, usize> = k
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.ptype.is_global())
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    let mut out = AccessSummary::default();
    fn visit(block: &Block, index_of: &HashMap<&str, usize>, out: &mut AccessSummary) {
        for s in &block.stmts {
            for e in s.own_exprs() {
                e.walk(&mut |e| {
                    if let ExprKind::Index { array, .. } = &e.kind {
                        if let Some(&i) = index_of.get(array.as_str()) {
                            out.reads.insert(i);
                        }
                    }
                });
            }
            let stored = match &s.kind {
                StmtKind::Assign { target: LValue::Index { array, .. }, .. } => Some((array, false)),
                StmtKind::Atomic { target: LValue::Index { array, .. }, .. } => Some((array, true)),
                _ => None,
            };
            if let Some((array, rmw)) = stored {
                if let Some(&i) = index_of.get(array.as_str()) {
                    out.writes.insert(i);
                    if rmw {
                        out.reads.insert(i);
                    }
                }
            }
            match &s.kind {
                StmtKind::If { then_block, else_block, .. } => {
                    visit(then_block, index_of, out);
                    if let Some(b) = else_block {
                        visit(b, index_of, out);
                    }
                }
                StmtKind::For { body, .. } => visit(body, index_of, out),
                _ => {}
            }
        }
    }
    visit(&k.body, &index_of, &mut out);
    out
}

/// Buffers a launch reads and writes. Parameters are summarized one by one
/// and unioned by buffer, so a buffer passed twice collects both roles.
/// Without a summary every buffer argument counts as read and written.
pub fn launch_buffers(l: &Launch, summary: Option<&AccessSummary>) -> BufferSets {
    let mut out = BufferSets::default();
    for (i, a) in l.args.iter().enumerate() {
        let HostArg::Buffer(name) = a else { continue };
        let (r, w) = match summary {
            Some(s) => (s.reads.contains(&i), s.writes.contains(&i)),
            None => (true, true),
        };
        if r {
            out.reads.insert(name.clone());
        }
        if w {
            out.writes.insert(name.clone());
        }
    }
    out
}

/// Host-side access of a non-launch op. Uploads and frees count as writes,
/// downloads as reads.
pub(crate) fn host_access(op: &HostOp) -> Option<BufferSets> {
    let mut out = BufferSets::default();
    match op {
        HostOp::Upload { buf, .. } | HostOp::Free { buf } => {
            out.writes.insert(buf.clone());
        }
        HostOp::Download { buf, .. } => {
            out.reads.insert(buf.clone());
        }
        _ => return None,
    }
    Some(out)
}

pub(crate) fn op_access(op: &HostOp, summaries: &HashMap<String, AccessSummary>) -> Option<BufferSets> {
    match op {
        HostOp::Launch(l) => Some(launch_buffers(l, summaries.get(&l.kernel))),
        _ => host_access(op),
    }
}

/// Inserts a sync before every op that conflicts with a launch not yet
/// covered by a sync. Running it on its own output adds nothing.
pub fn insert_barriers(p: &HostProgram, summaries: &HashMap<String, AccessSummary>) -> HostProgram {
    let mut pending = BufferSets::default();
    let mut ops = Vec::with_capacity(p.ops.len());
    for s in &p.ops {
        if s.op.is_sync() {
            pending = BufferSets::default();
            ops.push(s.clone());
            continue;
        }
        if let Some(acc) = op_access(&s.op, summaries) {
            if pending.conflicts_with(&acc) {
                ops.push(HostStmt { op: HostOp::Sync { implicit: true }, line: 0 });
                pending = BufferSets::default();
            }
            if matches!(s.op, HostOp::Launch(_)) {
                pending.absorb(&acc);
            }
        }
        ops.push(s.clone());
    }
    HostProgram { ops }
}
