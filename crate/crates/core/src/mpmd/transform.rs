//! SPMD to MPMD: loop fission at barriers, thread-loop wrapping, warp/lane
//! nesting and variable expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Exchange, ExpandedVar, LaneStep, LoopShape, MpmdKernel, Section, UniformLoop};
use crate::ir::{self, Expr, ExprKind, Stmt, StmtKind, Storage, Uniformity, VarId, VarRef};
use crate::lang::ast::{KernelProgram, Span};
use crate::lang::{lower::lower, Diagnostic};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("kernel has {} diagnostic(s); validate it first", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error("barrier at {0} is not in a block-uniform context")]
    BarrierInDivergentContext(Span),
    #[error("warp intrinsic at {0} is not in a warp-uniform context")]
    WarpInDivergentContext(Span),
    #[error("warp intrinsic at {0} used without warp mode")]
    WarpWithoutWarpMode(Span),
    #[error("warp size must be at least 1")]
    BadWarpSize,
}

pub fn transform(k: &KernelProgram, warp_mode: bool, warp_size: u32) -> Result<MpmdKernel, TransformError> {
    if warp_size == 0 {
        return Err(TransformError::BadWarpSize);
    }
    let (kernel, diags) = lower(k, warp_mode);
    if !diags.is_empty() {
        return Err(TransformError::Invalid(diags));
    }
    let uniformity = Uniformity::analyze(&kernel);
    let shape = if warp_mode { LoopShape::WarpLaneLoops { warp_size } } else { LoopShape::SingleThreadLoop };
    let mut fission = Fission { uniformity: &uniformity, shape, warp_mode, exchanges: Vec::new() };
    let mut sections = fission.block_level(kernel.body.clone())?;
    let exchanges = std::mem::take(&mut fission.exchanges);

    let expanded = expand_variables(&mut sections, &kernel.vars);
    let has_atomics = kernel.body.iter().any(Stmt::contains_atomic);
    Ok(MpmdKernel {
        name: kernel.name.clone(),
        params: kernel.params.clone(),
        arrays: kernel.arrays.clone(),
        vars: kernel.vars.clone(),
        sections,
        expanded_vars: expanded,
        exchanges,
        shared_layout: None,
        warp_mode,
        warp_size,
        has_atomics,
        instruction_estimate: ir::instruction_estimate(&kernel.body),
    })
}

struct Fission<'a> {
    uniformity: &'a Uniformity,
    shape: LoopShape,
    warp_mode: bool,
    exchanges: Vec<ir::WarpOp>,
}

impl Fission<'_> {
    fn block_level(&mut self, stmts: Vec<Stmt>) -> Result<Vec<Section>, TransformError> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for s in stmts {
            match s.kind {
                StmtKind::Barrier => {
                    out.push(self.thread_loop(std::mem::take(&mut cur), true)?);
                }
                StmtKind::For { .. } if s.contains_barrier() => {
                    if !self.uniformity.is_uniform_for(&s) {
                        return Err(TransformError::BarrierInDivergentContext(s.span));
                    }
                    if !cur.is_empty() {
                        out.push(self.thread_loop(std::mem::take(&mut cur), false)?);
                    }
                    let span = s.span;
                    let StmtKind::For { counter, lo, hi, step, body } = s.kind else { unreachable!() };
                    let body = self.block_level(body)?;
                    out.push(Section::Uniform(UniformLoop { counter, lo, hi, step, body, span }));
                }
                _ => {
                    if let Some(span) = find_barrier(&s) {
                        return Err(TransformError::BarrierInDivergentContext(span));
                    }
                    cur.push(s);
                }
            }
        }
        if !cur.is_empty() || !matches!(out.last(), Some(Section::Uniform(_))) {
            out.push(self.thread_loop(cur, false)?);
        }
        Ok(out)
    }

    fn thread_loop(&mut self, stmts: Vec<Stmt>, barrier_after: bool) -> Result<Section, TransformError> {
        let steps = if self.warp_mode {
            self.lane_level(stmts)?
        } else {
            if let Some(span) = stmts.iter().find(|s| s.contains_warp()).map(|s| s.span) {
                return Err(TransformError::WarpWithoutWarpMode(span));
            }
            vec![LaneStep::Code(stmts)]
        };
        Ok(Section::ThreadLoop { shape: self.shape, steps, barrier_after })
    }

    /// Splits the lane loop at every statement that exchanges values between
    /// lanes.
    fn lane_level(&mut self, stmts: Vec<Stmt>) -> Result<Vec<LaneStep>, TransformError> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for mut s in stmts {
            let header_warp = matches!(&s.kind, StmtKind::For { .. }) && s.own_exprs().iter().any(|e| e.contains_warp());
            if header_warp {
                return Err(TransformError::WarpInDivergentContext(s.span));
            }
            let body_warp = s.bodies().iter().any(|b| b.iter().any(Stmt::contains_warp));
            if let (StmtKind::For { .. }, true) = (&s.kind, body_warp) {
                if !self.uniformity.is_uniform_for(&s) {
                    return Err(TransformError::WarpInDivergentContext(s.span));
                }
                if !cur.is_empty() {
                    out.push(LaneStep::Code(std::mem::take(&mut cur)));
                }
                let span = s.span;
                let StmtKind::For { counter, lo, hi, step, body } = s.kind else { unreachable!() };
                let body = self.lane_level(body)?;
                out.push(LaneStep::Uniform(UniformLoop { counter, lo, hi, step, body, span }));
                continue;
            }
            if body_warp {
                return Err(TransformError::WarpInDivergentContext(s.span));
            }
            if s.own_exprs().iter().any(|e| e.contains_warp()) {
                if !cur.is_empty() {
                    out.push(LaneStep::Code(std::mem::take(&mut cur)));
                }
                let span = s.span;
                let mut hoisted = Vec::new();
                for e in s.own_exprs_mut() {
                    e.walk_mut(&mut |node| {
                        if let ExprKind::Warp { op, args } = &mut node.kind {
                            let id = self.exchanges.len() as u32;
                            self.exchanges.push(*op);
                            let mut args = std::mem::take(args).into_iter();
                            let value = args.next().expect("warp intrinsic has a value operand");
                            hoisted.push(Exchange { id, op: *op, value, delta: args.next(), span });
                            node.kind = ExprKind::LaneRead { exchange: id };
                        }
                    });
                }
                out.extend(hoisted.into_iter().map(LaneStep::Exchange));
            }
            cur.push(s);
        }
        if !cur.is_empty() || out.is_empty() {
            out.push(LaneStep::Code(cur));
        }
        Ok(out)
    }
}

fn find_barrier(s: &Stmt) -> Option<Span> {
    let mut found = None;
    s.walk(&mut |st| {
        if found.is_none() && matches!(st.kind, StmtKind::Barrier) {
            found = Some(st.span);
        }
    });
    found
}

/// Region bookkeeping for variable expansion: a local referenced from more
/// than one region (thread-loop piece, exchange, or uniform loop header)
/// is live across a fission point and gets one slot per thread.
#[derive(Default)]
struct Regions {
    next: usize,
    refs: BTreeMap<VarId, BTreeSet<usize>>,
    uniform_counters: BTreeSet<VarId>,
}

impl Regions {
    fn fresh(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn expr(&mut self, e: &Expr, region: usize) {
        e.walk(&mut |n| {
            if let ExprKind::Var(v) = &n.kind {
                self.refs.entry(v.id).or_default().insert(region);
            }
        });
    }

    fn stmts(&mut self, b: &[Stmt], region: usize) {
        for s in b {
            s.walk(&mut |st| match &st.kind {
                StmtKind::Assign { var, .. } => {
                    self.refs.entry(var.id).or_default().insert(region);
                }
                StmtKind::For { counter, .. } => {
                    self.refs.entry(counter.id).or_default().insert(region);
                }
                _ => {}
            });
            s.walk_exprs(&mut |e| {
                if let ExprKind::Var(v) = &e.kind {
                    self.refs.entry(v.id).or_default().insert(region);
                }
            });
        }
    }

    fn header<T>(&mut self, u: &UniformLoop<T>) {
        self.uniform_counters.insert(u.counter.id);
        let r = self.fresh();
        for e in [&u.lo, &u.hi, &u.step] {
            self.expr(e, r);
        }
    }

    fn steps(&mut self, steps: &[LaneStep]) {
        for st in steps {
            match st {
                LaneStep::Code(b) => {
                    let r = self.fresh();
                    self.stmts(b, r);
                }
                LaneStep::Exchange(x) => {
                    let r = self.fresh();
                    self.expr(&x.value, r);
                    if let Some(d) = &x.delta {
                        self.expr(d, r);
                    }
                }
                LaneStep::Uniform(u) => {
                    self.header(u);
                    self.steps(&u.body);
                }
            }
        }
    }

    fn sections(&mut self, ss: &[Section]) {
        for s in ss {
            match s {
                Section::ThreadLoop { steps, .. } => self.steps(steps),
                Section::Uniform(u) => {
                    self.header(u);
                    self.sections(&u.body);
                }
            }
        }
    }
}

fn expand_variables(sections: &mut [Section], vars: &[ir::VarInfo]) -> Vec<ExpandedVar> {
    let mut regions = Regions::default();
    regions.sections(sections);

    let mut storage: HashMap<VarId, Storage> = HashMap::new();
    let mut expanded = Vec::new();
    for (&var, rs) in &regions.refs {
        if regions.uniform_counters.contains(&var) {
            storage.insert(var, Storage::Uniform);
        } else if rs.len() > 1 {
            storage.insert(var, Storage::Expanded(expanded.len() as u32));
            let info = &vars[var as usize];
            expanded.push(ExpandedVar { var, name: info.name.clone(), ty: info.ty });
        }
    }
    for &c in &regions.uniform_counters {
        storage.insert(c, Storage::Uniform);
    }

    let fix = |v: &mut VarRef| {
        if let Some(s) = storage.get(&v.id) {
            v.storage = *s;
        }
    };
    rewrite_sections(sections, &fix);
    expanded
}

fn rewrite_expr(e: &mut Expr, fix: &dyn Fn(&mut VarRef)) {
    e.walk_mut(&mut |n| {
        if let ExprKind::Var(v) = &mut n.kind {
            fix(v);
        }
    });
}

fn rewrite_stmts(b: &mut [Stmt], fix: &dyn Fn(&mut VarRef)) {
    for s in b {
        s.walk_mut(&mut |st| match &mut st.kind {
            StmtKind::Assign { var, .. } => fix(var),
            StmtKind::For { counter, .. } => fix(counter),
            _ => {}
        });
        s.walk_exprs_mut(&mut |e| {
            if let ExprKind::Var(v) = &mut e.kind {
                fix(v);
            }
        });
    }
}

fn rewrite_header<T>(u: &mut UniformLoop<T>, fix: &dyn Fn(&mut VarRef)) {
    fix(&mut u.counter);
    rewrite_expr(&mut u.lo, fix);
    rewrite_expr(&mut u.hi, fix);
    rewrite_expr(&mut u.step, fix);
}

fn rewrite_steps(steps: &mut [LaneStep], fix: &dyn Fn(&mut VarRef)) {
    for st in steps {
        match st {
            LaneStep::Code(b) => rewrite_stmts(b, fix),
            LaneStep::Exchange(x) => {
                rewrite_expr(&mut x.value, fix);
                if let Some(d) = &mut x.delta {
                    rewrite_expr(d, fix);
                }
            }
            LaneStep::Uniform(u) => {
                rewrite_header(u, fix);
                rewrite_steps(&mut u.body, fix);
            }
        }
    }
}

fn rewrite_sections(ss: &mut [Section], fix: &dyn Fn(&mut VarRef)) {
    for s in ss {
        match s {
            Section::ThreadLoop { steps, .. } => rewrite_steps(steps, fix),
            Section::Uniform(u) => {
                rewrite_header(u, fix);
                rewrite_sections(&mut u.body, fix);
            }
        }
    }
}
