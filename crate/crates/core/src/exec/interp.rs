//! Interpreter for block-fused kernels. One call runs one whole block.

use std::sync::Arc;

use super::ops;
use super::{check_index, elem_count, ArgValue, Buffer, MemEvent, Trap, TrapKind};
use crate::ir::{ArrayKind, ArrayRef, Expr, ExprKind, SharedSlot, Stmt, StmtKind, Storage, VarRef, WarpOp};
use crate::lang::ast::{BinOp, Builtin, BuiltinVar, Span};
use crate::mpmd::{Exchange, LaneStep, LoopShape, MpmdKernel, Section, UniformLoop};
use crate::types::{Dim3, Value};

/// Per-block execution context: the implicit variables plus optional
/// instrumentation.
pub struct BlockContext<'a> {
    pub block_index: Dim3,
    pub block_dim: Dim3,
    pub grid_dim: Dim3,
    pub args: &'a [ArgValue],
    pub dynamic_shared_bytes: usize,
    /// Receives every global-memory access in issue order.
    pub trace: Option<&'a mut Vec<MemEvent>>,
    /// Incremented once per executed barrier.
    pub barrier_counter: Option<&'a mut u64>,
}

impl<'a> BlockContext<'a> {
    pub fn new(block_index: Dim3, block_dim: Dim3, grid_dim: Dim3, args: &'a [ArgValue], dynamic_shared_bytes: usize) -> Self {
        BlockContext { block_index, block_dim, grid_dim, args, dynamic_shared_bytes, trace: None, barrier_counter: None }
    }
}

enum Arr<'m> {
    Global(&'m Arc<Buffer>),
    Shared(usize),
}

struct Machine<'k, 'c, 'x> {
    k: &'k MpmdKernel,
    ctx: &'x mut BlockContext<'c>,
    block_size: usize,
    shared: Vec<Vec<Value>>,
    shared_names: Vec<String>,
    expanded: Vec<Vec<Value>>,
    uniform: Vec<Value>,
    private: Vec<Value>,
    lane_results: Vec<Vec<Value>>,
    tid: usize,
    thread_idx: Dim3,
    lane: usize,
    section: usize,
    span: Span,
}

/// Runs every section of `k` for one block. Global effects land directly
/// in the argument buffers.
pub fn run_block(k: &MpmdKernel, ctx: &mut BlockContext<'_>) -> Result<(), Trap> {
    let block_size = ctx.block_dim.count();
    let mut shared = Vec::new();
    let mut shared_names = Vec::new();
    let mut dynamic_slot = None;
    for a in &k.arrays {
        match a.kind {
            ArrayKind::StaticShared { len, .. } => {
                shared.push(vec![a.ty.zero(); len as usize]);
                shared_names.push(a.name.clone());
            }
            ArrayKind::DynamicShared => dynamic_slot = Some(a),
            ArrayKind::Param(_) => {}
        }
    }
    if let Some(a) = dynamic_slot {
        shared.push(vec![a.ty.zero(); elem_count(ctx.dynamic_shared_bytes, a.ty)]);
        shared_names.push(a.name.clone());
    }
    let mut m = Machine {
        k,
        block_size,
        shared,
        shared_names,
        expanded: k.expanded_vars.iter().map(|v| vec![v.ty.zero(); block_size]).collect(),
        uniform: k.vars.iter().map(|v| v.ty.zero()).collect(),
        private: k.vars.iter().map(|v| v.ty.zero()).collect(),
        lane_results: vec![Vec::new(); k.exchanges.len()],
        ctx,
        tid: 0,
        thread_idx: Dim3 { x: 0, y: 0, z: 0 },
        lane: 0,
        section: 0,
        span: Span::default(),
    };
    let mut section = 0;
    m.sections(&k.sections, &mut section)
}

impl Machine<'_, '_, '_> {
    fn trap(&self, kind: TrapKind) -> Trap {
        Trap {
            kind,
            kernel: self.k.name.clone(),
            block: None,
            section: self.section,
            tid: self.tid,
            span: self.span,
        }
    }

    fn set_thread(&mut self, tid: usize, lane: usize) {
        self.tid = tid;
        self.lane = lane;
        self.thread_idx = self.ctx.block_dim.delinearize(tid);
    }

    fn sections(&mut self, ss: &[Section], counter: &mut usize) -> Result<(), Trap> {
        for s in ss {
            match s {
                Section::ThreadLoop { shape, steps, barrier_after } => {
                    self.section = *counter;
                    *counter += 1;
                    match shape {
                        LoopShape::SingleThreadLoop => {
                            for tid in 0..self.block_size {
                                self.set_thread(tid, 0);
                                for st in steps {
                                    match st {
                                        LaneStep::Code(b) => self.block(b)?,
                                        _ => return Err(self.trap(TrapKind::TypeFault("lane step outside warp mode".into()))),
                                    }
                                }
                            }
                        }
                        LoopShape::WarpLaneLoops { warp_size } => {
                            let ws = *warp_size as usize;
                            for warp in 0..self.block_size.div_ceil(ws) {
                                self.lane_steps(steps, warp, ws)?;
                            }
                        }
                    }
                    if *barrier_after {
                        if let Some(c) = self.ctx.barrier_counter.as_deref_mut() {
                            *c += 1;
                        }
                    }
                }
                Section::Uniform(u) => {
                    let first = *counter;
                    let all = 0..self.block_size;
                    self.uniform_loop(u, all, |m, body| {
                        *counter = first;
                        m.sections(body, counter)
                    })?;
                    if *counter == first {
                        *counter += count_loops(&u.body);
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs a loop hoisted out of the thread loops. Bounds are evaluated for
    /// every thread in `tids` and must agree.
    fn uniform_loop<T>(
        &mut self,
        u: &UniformLoop<T>,
        tids: std::ops::Range<usize>,
        mut body: impl FnMut(&mut Self, &[T]) -> Result<(), Trap>,
    ) -> Result<(), Trap> {
        self.span = u.span;
        let mut c = self.agree(&u.lo, tids.clone())?;
        loop {
            self.uniform[u.counter.id as usize] = c;
            self.span = u.span;
            let hi = self.agree(&u.hi, tids.clone())?;
            if !ops::binary(BinOp::Lt, c, hi).map_err(|e| self.trap(e))?.is_truthy() {
                return Ok(());
            }
            body(self, &u.body)?;
            self.span = u.span;
            let step = self.agree(&u.step, tids.clone())?;
            c = ops::binary(BinOp::Add, self.uniform[u.counter.id as usize], step).map_err(|e| self.trap(e))?;
        }
    }

    fn agree(&mut self, e: &Expr, tids: std::ops::Range<usize>) -> Result<Value, Trap> {
        let ws = match self.k.warp_mode {
            true => self.k.warp_size as usize,
            false => usize::MAX,
        };
        let mut first: Option<Value> = None;
        for tid in tids {
            self.set_thread(tid, tid % ws);
            let v = self.eval(e).map_err(|k| self.trap(k))?;
            match first {
                None => first = Some(v),
                Some(f) if !f.bit_eq(v) => return Err(self.trap(TrapKind::NonUniformTrip)),
                _ => {}
            }
        }
        Ok(first.expect("block has at least one thread"))
    }

    fn lane_steps(&mut self, steps: &[LaneStep], warp: usize, ws: usize) -> Result<(), Trap> {
        let lo = warp * ws;
        let hi = (lo + ws).min(self.block_size);
        for st in steps {
            match st {
                LaneStep::Code(b) => {
                    for tid in lo..hi {
                        self.set_thread(tid, tid - lo);
                        self.block(b)?;
                    }
                }
                LaneStep::Exchange(x) => self.exchange(x, lo, hi, ws)?,
                LaneStep::Uniform(u) => self.uniform_loop(u, lo..hi, |m, body| m.lane_steps(body, warp, ws))?,
            }
        }
        Ok(())
    }

    /// First pass publishes every lane's operand, second pass combines.
    fn exchange(&mut self, x: &Exchange, lo: usize, hi: usize, ws: usize) -> Result<(), Trap> {
        self.span = x.span;
        let mut vals = Vec::with_capacity(hi - lo);
        let mut deltas = Vec::with_capacity(hi - lo);
        for tid in lo..hi {
            self.set_thread(tid, tid - lo);
            vals.push(self.eval(&x.value).map_err(|k| self.trap(k))?);
            if let Some(d) = &x.delta {
                deltas.push(self.eval(d).map_err(|k| self.trap(k))?.as_i64());
            }
        }
        let n = vals.len();
        let out: Vec<Value> = match x.op {
            WarpOp::ShflDown => (0..n)
                .map(|lane| {
                    let src = lane as i64 + deltas[lane];
                    if src < 0 || src >= ws as i64 || src as usize >= n {
                        vals[lane]
                    } else {
                        vals[src as usize]
                    }
                })
                .collect(),
            WarpOp::VoteAny => vec![Value::I32(vals.iter().any(|v| v.is_truthy()) as i32); n],
            WarpOp::VoteAll => vec![Value::I32(vals.iter().all(|v| v.is_truthy()) as i32); n],
        };
        self.lane_results[x.id as usize] = out;
        Ok(())
    }

    fn block(&mut self, b: &[Stmt]) -> Result<(), Trap> {
        for s in b {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), Trap> {
        self.span = s.span;
        let r = self.stmt_inner(s);
        match r {
            Ok(()) => Ok(()),
            Err(Err(kind)) => {
                self.span = s.span;
                Err(self.trap(kind))
            }
            Err(Ok(t)) => Err(t),
        }
    }

    fn stmt_inner(&mut self, s: &Stmt) -> Result<(), Result<Trap, TrapKind>> {
        match &s.kind {
            StmtKind::Assign { var, value } => {
                let v = self.eval(value).map_err(Err)?;
                self.write_var(*var, v);
            }
            StmtKind::Store { array, index, value } => {
                let i = self.eval(index).map_err(Err)?;
                let v = self.eval(value).map_err(Err)?;
                self.store(*array, i, v).map_err(Err)?;
            }
            StmtKind::If { cond, then_body, else_body } => {
                let c = self.eval(cond).map_err(Err)?;
                let body = if c.is_truthy() { then_body } else { else_body };
                self.block(body).map_err(Ok)?;
            }
            StmtKind::For { counter, lo, hi, step, body } => {
                let mut c = self.eval(lo).map_err(Err)?;
                loop {
                    self.write_var(*counter, c);
                    self.span = s.span;
                    let h = self.eval(hi).map_err(Err)?;
                    if !ops::binary(BinOp::Lt, c, h).map_err(Err)?.is_truthy() {
                        break;
                    }
                    self.block(body).map_err(Ok)?;
                    self.span = s.span;
                    let st = self.eval(step).map_err(Err)?;
                    c = ops::binary(BinOp::Add, self.read_var(*counter), st).map_err(Err)?;
                }
            }
            StmtKind::Barrier => {
                return Err(Err(TrapKind::TypeFault("barrier left inside a thread loop".into())));
            }
            StmtKind::AtomicAdd { array, index, value } => {
                let i = self.eval(index).map_err(Err)?;
                let v = self.eval(value).map_err(Err)?;
                self.atomic(*array, i, |b, i| b.atomic_add(i, v), |old| ops::add(old, v)).map_err(Err)?;
            }
            StmtKind::AtomicCas { array, index, compare, value } => {
                let i = self.eval(index).map_err(Err)?;
                let c = self.eval(compare).map_err(Err)?;
                let v = self.eval(value).map_err(Err)?;
                self.atomic(*array, i, |b, i| b.atomic_cas(i, c, v), |old| Ok(if old.bit_eq(c) { v } else { old }))
                    .map_err(Err)?;
            }
        }
        Ok(())
    }

    fn read_var(&self, v: VarRef) -> Value {
        match v.storage {
            Storage::Private => self.private[v.id as usize],
            Storage::Expanded(slot) => self.expanded[slot as usize][self.tid],
            Storage::Uniform => self.uniform[v.id as usize],
        }
    }

    fn write_var(&mut self, v: VarRef, value: Value) {
        match v.storage {
            Storage::Private => self.private[v.id as usize] = value,
            Storage::Expanded(slot) => self.expanded[slot as usize][self.tid] = value,
            Storage::Uniform => self.uniform[v.id as usize] = value,
        }
    }

    fn resolve(&self, r: ArrayRef) -> Result<Arr<'_>, TrapKind> {
        let r = match r {
            ArrayRef::Named(i) => match self.k.arrays[i as usize].kind {
                ArrayKind::Param(p) => ArrayRef::Global { param: p },
                ArrayKind::StaticShared { slot, .. } => ArrayRef::Shared(SharedSlot::Static(slot)),
                ArrayKind::DynamicShared => ArrayRef::Shared(SharedSlot::Dynamic),
            },
            other => other,
        };
        match r {
            ArrayRef::Global { param } => match self.ctx.args.get(param as usize) {
                Some(ArgValue::Buffer(b)) => Ok(Arr::Global(b)),
                _ => Err(TrapKind::TypeFault(format!("parameter {param} is not bound to a buffer"))),
            },
            ArrayRef::Shared(SharedSlot::Static(s)) => Ok(Arr::Shared(s as usize)),
            ArrayRef::Shared(SharedSlot::Dynamic) => Ok(Arr::Shared(self.shared.len() - 1)),
            ArrayRef::Named(_) => unreachable!(),
        }
    }

    fn record(&mut self, write: bool, b: &Buffer, i: usize) {
        if let Some(t) = self.ctx.trace.as_deref_mut() {
            t.push(MemEvent { write, addr: b.address(i), size: b.ty().size_bytes() as u32 });
        }
    }

    fn load(&mut self, r: ArrayRef, index: Value) -> Result<Value, TrapKind> {
        match self.resolve(r)? {
            Arr::Global(b) => {
                let b = Arc::clone(b);
                let i = check_index(&self.array_name(r), index, b.len())?;
                self.record(false, &b, i);
                Ok(b.load(i))
            }
            Arr::Shared(s) => {
                let i = check_index(&self.shared_names[s], index, self.shared[s].len())?;
                Ok(self.shared[s][i])
            }
        }
    }

    fn store(&mut self, r: ArrayRef, index: Value, v: Value) -> Result<(), TrapKind> {
        match self.resolve(r)? {
            Arr::Global(b) => {
                let b = Arc::clone(b);
                let i = check_index(&self.array_name(r), index, b.len())?;
                self.record(true, &b, i);
                b.store(i, v);
            }
            Arr::Shared(s) => {
                let i = check_index(&self.shared_names[s], index, self.shared[s].len())?;
                self.shared[s][i] = v;
            }
        }
        Ok(())
    }

    fn atomic(
        &mut self,
        r: ArrayRef,
        index: Value,
        global: impl FnOnce(&Buffer, usize) -> Value,
        local: impl FnOnce(Value) -> Result<Value, TrapKind>,
    ) -> Result<(), TrapKind> {
        match self.resolve(r)? {
            Arr::Global(b) => {
                let b = Arc::clone(b);
                let i = check_index(&self.array_name(r), index, b.len())?;
                self.record(false, &b, i);
                self.record(true, &b, i);
                global(&b, i);
            }
            Arr::Shared(s) => {
                let i = check_index(&self.shared_names[s], index, self.shared[s].len())?;
                self.shared[s][i] = local(self.shared[s][i])?;
            }
        }
        Ok(())
    }

    fn array_name(&self, r: ArrayRef) -> String {
        match r {
            ArrayRef::Global { param } => self.k.params[param as usize].name.clone(),
            ArrayRef::Named(i) => self.k.arrays[i as usize].name.clone(),
            ArrayRef::Shared(_) => String::from("shared"),
        }
    }

    fn builtin(&self, b: Builtin) -> Value {
        let d = match b.var {
            BuiltinVar::ThreadIdx => self.thread_idx,
            BuiltinVar::BlockIdx => self.ctx.block_index,
            BuiltinVar::BlockDim => self.ctx.block_dim,
            BuiltinVar::GridDim => self.ctx.grid_dim,
        };
        Value::I32(d.component(b.axis) as i32)
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, TrapKind> {
        Ok(match &e.kind {
            ExprKind::Const(v) => *v,
            ExprKind::Var(v) => self.read_var(*v),
            ExprKind::Param(p) => match self.ctx.args.get(*p as usize) {
                Some(ArgValue::Scalar(v)) => *v,
                _ => return Err(TrapKind::TypeFault(format!("parameter {p} is not bound to a scalar"))),
            },
            ExprKind::Builtin(b) => self.builtin(*b),
            ExprKind::Load { array, index } => {
                let i = self.eval(index)?;
                self.load(*array, i)?
            }
            ExprKind::Binary { op: BinOp::And, lhs, rhs } => {
                Value::I32((self.eval(lhs)?.is_truthy() && self.eval(rhs)?.is_truthy()) as i32)
            }
            ExprKind::Binary { op: BinOp::Or, lhs, rhs } => {
                Value::I32((self.eval(lhs)?.is_truthy() || self.eval(rhs)?.is_truthy()) as i32)
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                ops::binary(*op, l, r)?
            }
            ExprKind::Unary { op, expr } => ops::unary(*op, self.eval(expr)?),
            ExprKind::Convert(inner) => self.eval(inner)?.convert(e.ty),
            ExprKind::Math { func, args } => {
                let mut vs = Vec::with_capacity(args.len());
                for a in args {
                    vs.push(self.eval(a)?);
                }
                ops::math(*func, &vs)?
            }
            ExprKind::Warp { op, .. } => {
                return Err(TrapKind::TypeFault(format!("{} was not lowered to an exchange", op.name())))
            }
            ExprKind::LaneRead { exchange } => self.lane_results[*exchange as usize][self.lane],
        })
    }
}

fn count_loops(ss: &[Section]) -> usize {
    ss.iter()
        .map(|s| match s {
            Section::ThreadLoop { .. } => 1,
            Section::Uniform(u) => count_loops(&u.body),
        })
        .sum()
}
