//! Reference interpreter: runs the untransformed kernel one logical thread
//! at a time.
//!
//! The kernel is compiled to a small stack bytecode. Every thread of a block
//! owns a program counter, an operand stack and its locals. Threads run in
//! ascending id order until they reach a barrier or a warp exchange; a
//! barrier releases once every live thread waits on it, an exchange once
//! every live lane of the warp waits on it. This realizes barrier semantics
//! directly, with no fission and no variable expansion.

use std::sync::Arc;

use super::ops;
use super::{check_index, elem_count, ArgValue, Buffer, Trap, TrapKind};
use crate::ir::{self, ArrayKind, ArrayRef, Expr, ExprKind, MathFn, Stmt, StmtKind, VarId, WarpOp};
use crate::lang::ast::{BinOp, Builtin, BuiltinVar, KernelProgram, Span, UnOp};
use crate::lang::lower::lower;
use crate::types::{Dim3, ScalarType, Value};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(Value),
    Load(VarId),
    Store(VarId),
    Param(u32),
    Builtin(Builtin),
    LoadArr(u32),
    StoreArr(u32),
    AtomicAdd(u32),
    AtomicCas(u32),
    Bin(BinOp),
    Un(UnOp),
    Conv(ScalarType),
    Math(MathFn, u8),
    Truthy,
    Jump(usize),
    JumpIfFalse(usize),
    Barrier,
    Warp(WarpOp),
    Halt,
}

struct Code {
    ops: Vec<Op>,
    spans: Vec<Span>,
}

impl Code {
    fn emit(&mut self, op: Op, span: Span) -> usize {
        self.ops.push(op);
        self.spans.push(span);
        self.ops.len() - 1
    }

    fn patch(&mut self, at: usize, target: usize) {
        self.ops[at] = match self.ops[at] {
            Op::Jump(_) => Op::Jump(target),
            Op::JumpIfFalse(_) => Op::JumpIfFalse(target),
            other => other,
        };
    }

    fn block(&mut self, b: &[Stmt]) {
        for s in b {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        let sp = s.span;
        match &s.kind {
            StmtKind::Assign { var, value } => {
                self.expr(value, sp);
                self.emit(Op::Store(var.id), sp);
            }
            StmtKind::Store { array, index, value } => {
                self.expr(index, sp);
                self.expr(value, sp);
                self.emit(Op::StoreArr(named(*array)), sp);
            }
            StmtKind::If { cond, then_body, else_body } => {
                self.expr(cond, sp);
                let jf = self.emit(Op::JumpIfFalse(0), sp);
                self.block(then_body);
                let j = self.emit(Op::Jump(0), sp);
                let else_at = self.ops.len();
                self.patch(jf, else_at);
                self.block(else_body);
                let end = self.ops.len();
                self.patch(j, end);
            }
            StmtKind::For { counter, lo, hi, step, body } => {
                self.expr(lo, sp);
                self.emit(Op::Store(counter.id), sp);
                let cond = self.ops.len();
                self.emit(Op::Load(counter.id), sp);
                self.expr(hi, sp);
                self.emit(Op::Bin(BinOp::Lt), sp);
                let jf = self.emit(Op::JumpIfFalse(0), sp);
                self.block(body);
                self.emit(Op::Load(counter.id), sp);
                self.expr(step, sp);
                self.emit(Op::Bin(BinOp::Add), sp);
                self.emit(Op::Store(counter.id), sp);
                self.emit(Op::Jump(cond), sp);
                let end = self.ops.len();
                self.patch(jf, end);
            }
            StmtKind::Barrier => {
                self.emit(Op::Barrier, sp);
            }
            StmtKind::AtomicAdd { array, index, value } => {
                self.expr(index, sp);
                self.expr(value, sp);
                self.emit(Op::AtomicAdd(named(*array)), sp);
            }
            StmtKind::AtomicCas { array, index, compare, value } => {
                self.expr(index, sp);
                self.expr(compare, sp);
                self.expr(value, sp);
                self.emit(Op::AtomicCas(named(*array)), sp);
            }
        }
    }

    fn expr(&mut self, e: &Expr, sp: Span) {
        match &e.kind {
            ExprKind::Const(v) => {
                self.emit(Op::Const(*v), sp);
            }
            ExprKind::Var(v) => {
                self.emit(Op::Load(v.id), sp);
            }
            ExprKind::Param(p) => {
                self.emit(Op::Param(*p), sp);
            }
            ExprKind::Builtin(b) => {
                self.emit(Op::Builtin(*b), sp);
            }
            ExprKind::Load { array, index } => {
                self.expr(index, sp);
                self.emit(Op::LoadArr(named(*array)), sp);
            }
            // Warp operands must be evaluated by every lane, so logical
            // operators whose right side exchanges do not short-circuit.
            ExprKind::Binary { op: op @ (BinOp::And | BinOp::Or), lhs, rhs } if !rhs.contains_warp() => {
                self.expr(lhs, sp);
                self.emit(Op::Truthy, sp);
                if *op == BinOp::Or {
                    self.emit(Op::Un(UnOp::Not), sp);
                }
                // Jump to the short-circuit constant when lhs decides.
                let jf = self.emit(Op::JumpIfFalse(0), sp);
                self.expr(rhs, sp);
                self.emit(Op::Truthy, sp);
                let j = self.emit(Op::Jump(0), sp);
                let short = self.ops.len();
                self.patch(jf, short);
                self.emit(Op::Const(Value::I32((*op == BinOp::Or) as i32)), sp);
                let end = self.ops.len();
                self.patch(j, end);
            }
            ExprKind::Binary { op, lhs, rhs } => {
                self.expr(lhs, sp);
                self.expr(rhs, sp);
                self.emit(Op::Bin(*op), sp);
            }
            ExprKind::Unary { op, expr } => {
                self.expr(expr, sp);
                self.emit(Op::Un(*op), sp);
            }
            ExprKind::Convert(inner) => {
                self.expr(inner, sp);
                self.emit(Op::Conv(e.ty), sp);
            }
            ExprKind::Math { func, args } => {
                for a in args {
                    self.expr(a, sp);
                }
                self.emit(Op::Math(*func, args.len() as u8), sp);
            }
            ExprKind::Warp { op, args } => {
                for a in args {
                    self.expr(a, sp);
                }
                self.emit(Op::Warp(*op), sp);
            }
            ExprKind::LaneRead { .. } => unreachable!("lane reads only exist after the transform"),
        }
    }
}

fn named(r: ArrayRef) -> u32 {
    match r {
        ArrayRef::Named(i) => i,
        _ => unreachable!("reference interpreter runs unmapped IR"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stop {
    Runnable,
    Barrier,
    Warp,
    Halted,
}

struct Thread {
    pc: usize,
    stack: Vec<Value>,
    locals: Vec<Value>,
    stop: Stop,
}

/// Statistics of a reference run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Reference {
    /// Barrier releases summed over all blocks.
    pub barrier_events: u64,
}

struct BlockRun<'a> {
    kernel: &'a ir::Kernel,
    code: &'a Code,
    args: &'a [ArgValue],
    block_index: Dim3,
    block_dim: Dim3,
    grid_dim: Dim3,
    shared: Vec<Vec<Value>>,
    phase: usize,
}

/// Executes the kernel over the whole grid, one block after another.
/// `warp_size` enables warp mode.
pub fn run_reference(
    k: &KernelProgram,
    grid: Dim3,
    block: Dim3,
    args: &[ArgValue],
    dynamic_shared_bytes: usize,
    warp_size: Option<u32>,
) -> Result<Reference, Trap> {
    let (kernel, diags) = lower(k, warp_size.is_some());
    let fault = |m: String| Trap {
        kind: TrapKind::TypeFault(m),
        kernel: k.name.clone(),
        block: None,
        section: 0,
        tid: 0,
        span: k.span,
    };
    if let Some(d) = diags.first() {
        return Err(fault(d.to_string()));
    }
    if let Err(m) = super::check_args(&kernel.params, args) {
        return Err(fault(m));
    }
    let mut code = Code { ops: Vec::new(), spans: Vec::new() };
    code.block(&kernel.body);
    code.emit(Op::Halt, k.span);

    let mut stats = Reference::default();
    for b in 0..grid.count() {
        let mut run = BlockRun {
            kernel: &kernel,
            code: &code,
            args,
            block_index: grid.delinearize(b),
            block_dim: block,
            grid_dim: grid,
            shared: kernel
                .arrays
                .iter()
                .filter_map(|a| match a.kind {
                    ArrayKind::StaticShared { len, .. } => Some(vec![a.ty.zero(); len as usize]),
                    ArrayKind::DynamicShared => Some(vec![a.ty.zero(); elem_count(dynamic_shared_bytes, a.ty)]),
                    ArrayKind::Param(_) => None,
                })
                .collect(),
            phase: 0,
        };
        run.run(warp_size.map(|w| w as usize), &mut stats).map_err(|mut t| {
            t.block = Some(b);
            t
        })?;
    }
    Ok(stats)
}

impl BlockRun<'_> {
    fn run(&mut self, warp_size: Option<usize>, stats: &mut Reference) -> Result<(), Trap> {
        let n = self.block_dim.count();
        let nvars = self.kernel.vars.len();
        let mut threads: Vec<Thread> = (0..n)
            .map(|_| Thread { pc: 0, stack: Vec::new(), locals: vec![Value::I32(0); nvars], stop: Stop::Runnable })
            .collect();
        loop {
            for tid in 0..n {
                if threads[tid].stop == Stop::Runnable {
                    self.step_thread(tid, &mut threads[tid])?;
                }
            }
            let mut progressed = false;
            if let Some(ws) = warp_size {
                for lo in (0..n).step_by(ws) {
                    let hi = (lo + ws).min(n);
                    if self.try_exchange(&mut threads[lo..hi], ws)? {
                        progressed = true;
                    }
                }
            }
            if progressed {
                continue;
            }
            let live: Vec<&Thread> = threads.iter().filter(|t| t.stop != Stop::Halted).collect();
            if live.is_empty() {
                return Ok(());
            }
            if live.iter().all(|t| t.stop == Stop::Barrier) {
                stats.barrier_events += 1;
                self.phase += 1;
                for t in threads.iter_mut().filter(|t| t.stop == Stop::Barrier) {
                    t.pc += 1;
                    t.stop = Stop::Runnable;
                }
                continue;
            }
            let tid = threads.iter().position(|t| t.stop != Stop::Halted).unwrap_or(0);
            let span = self.code.spans[threads[tid].pc];
            return Err(self.trap(TrapKind::TypeFault("threads wait at different synchronization points".into()), tid, span));
        }
    }

    /// Completes an exchange when every lane of the warp waits on the same
    /// instruction.
    fn try_exchange(&self, lanes: &mut [Thread], ws: usize) -> Result<bool, Trap> {
        let pc = lanes[0].pc;
        if lanes.iter().any(|t| t.stop != Stop::Warp || t.pc != pc) {
            return Ok(false);
        }
        let Op::Warp(op) = self.code.ops[pc] else { unreachable!() };
        let n = lanes.len();
        match op {
            WarpOp::ShflDown => {
                let mut vals = Vec::with_capacity(n);
                let mut deltas = Vec::with_capacity(n);
                for t in lanes.iter_mut() {
                    deltas.push(t.stack.pop().expect("delta operand").as_i64());
                    vals.push(t.stack.pop().expect("value operand"));
                }
                for (lane, t) in lanes.iter_mut().enumerate() {
                    let src = lane as i64 + deltas[lane];
                    let v = if (0..ws.min(n) as i64).contains(&src) { vals[src as usize] } else { vals[lane] };
                    t.stack.push(v);
                }
            }
            WarpOp::VoteAny | WarpOp::VoteAll => {
                let preds: Vec<bool> = lanes.iter_mut().map(|t| t.stack.pop().expect("predicate").is_truthy()).collect();
                let r = if op == WarpOp::VoteAny { preds.iter().any(|p| *p) } else { preds.iter().all(|p| *p) };
                for t in lanes.iter_mut() {
                    t.stack.push(Value::I32(r as i32));
                }
            }
        }
        for t in lanes.iter_mut() {
            t.pc += 1;
            t.stop = Stop::Runnable;
        }
        Ok(true)
    }

    fn trap(&self, kind: TrapKind, tid: usize, span: Span) -> Trap {
        Trap { kind, kernel: self.kernel.name.clone(), block: None, section: self.phase, tid, span }
    }

    fn buffer(&self, array: u32) -> Result<(&Arc<Buffer>, &str), TrapKind> {
        let sym = &self.kernel.arrays[array as usize];
        match sym.kind {
            ArrayKind::Param(p) => match &self.args[p as usize] {
                ArgValue::Buffer(b) => Ok((b, &sym.name)),
                ArgValue::Scalar(_) => Err(TrapKind::TypeFault(format!("`{}` is not a buffer", sym.name))),
            },
            _ => unreachable!(),
        }
    }

    fn shared_index(&self, array: u32) -> Option<usize> {
        let mut idx = 0;
        for (i, a) in self.kernel.arrays.iter().enumerate() {
            if matches!(a.kind, ArrayKind::Param(_)) {
                continue;
            }
            if i as u32 == array {
                return Some(idx);
            }
            idx += 1;
        }
        None
    }

    fn step_thread(&mut self, tid: usize, t: &mut Thread) -> Result<(), Trap> {
        let thread_idx = self.block_dim.delinearize(tid);
        loop {
            let pc = t.pc;
            match self.exec(t, thread_idx) {
                Ok(Some(stop)) => {
                    t.stop = stop;
                    return Ok(());
                }
                Ok(None) => {}
                Err(kind) => return Err(self.trap(kind, tid, self.code.spans[pc])),
            }
        }
    }

    /// Executes one instruction; returns the stop state when the thread
    /// must wait.
    fn exec(&mut self, t: &mut Thread, thread_idx: Dim3) -> Result<Option<Stop>, TrapKind> {
        let op = self.code.ops[t.pc];
        let pop = |t: &mut Thread| t.stack.pop().expect("operand stack underflow");
        match op {
            Op::Const(v) => t.stack.push(v),
            Op::Load(v) => t.stack.push(t.locals[v as usize]),
            Op::Store(v) => {
                let x = pop(t);
                t.locals[v as usize] = x;
            }
            Op::Param(p) => match &self.args[p as usize] {
                ArgValue::Scalar(v) => t.stack.push(*v),
                ArgValue::Buffer(_) => return Err(TrapKind::TypeFault(format!("parameter {p} is a buffer"))),
            },
            Op::Builtin(b) => {
                let d = match b.var {
                    BuiltinVar::ThreadIdx => thread_idx,
                    BuiltinVar::BlockIdx => self.block_index,
                    BuiltinVar::BlockDim => self.block_dim,
                    BuiltinVar::GridDim => self.grid_dim,
                };
                t.stack.push(Value::I32(d.component(b.axis) as i32));
            }
            Op::LoadArr(a) => {
                let i = pop(t);
                let v = match self.shared_index(a) {
                    Some(s) => {
                        let i = check_index(&self.kernel.arrays[a as usize].name, i, self.shared[s].len())?;
                        self.shared[s][i]
                    }
                    None => {
                        let (b, name) = self.buffer(a)?;
                        b.load(check_index(name, i, b.len())?)
                    }
                };
                t.stack.push(v);
            }
            Op::StoreArr(a) => {
                let v = pop(t);
                let i = pop(t);
                match self.shared_index(a) {
                    Some(s) => {
                        let i = check_index(&self.kernel.arrays[a as usize].name, i, self.shared[s].len())?;
                        self.shared[s][i] = v.convert(self.kernel.arrays[a as usize].ty);
                    }
                    None => {
                        let (b, name) = self.buffer(a)?;
                        b.store(check_index(name, i, b.len())?, v);
                    }
                }
            }
            Op::AtomicAdd(a) | Op::AtomicCas(a) => {
                let (cmp, v) = match op {
                    Op::AtomicCas(_) => {
                        let v = pop(t);
                        (Some(pop(t)), v)
                    }
                    _ => (None, pop(t)),
                };
                let i = pop(t);
                match self.shared_index(a) {
                    Some(s) => {
                        let i = check_index(&self.kernel.arrays[a as usize].name, i, self.shared[s].len())?;
                        let old = self.shared[s][i];
                        self.shared[s][i] = match cmp {
                            Some(c) if old.bit_eq(c) => v,
                            Some(_) => old,
                            None => ops::add(old, v)?,
                        };
                    }
                    None => {
                        let (b, name) = self.buffer(a)?;
                        let i = check_index(name, i, b.len())?;
                        match cmp {
                            Some(c) => b.atomic_cas(i, c, v),
                            None => b.atomic_add(i, v),
                        };
                    }
                }
            }
            Op::Bin(o) => {
                let r = pop(t);
                let l = pop(t);
                t.stack.push(ops::binary(o, l, r)?);
            }
            Op::Un(o) => {
                let x = pop(t);
                t.stack.push(ops::unary(o, x));
            }
            Op::Conv(ty) => {
                let x = pop(t);
                t.stack.push(x.convert(ty));
            }
            Op::Math(f, n) => {
                let at = t.stack.len() - n as usize;
                let args: Vec<Value> = t.stack.drain(at..).collect();
                t.stack.push(ops::math(f, &args)?);
            }
            Op::Truthy => {
                let x = pop(t);
                t.stack.push(Value::I32(x.is_truthy() as i32));
            }
            Op::Jump(to) => {
                t.pc = to;
                return Ok(None);
            }
            Op::JumpIfFalse(to) => {
                if !pop(t).is_truthy() {
                    t.pc = to;
                    return Ok(None);
                }
            }
            Op::Barrier => return Ok(Some(Stop::Barrier)),
            Op::Warp(_) => return Ok(Some(Stop::Warp)),
            Op::Halt => return Ok(Some(Stop::Halted)),
        }
        t.pc += 1;
        Ok(None)
    }
}
