//! Typed, name-resolved kernel IR.
//!
//! Produced from the surface AST by `lang::lower`, consumed both by the
//! block-fusion transform and by the per-thread reference interpreter.
//! Every expression carries its result type and every implicit conversion
//! is explicit as a `Convert` node.

use std::collections::HashSet;

use serde::Serialize;

use crate::lang::ast::{BinOp, Builtin, BuiltinVar, Param, SharedDecl, Span, UnOp};
use crate::types::{ScalarType, Value};

pub type VarId = u32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarInfo {
    pub name: String,
    pub ty: ScalarType,
    pub is_counter: bool,
}

/// Where a local lives once the kernel has been block-fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    /// Thread-private scratch, valid only inside one thread-loop region.
    Private,
    /// Replicated per thread: slot index into the expanded arrays.
    Expanded(u32),
    /// One value per block (or per warp), e.g. counters of loops hoisted
    /// outside the thread loops.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct VarRef {
    pub id: VarId,
    pub storage: Storage,
}

impl VarRef {
    pub fn private(id: VarId) -> VarRef {
        VarRef { id, storage: Storage::Private }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedSlot {
    Static(u32),
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayRef {
    /// Symbol-table reference, before memory mapping.
    Named(u32),
    /// Device-arena buffer passed through the given parameter.
    Global { param: u32 },
    /// Per-block shared buffer.
    Shared(SharedSlot),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayKind {
    Param(u32),
    StaticShared { slot: u32, len: u32 },
    DynamicShared,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArraySym {
    pub name: String,
    pub ty: ScalarType,
    pub kind: ArrayKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MathFn {
    Min,
    Max,
    Abs,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpOp {
    ShflDown,
    VoteAny,
    VoteAll,
}

impl WarpOp {
    pub fn name(self) -> &'static str {
        match self {
            WarpOp::ShflDown => "shfl_down",
            WarpOp::VoteAny => "vote_any",
            WarpOp::VoteAll => "vote_all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub ty: ScalarType,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprKind {
    Const(Value),
    Var(VarRef),
    Param(u32),
    Builtin(Builtin),
    Load { array: ArrayRef, index: Box<Expr> },
    /// Arithmetic and comparison operands share one type; `&&`/`||` test
    /// each operand for truth independently.
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Unary { op: UnOp, expr: Box<Expr> },
    Convert(Box<Expr>),
    Math { func: MathFn, args: Vec<Expr> },
    Warp { op: WarpOp, args: Vec<Expr> },
    /// Result of a lowered warp exchange.
    LaneRead { exchange: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StmtKind {
    Assign { var: VarRef, value: Expr },
    Store { array: ArrayRef, index: Expr, value: Expr },
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
    For { counter: VarRef, lo: Expr, hi: Expr, step: Expr, body: Vec<Stmt> },
    Barrier,
    AtomicAdd { array: ArrayRef, index: Expr, value: Expr },
    AtomicCas { array: ArrayRef, index: Expr, compare: Expr, value: Expr },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kernel {
    pub name: String,
    pub params: Vec<Param>,
    pub shared: Vec<SharedDecl>,
    pub arrays: Vec<ArraySym>,
    pub vars: Vec<VarInfo>,
    pub body: Vec<Stmt>,
}

impl Kernel {
    pub fn array_for_param(&self, param: u32) -> Option<u32> {
        self.arrays.iter().position(|a| a.kind == ArrayKind::Param(param)).map(|i| i as u32)
    }
}

impl Expr {
    pub fn constant(v: Value) -> Expr {
        Expr { ty: v.ty(), kind: ExprKind::Const(v) }
    }

    pub fn convert(self, to: ScalarType) -> Expr {
        if self.ty == to {
            return self;
        }
        if let ExprKind::Const(v) = self.kind {
            return Expr::constant(v.convert(to));
        }
        Expr { kind: ExprKind::Convert(Box::new(self)), ty: to }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Load { index, .. } => vec![index],
            ExprKind::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            ExprKind::Unary { expr, .. } | ExprKind::Convert(expr) => vec![expr],
            ExprKind::Math { args, .. } | ExprKind::Warp { args, .. } => args.iter().collect(),
            ExprKind::Const(_)
            | ExprKind::Var(_)
            | ExprKind::Param(_)
            | ExprKind::Builtin(_)
            | ExprKind::LaneRead { .. } => Vec::new(),
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            ExprKind::Load { index, .. } => vec![index],
            ExprKind::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            ExprKind::Unary { expr, .. } | ExprKind::Convert(expr) => vec![expr],
            ExprKind::Math { args, .. } | ExprKind::Warp { args, .. } => args.iter_mut().collect(),
            ExprKind::Const(_)
            | ExprKind::Var(_)
            | ExprKind::Param(_)
            | ExprKind::Builtin(_)
            | ExprKind::LaneRead { .. } => Vec::new(),
        }
    }

    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Post-order mutable visit.
    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        for c in self.children_mut() {
            c.walk_mut(f);
        }
        f(self);
    }

    pub fn contains_warp(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e.kind, ExprKind::Warp { .. }));
        found
    }

    pub fn contains_load(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e.kind, ExprKind::Load { .. }));
        found
    }
}

impl Stmt {
    /// Expressions evaluated by this statement itself, excluding nested bodies.
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Assign { value, .. } => vec![value],
            StmtKind::Store { index, value, .. } | StmtKind::AtomicAdd { index, value, .. } => vec![index, value],
            StmtKind::AtomicCas { index, compare, value, .. } => vec![index, compare, value],
            StmtKind::If { cond, .. } => vec![cond],
            StmtKind::For { lo, hi, step, .. } => vec![lo, hi, step],
            StmtKind::Barrier => Vec::new(),
        }
    }

    pub fn own_exprs_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            StmtKind::Assign { value, .. } => vec![value],
            StmtKind::Store { index, value, .. } | StmtKind::AtomicAdd { index, value, .. } => vec![index, value],
            StmtKind::AtomicCas { index, compare, value, .. } => vec![index, compare, value],
            StmtKind::If { cond, .. } => vec![cond],
            StmtKind::For { lo, hi, step, .. } => vec![lo, hi, step],
            StmtKind::Barrier => Vec::new(),
        }
    }

    pub fn bodies(&self) -> Vec<&Vec<Stmt>> {
        match &self.kind {
            StmtKind::If { then_body, else_body, .. } => vec![then_body, else_body],
            StmtKind::For { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    pub fn bodies_mut(&mut self) -> Vec<&mut Vec<Stmt>> {
        match &mut self.kind {
            StmtKind::If { then_body, else_body, .. } => vec![then_body, else_body],
            StmtKind::For { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    pub fn contains_barrier(&self) -> bool {
        matches!(self.kind, StmtKind::Barrier) || self.bodies().iter().any(|b| b.iter().any(Stmt::contains_barrier))
    }

    pub fn contains_warp(&self) -> bool {
        self.own_exprs().iter().any(|e| e.contains_warp())
            || self.bodies().iter().any(|b| b.iter().any(Stmt::contains_warp))
    }

    pub fn contains_atomic(&self) -> bool {
        matches!(self.kind, StmtKind::AtomicAdd { .. } | StmtKind::AtomicCas { .. })
            || self.bodies().iter().any(|b| b.iter().any(Stmt::contains_atomic))
    }

    /// Visit every statement (pre-order) including nested ones.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        for b in self.bodies() {
            for s in b {
                s.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Stmt)) {
        f(self);
        for b in self.bodies_mut() {
            for s in b.iter_mut() {
                s.walk_mut(f);
            }
        }
    }

    /// Every expression reachable from this statement, in evaluation order.
    pub fn walk_exprs<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        self.walk(&mut |s| {
            for e in s.own_exprs() {
                e.walk(f);
            }
        });
    }

    pub fn walk_exprs_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        self.walk_mut(&mut |s| {
            for e in s.own_exprs_mut() {
                e.walk_mut(f);
            }
        });
    }

    /// Variables written by this statement or anything nested in it.
    pub fn written_vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.walk(&mut |s| match &s.kind {
            StmtKind::Assign { var, .. } => out.push(var.id),
            StmtKind::For { counter, .. } => out.push(counter.id),
            _ => {}
        });
        out
    }
}

/// Rough static instruction count: one per expression node and statement.
pub fn instruction_estimate(body: &[Stmt]) -> usize {
    let mut n = 0;
    for s in body {
        s.walk(&mut |_| n += 1);
        s.walk_exprs(&mut |_| n += 1);
    }
    n
}

/// Block-uniformity facts: which variables hold the same value in every
/// thread of a block.
#[derive(Debug, Clone, Default)]
pub struct Uniformity {
    uniform: HashSet<VarId>,
}

impl Uniformity {
    /// Fixed point: start optimistic and demote any variable with a
    /// thread-varying definition or a definition under thread-varying
    /// control flow.
    pub fn analyze(kernel: &Kernel) -> Uniformity {
        let mut u = Uniformity { uniform: (0..kernel.vars.len() as VarId).collect() };
        loop {
            let mut demote = Vec::new();
            u.scan(&kernel.body, true, &mut demote);
            if demote.is_empty() {
                return u;
            }
            let before = u.uniform.len();
            for v in demote {
                u.uniform.remove(&v);
            }
            if u.uniform.len() == before {
                return u;
            }
        }
    }

    fn scan(&self, body: &[Stmt], ctx_uniform: bool, demote: &mut Vec<VarId>) {
        for s in body {
            match &s.kind {
                StmtKind::Assign { var, value } => {
                    if self.uniform.contains(&var.id) && !(ctx_uniform && self.is_uniform(value)) {
                        demote.push(var.id);
                    }
                }
                StmtKind::If { cond, then_body, else_body } => {
                    let c = ctx_uniform && self.is_uniform(cond);
                    self.scan(then_body, c, demote);
                    self.scan(else_body, c, demote);
                }
                StmtKind::For { counter, lo, hi, step, body } => {
                    let c = ctx_uniform && self.is_uniform(lo) && self.is_uniform(hi) && self.is_uniform(step);
                    if !c && self.uniform.contains(&counter.id) {
                        demote.push(counter.id);
                    }
                    self.scan(body, c, demote);
                }
                _ => {}
            }
        }
    }

    pub fn is_var_uniform(&self, v: VarId) -> bool {
        self.uniform.contains(&v)
    }

    /// Loads are conservatively thread-varying.
    pub fn is_uniform(&self, e: &Expr) -> bool {
        let mut ok = true;
        e.walk(&mut |n| match &n.kind {
            ExprKind::Var(v) => ok &= self.uniform.contains(&v.id),
            ExprKind::Builtin(b) => ok &= b.var != BuiltinVar::ThreadIdx,
            ExprKind::Load { .. } | ExprKind::Warp { .. } | ExprKind::LaneRead { .. } => ok = false,
            _ => {}
        });
        ok
    }

    pub fn is_uniform_for(&self, s: &Stmt) -> bool {
        match &s.kind {
            StmtKind::For { lo, hi, step, .. } => self.is_uniform(lo) && self.is_uniform(hi) && self.is_uniform(step),
            _ => false,
        }
    }
}
