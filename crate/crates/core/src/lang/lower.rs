//! Name resolution and typing: surface AST to typed IR.
//!
//! Lowering never stops at the first problem. Ill-typed subexpressions are
//! replaced by an `i32` zero so that later checks still see a complete tree,
//! and every problem is reported as a [`Diagnostic`].

use std::collections::HashMap;

use super::ast::{self, AtomicKind, ExprKind, Intrinsic, LValue, ParamType, Span, StmtKind, UnOp};
use super::{Diagnostic, DiagnosticKind};
use crate::ir::{self, ArrayKind, ArraySym, ArrayRef, MathFn, VarInfo, VarRef, WarpOp};
use crate::types::{ScalarType, Value};

enum Symbol {
    Param(u32, ScalarType),
    Array(u32),
}

struct Lowerer<'a> {
    kernel: &'a ast::KernelProgram,
    warp_mode: bool,
    globals: HashMap<String, Symbol>,
    scopes: Vec<HashMap<String, ir::VarId>>,
    vars: Vec<VarInfo>,
    arrays: Vec<ArraySym>,
    diags: Vec<Diagnostic>,
}

/// A typed expression plus whether its type is still negotiable (literals).
struct Typed {
    expr: ir::Expr,
    weak: bool,
}

pub fn lower(kernel: &ast::KernelProgram, warp_mode: bool) -> (ir::Kernel, Vec<Diagnostic>) {
    let mut l = Lowerer {
        kernel,
        warp_mode,
        globals: HashMap::new(),
        scopes: Vec::new(),
        vars: Vec::new(),
        arrays: Vec::new(),
        diags: Vec::new(),
    };
    l.declare_globals();
    l.scopes.push(HashMap::new());
    let body = l.lower_block(&kernel.body.stmts);
    let k = ir::Kernel {
        name: kernel.name.clone(),
        params: kernel.params.clone(),
        shared: kernel.shared.clone(),
        arrays: l.arrays,
        vars: l.vars,
        body,
    };
    (k, l.diags)
}

impl<'a> Lowerer<'a> {
    fn diag(&mut self, kind: DiagnosticKind, span: Span, message: impl Into<String>) {
        self.diags.push(Diagnostic { kind, span, message: message.into() });
    }

    fn declare_globals(&mut self) {
        for (i, p) in self.kernel.params.iter().enumerate() {
            if self.globals.contains_key(&p.name) {
                self.diag(DiagnosticKind::DuplicateName, p.span, format!("parameter `{}` declared twice", p.name));
                continue;
            }
            let sym = match p.ptype {
                ParamType::Scalar(t) => Symbol::Param(i as u32, t),
                ParamType::GlobalRef(t) => {
                    self.arrays.push(ArraySym { name: p.name.clone(), ty: t, kind: ArrayKind::Param(i as u32) });
                    Symbol::Array(self.arrays.len() as u32 - 1)
                }
            };
            self.globals.insert(p.name.clone(), sym);
        }
        let mut static_slot = 0u32;
        let mut seen_dynamic = false;
        for d in &self.kernel.shared {
            if d.len.is_none() {
                if seen_dynamic {
                    self.diag(
                        DiagnosticKind::DuplicateDynamicShared,
                        d.span,
                        format!("second `extern shared` array `{}`; at most one is allowed", d.name),
                    );
                    continue;
                }
                seen_dynamic = true;
            }
            if self.globals.contains_key(&d.name) {
                self.diag(DiagnosticKind::DuplicateName, d.span, format!("`{}` is already declared", d.name));
                continue;
            }
            let kind = match d.len {
                Some(len) => {
                    static_slot += 1;
                    ArrayKind::StaticShared { slot: static_slot - 1, len }
                }
                None => ArrayKind::DynamicShared,
            };
            self.arrays.push(ArraySym { name: d.name.clone(), ty: d.ty, kind });
            self.globals.insert(d.name.clone(), Symbol::Array(self.arrays.len() as u32 - 1));
        }
    }

    fn lookup_local(&self, name: &str) -> Option<ir::VarId> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn declare_local(&mut self, name: &str, ty: ScalarType, is_counter: bool, span: Span) -> ir::VarId {
        if self.globals.contains_key(name) {
            self.diag(DiagnosticKind::DuplicateName, span, format!("local `{name}` shadows a parameter or shared array"));
        } else if self.scopes.last().is_some_and(|s| s.contains_key(name)) {
            self.diag(DiagnosticKind::DuplicateName, span, format!("`{name}` is already declared in this scope"));
        }
        let id = self.vars.len() as ir::VarId;
        self.vars.push(VarInfo { name: name.to_string(), ty, is_counter });
        self.scopes.last_mut().expect("scope stack is never empty").insert(name.to_string(), id);
        id
    }

    fn lower_block(&mut self, stmts: &[ast::Stmt]) -> Vec<ir::Stmt> {
        stmts.iter().filter_map(|s| self.lower_stmt(s)).collect()
    }

    fn scoped_block(&mut self, stmts: &[ast::Stmt]) -> Vec<ir::Stmt> {
        self.scopes.push(HashMap::new());
        let b = self.lower_block(stmts);
        self.scopes.pop();
        b
    }

    fn lower_stmt(&mut self, s: &ast::Stmt) -> Option<ir::Stmt> {
        let kind = match &s.kind {
            StmtKind::Noop => return None,
            StmtKind::Barrier => ir::StmtKind::Barrier,
            StmtKind::LocalDecl { name, ty, init } => {
                let value = self.strong(init).convert(*ty);
                let id = self.declare_local(name, *ty, false, s.span);
                ir::StmtKind::Assign { var: VarRef::private(id), value }
            }
            StmtKind::Assign { target, value } => match target {
                LValue::Var { name, span } => {
                    let value = self.strong(value);
                    match self.lookup_local(name) {
                        Some(id) => {
                            let (is_counter, ty) = (self.vars[id as usize].is_counter, self.vars[id as usize].ty);
                            if is_counter {
                                self.diag(
                                    DiagnosticKind::ImmutableAssign,
                                    *span,
                                    format!("loop counter `{name}` cannot be assigned"),
                                );
                            }
                            ir::StmtKind::Assign { var: VarRef::private(id), value: value.convert(ty) }
                        }
                        None => {
                            match self.globals.get(name) {
                                Some(Symbol::Param(..)) => self.diag(
                                    DiagnosticKind::ImmutableAssign,
                                    *span,
                                    format!("parameter `{name}` cannot be assigned"),
                                ),
                                Some(_) => self.diag(
                                    DiagnosticKind::TypeError,
                                    *span,
                                    format!("array `{name}` must be indexed to be assigned"),
                                ),
                                None => self.diag(
                                    DiagnosticKind::UnknownIdentifier,
                                    *span,
                                    format!("unknown variable `{name}`"),
                                ),
                            }
                            return None;
                        }
                    }
                }
                LValue::Index { array, index, span } => {
                    let (aref, ty, idx) = self.lower_element(array, index, *span)?;
                    let value = self.strong(value).convert(ty);
                    ir::StmtKind::Store { array: aref, index: idx, value }
                }
            },
            StmtKind::If { cond, then_block, else_block } => {
                let cond = self.strong(cond);
                let then_body = self.scoped_block(&then_block.stmts);
                let else_body = else_block.as_ref().map(|b| self.scoped_block(&b.stmts)).unwrap_or_default();
                ir::StmtKind::If { cond, then_body, else_body }
            }
            StmtKind::For { counter, lo, hi, step, body } => {
                let lo_t = self.strong(lo);
                let ty = if lo_t.ty.is_float() {
                    self.diag(DiagnosticKind::TypeError, lo.span, "loop counters must be integers");
                    ScalarType::I32
                } else {
                    lo_t.ty
                };
                self.scopes.push(HashMap::new());
                let id = self.declare_local(counter, ty, true, s.span);
                let hi = self.lower_expr(hi).expr.convert(ty);
                let step = self.lower_expr(step).expr.convert(ty);
                let body = self.scoped_block(&body.stmts);
                self.scopes.pop();
                ir::StmtKind::For { counter: VarRef::private(id), lo: lo_t.convert(ty), hi, step, body }
            }
            StmtKind::Atomic { kind, target, operand, replacement } => {
                let LValue::Index { array, index, span } = target else {
                    self.diag(
                        DiagnosticKind::InvalidAtomicTarget,
                        target.span(),
                        "atomic operations need a shared or global array element",
                    );
                    return None;
                };
                let (aref, ty, idx) = self.lower_element(array, index, *span)?;
                let operand = self.strong(operand).convert(ty);
                match kind {
                    AtomicKind::Add => ir::StmtKind::AtomicAdd { array: aref, index: idx, value: operand },
                    AtomicKind::Cas => {
                        let replacement = replacement.as_ref().expect("parser requires a replacement for atomic_cas");
                        let value = self.strong(replacement).convert(ty);
                        ir::StmtKind::AtomicCas { array: aref, index: idx, compare: operand, value }
                    }
                }
            }
        };
        Some(ir::Stmt { kind, span: s.span })
    }

    fn lower_element(&mut self, array: &str, index: &ast::Expr, span: Span) -> Option<(ArrayRef, ScalarType, ir::Expr)> {
        let idx = self.lower_index(index);
        match self.resolve_array(array, span) {
            Some((aref, ty)) => Some((aref, ty, idx)),
            None => None,
        }
    }

    fn resolve_array(&mut self, name: &str, span: Span) -> Option<(ArrayRef, ScalarType)> {
        if self.lookup_local(name).is_some() {
            self.diag(DiagnosticKind::TypeError, span, format!("`{name}` is a scalar and cannot be indexed"));
            return None;
        }
        match self.globals.get(name) {
            Some(Symbol::Array(i)) => {
                let i = *i;
                Some((ArrayRef::Named(i), self.arrays[i as usize].ty))
            }
            Some(_) => {
                self.diag(DiagnosticKind::TypeError, span, format!("`{name}` is a scalar and cannot be indexed"));
                None
            }
            None => {
                self.diag(DiagnosticKind::UnknownIdentifier, span, format!("unknown array `{name}`"));
                None
            }
        }
    }

    fn lower_index(&mut self, e: &ast::Expr) -> ir::Expr {
        let t = self.strong(e);
        if t.ty.is_float() {
            self.diag(DiagnosticKind::TypeError, e.span, "array index must be an integer");
            return zero();
        }
        t
    }

    /// Lowers and fixes the type of literal-only expressions.
    fn strong(&mut self, e: &ast::Expr) -> ir::Expr {
        self.lower_expr(e).expr
    }

    fn lower_expr(&mut self, e: &ast::Expr) -> Typed {
        match &e.kind {
            ExprKind::IntLit(v) => {
                let value = i32::try_from(*v).map(Value::I32).unwrap_or(Value::I64(*v));
                Typed { expr: ir::Expr::constant(value), weak: true }
            }
            ExprKind::FloatLit(v) => Typed { expr: ir::Expr::constant(Value::F64(*v)), weak: true },
            ExprKind::Builtin(b) => Typed {
                expr: ir::Expr { kind: ir::ExprKind::Builtin(*b), ty: ScalarType::I32 },
                weak: false,
            },
            ExprKind::Var(name) => {
                if let Some(id) = self.lookup_local(name) {
                    let ty = self.vars[id as usize].ty;
                    return Typed { expr: ir::Expr { kind: ir::ExprKind::Var(VarRef::private(id)), ty }, weak: false };
                }
                match self.globals.get(name) {
                    Some(Symbol::Param(i, ty)) => Typed {
                        expr: ir::Expr { kind: ir::ExprKind::Param(*i), ty: *ty },
                        weak: false,
                    },
                    Some(_) => {
                        self.diag(DiagnosticKind::TypeError, e.span, format!("array `{name}` used as a scalar"));
                        fixed(zero())
                    }
                    None => {
                        self.diag(DiagnosticKind::UnknownIdentifier, e.span, format!("unknown identifier `{name}`"));
                        fixed(zero())
                    }
                }
            }
            ExprKind::Index { array, index } => {
                let idx = self.lower_index(index);
                match self.resolve_array(array, e.span) {
                    Some((aref, ty)) => Typed {
                        expr: ir::Expr { kind: ir::ExprKind::Load { array: aref, index: Box::new(idx) }, ty },
                        weak: false,
                    },
                    None => fixed(zero()),
                }
            }
            ExprKind::Unary { op, expr } => {
                let inner = self.lower_expr(expr);
                match op {
                    UnOp::Neg => {
                        let ty = inner.expr.ty;
                        let expr = match inner.expr.kind {
                            ir::ExprKind::Const(v) => ir::Expr::constant(negate(v)),
                            _ => ir::Expr { kind: ir::ExprKind::Unary { op: *op, expr: Box::new(inner.expr) }, ty },
                        };
                        Typed { expr, weak: inner.weak }
                    }
                    UnOp::Not => Typed {
                        expr: ir::Expr {
                            kind: ir::ExprKind::Unary { op: *op, expr: Box::new(inner.expr) },
                            ty: ScalarType::I32,
                        },
                        weak: false,
                    },
                }
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.lower_expr(lhs);
                let r = self.lower_expr(rhs);
                if op.is_logical() {
                    return fixed(ir::Expr {
                        kind: ir::ExprKind::Binary { op: *op, lhs: Box::new(l.expr), rhs: Box::new(r.expr) },
                        ty: ScalarType::I32,
                    });
                }
                let (ty, weak) = unify(&l, &r);
                if op.is_integer_only() && ty.is_float() {
                    self.diag(
                        DiagnosticKind::TypeError,
                        e.span,
                        format!("operator `{}` needs integer operands", op.symbol()),
                    );
                    return fixed(zero());
                }
                let result_ty = if op.is_comparison() { ScalarType::I32 } else { ty };
                Typed {
                    expr: ir::Expr {
                        kind: ir::ExprKind::Binary {
                            op: *op,
                            lhs: Box::new(l.expr.convert(ty)),
                            rhs: Box::new(r.expr.convert(ty)),
                        },
                        ty: result_ty,
                    },
                    weak: weak && !op.is_comparison(),
                }
            }
            ExprKind::Call { func, args } => self.lower_call(*func, args, e.span),
        }
    }

    fn lower_call(&mut self, func: Intrinsic, args: &[ast::Expr], span: Span) -> Typed {
        if args.len() != func.arity() {
            self.diag(
                DiagnosticKind::Arity,
                span,
                format!("`{}` takes {} argument(s), got {}", func.name(), func.arity(), args.len()),
            );
            return fixed(zero());
        }
        if func.is_warp() && !self.warp_mode {
            self.diag(
                DiagnosticKind::ShuffleWithoutWarpMode,
                span,
                format!("`{}` requires compiling in warp mode", func.name()),
            );
        }
        let lowered: Vec<Typed> = args.iter().map(|a| self.lower_expr(a)).collect();
        let math = |f: MathFn, args: Vec<ir::Expr>, ty: ScalarType| ir::Expr { kind: ir::ExprKind::Math { func: f, args }, ty };
        match func {
            Intrinsic::Min | Intrinsic::Max => {
                let (ty, weak) = unify(&lowered[0], &lowered[1]);
                let f = if func == Intrinsic::Min { MathFn::Min } else { MathFn::Max };
                let args = lowered.into_iter().map(|t| t.expr.convert(ty)).collect();
                Typed { expr: math(f, args, ty), weak }
            }
            Intrinsic::Abs => {
                let a = lowered.into_iter().next().expect("arity checked");
                let ty = a.expr.ty;
                Typed { expr: math(MathFn::Abs, vec![a.expr], ty), weak: a.weak }
            }
            Intrinsic::Sqrt => {
                let a = lowered.into_iter().next().expect("arity checked");
                let ty = if a.expr.ty == ScalarType::F32 && !a.weak { ScalarType::F32 } else { ScalarType::F64 };
                Typed { expr: math(MathFn::Sqrt, vec![a.expr.convert(ty)], ty), weak: false }
            }
            Intrinsic::ShflDown => {
                let mut it = lowered.into_iter();
                let v = it.next().expect("arity checked").expr;
                let d = it.next().expect("arity checked").expr;
                if d.ty.is_float() {
                    self.diag(DiagnosticKind::TypeError, span, "shuffle distance must be an integer");
                }
                let ty = v.ty;
                fixed(ir::Expr {
                    kind: ir::ExprKind::Warp { op: WarpOp::ShflDown, args: vec![v, d.convert(ScalarType::I32)] },
                    ty,
                })
            }
            Intrinsic::VoteAny | Intrinsic::VoteAll => {
                let op = if func == Intrinsic::VoteAny { WarpOp::VoteAny } else { WarpOp::VoteAll };
                let p = lowered.into_iter().next().expect("arity checked").expr;
                fixed(ir::Expr { kind: ir::ExprKind::Warp { op, args: vec![p] }, ty: ScalarType::I32 })
            }
        }
    }
}

fn zero() -> ir::Expr {
    ir::Expr::constant(Value::I32(0))
}

fn fixed(expr: ir::Expr) -> Typed {
    Typed { expr, weak: false }
}

fn negate(v: Value) -> Value {
    match v {
        Value::I32(x) => Value::I32(x.wrapping_neg()),
        Value::I64(x) => Value::I64(x.wrapping_neg()),
        Value::F32(x) => Value::F32(-x),
        Value::F64(x) => Value::F64(-x),
    }
}

/// Usual arithmetic conversions, with literals adopting the other side's type.
fn unify(l: &Typed, r: &Typed) -> (ScalarType, bool) {
    let (lt, rt) = (l.expr.ty, r.expr.ty);
    match (l.weak, r.weak) {
        (true, false) => (adopt(lt, rt), false),
        (false, true) => (adopt(rt, lt), false),
        (true, true) => (ScalarType::common(lt, rt), true),
        (false, false) => (ScalarType::common(lt, rt), false),
    }
}

/// Type of a literal of type `lit` combined with a typed operand `other`.
fn adopt(lit: ScalarType, other: ScalarType) -> ScalarType {
    if lit.is_int() || other.is_float() {
        if lit == ScalarType::I64 && other == ScalarType::I32 {
            ScalarType::I64
        } else {
            other
        }
    } else {
        ScalarType::F64
    }
}
