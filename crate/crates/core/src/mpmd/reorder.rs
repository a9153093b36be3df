//! Grid-stride access reordering.
//!
//! Rewrites `R + threadIdx.x + j * blockDim.x` inside `for (j = 0; j < K; j += 1)`
//! into `R + threadIdx.x * K + j`, so that on a CPU each thread walks a
//! contiguous chunk instead of striding by the block size. Index expressions
//! are compared as integer polynomials, with single-assignment load-free
//! locals substituted by their definitions.

use std::collections::{BTreeMap, HashMap};

use super::MpmdKernel;
use crate::ir::{ArrayKind, ArrayRef, Expr, ExprKind, Stmt, StmtKind, VarId};
use crate::lang::ast::{BinOp, Builtin, BuiltinVar, UnOp};
use crate::types::Axis;
use crate::types::{ScalarType, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReorderError {
    #[error("kernel {0} has no grid-stride loop to reorder")]
    PatternNotFound(String),
    #[error("array {array} is both read and written with differing indices inside the grid-stride loop")]
    DependenceError { array: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Atom {
    Var(VarId),
    Param(u32),
    Builtin(u8, u8),
    Opaque(String),
}

/// Sum of monomials; each monomial is a sorted product of atoms.
#[derive(Debug, Clone, Default, PartialEq)]
struct Poly(BTreeMap<Vec<Atom>, i64>);

impl Poly {
    fn constant(c: i64) -> Poly {
        let mut p = Poly::default();
        if c != 0 {
            p.0.insert(Vec::new(), c);
        }
        p
    }

    fn atom(a: Atom) -> Poly {
        Poly(BTreeMap::from([(vec![a], 1)]))
    }

    fn add(mut self, o: &Poly, sign: i64) -> Poly {
        for (m, c) in &o.0 {
            let e = self.0.entry(m.clone()).or_insert(0);
            *e = e.wrapping_add(c.wrapping_mul(sign));
            if *e == 0 {
                self.0.remove(m);
            }
        }
        self
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut out = Poly::default();
        for (m1, c1) in &self.0 {
            for (m2, c2) in &o.0 {
                let mut m: Vec<Atom> = m1.iter().chain(m2).cloned().collect();
                m.sort();
                out = out.add(&Poly(BTreeMap::from([(m, c1.wrapping_mul(*c2))])), 1);
            }
        }
        out
    }
}

fn builtin_atom(b: Builtin) -> Atom {
    Atom::Builtin(b.var as u8, b.axis as u8)
}

struct Ctx<'a> {
    /// Definitions of locals that may be substituted at any use point.
    defs: &'a HashMap<VarId, Expr>,
    atoms: HashMap<Atom, Expr>,
}

impl Ctx<'_> {
    fn poly(&mut self, e: &Expr) -> Poly {
        if !e.ty.is_int() {
            return self.opaque(e);
        }
        match &e.kind {
            ExprKind::Const(v) => Poly::constant(v.as_i64()),
            ExprKind::Var(v) => match self.defs.get(&v.id) {
                Some(d) => {
                    let d = d.clone();
                    self.poly(&d)
                }
                None => {
                    self.atoms.insert(Atom::Var(v.id), e.clone());
                    Poly::atom(Atom::Var(v.id))
                }
            },
            ExprKind::Param(p) => {
                self.atoms.insert(Atom::Param(*p), e.clone());
                Poly::atom(Atom::Param(*p))
            }
            ExprKind::Builtin(b) => {
                self.atoms.insert(builtin_atom(*b), e.clone());
                Poly::atom(builtin_atom(*b))
            }
            ExprKind::Convert(inner) if inner.ty.is_int() => self.poly(inner),
            ExprKind::Binary { op: BinOp::Add, lhs, rhs } => {
                let r = self.poly(rhs);
                self.poly(lhs).add(&r, 1)
            }
            ExprKind::Binary { op: BinOp::Sub, lhs, rhs } => {
                let r = self.poly(rhs);
                self.poly(lhs).add(&r, -1)
            }
            ExprKind::Binary { op: BinOp::Mul, lhs, rhs } => {
                let l = self.poly(lhs);
                l.mul(&self.poly(rhs))
            }
            ExprKind::Unary { op: UnOp::Neg, expr } => Poly::default().add(&self.poly(expr), -1),
            _ => self.opaque(e),
        }
    }

    fn opaque(&mut self, e: &Expr) -> Poly {
        let a = Atom::Opaque(format!("{:?}", e));
        self.atoms.insert(a.clone(), e.clone());
        Poly::atom(a)
    }

    fn rebuild(&self, p: &Poly, ty: ScalarType) -> Expr {
        let mut acc: Option<Expr> = None;
        for (m, c) in &p.0 {
            let mut term: Option<Expr> = if *c == 1 && !m.is_empty() { None } else { Some(int_const(*c, ty)) };
            for a in m {
                let ae = self.atoms[a].clone().convert(ty);
                term = Some(match term {
                    None => ae,
                    Some(t) => bin(BinOp::Mul, t, ae),
                });
            }
            let term = term.expect("monomial is non-empty");
            acc = Some(match acc {
                None => term,
                Some(a) => bin(BinOp::Add, a, term),
            });
        }
        acc.unwrap_or_else(|| int_const(0, ty))
    }
}

fn int_const(c: i64, ty: ScalarType) -> Expr {
    Expr::constant(Value::I64(c).convert(ty))
}

fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    Expr { ty: lhs.ty, kind: ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) } }
}

fn mentions(e: &Expr, j: VarId) -> bool {
    let mut hit = false;
    e.walk(&mut |n| match &n.kind {
        ExprKind::Var(v) => hit |= v.id == j,
        ExprKind::Builtin(b) => hit |= b.var == BuiltinVar::ThreadIdx,
        _ => {}
    });
    hit
}

fn is_zero(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::Const(v) if v.ty().is_int() && v.as_i64() == 0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::Const(v) if v.ty().is_int() && v.as_i64() == 1)
}

/// Trip-count expressions are moved into the loop body, so they may only
/// read values that cannot change there.
fn is_stable(e: &Expr, defs: &HashMap<VarId, Expr>) -> bool {
    let mut ok = true;
    e.walk(&mut |n| match &n.kind {
        ExprKind::Var(v) => ok &= defs.contains_key(&v.id) && is_stable(&defs[&v.id], defs),
        ExprKind::Builtin(b) => ok &= b.var != BuiltinVar::ThreadIdx,
        ExprKind::Load { .. } | ExprKind::Warp { .. } | ExprKind::LaneRead { .. } => ok = false,
        _ => {}
    });
    ok
}

/// Tries to rewrite one index; returns `None` when it does not have the
/// grid-stride shape for counter `j`.
fn rewrite_index(index: &Expr, j: VarId, k: &Expr, defs: &HashMap<VarId, Expr>) -> Option<Expr> {
    let mut cx = Ctx { defs, atoms: HashMap::new() };
    let mut p = cx.poly(index);
    let tid = vec![builtin_atom(Builtin { var: BuiltinVar::ThreadIdx, axis: Axis::X })];
    let mut stride = vec![Atom::Var(j), builtin_atom(Builtin { var: BuiltinVar::BlockDim, axis: Axis::X })];
    stride.sort();
    if p.0.get(&tid) != Some(&1) || p.0.get(&stride) != Some(&1) {
        return None;
    }
    p.0.remove(&tid);
    p.0.remove(&stride);
    let varying = |a: &Atom| match a {
        Atom::Var(v) => *v == j,
        Atom::Builtin(v, _) => *v == BuiltinVar::ThreadIdx as u8,
        Atom::Opaque(_) => mentions(&cx.atoms[a], j),
        Atom::Param(_) => false,
    };
    if p.0.keys().any(|m| m.iter().any(varying)) {
        return None;
    }
    let ty = index.ty;
    let rest = cx.rebuild(&p, ty);
    let t = cx.atoms[&tid[0]].clone().convert(ty);
    let jv = cx.atoms[&Atom::Var(j)].clone().convert(ty);
    let chunk = bin(BinOp::Mul, t, k.clone().convert(ty));
    let base = if p.0.is_empty() { chunk } else { bin(BinOp::Add, rest, chunk) };
    Some(bin(BinOp::Add, base, jv))
}

#[derive(Debug)]
struct Access {
    param: u32,
    index: Expr,
    write: bool,
}

fn global_param(r: ArrayRef, kinds: &[ArrayKind]) -> Option<u32> {
    match r {
        ArrayRef::Global { param } => Some(param),
        ArrayRef::Named(i) => match kinds[i as usize] {
            ArrayKind::Param(p) => Some(p),
            _ => None,
        },
        ArrayRef::Shared(_) => None,
    }
}

fn collect_accesses(body: &[Stmt], kinds: &[ArrayKind]) -> Vec<Access> {
    let mut out = Vec::new();
    for s in body {
        s.walk_exprs(&mut |e| {
            if let ExprKind::Load { array, index } = &e.kind {
                if let Some(param) = global_param(*array, kinds) {
                    out.push(Access { param, index: (**index).clone(), write: false });
                }
            }
        });
        s.walk(&mut |st| match &st.kind {
            StmtKind::Store { array, index, .. } => {
                if let Some(param) = global_param(*array, kinds) {
                    out.push(Access { param, index: index.clone(), write: true });
                }
            }
            StmtKind::AtomicAdd { array, index, .. } | StmtKind::AtomicCas { array, index, .. } => {
                if let Some(param) = global_param(*array, kinds) {
                    out.push(Access { param, index: index.clone(), write: false });
                    out.push(Access { param, index: index.clone(), write: true });
                }
            }
            _ => {}
        });
    }
    out
}

/// Substitutable locals: assigned exactly once, from an expression without
/// loads whose operands are themselves substitutable, loop counters, params
/// or builtins.
fn substitutable(k: &MpmdKernel) -> HashMap<VarId, Expr> {
    let mut assigns: HashMap<VarId, Vec<Expr>> = HashMap::new();
    k.for_each_stmt(&mut |s| {
        if let StmtKind::Assign { var, value } = &s.kind {
            assigns.entry(var.id).or_default().push(value.clone());
        }
    });
    let mut defs: HashMap<VarId, Expr> = HashMap::new();
    loop {
        let mut changed = false;
        for (v, vals) in &assigns {
            if defs.contains_key(v) || vals.len() != 1 || vals[0].contains_load() {
                continue;
            }
            let mut ok = true;
            vals[0].walk(&mut |n| match &n.kind {
                ExprKind::Var(r) => ok &= k.vars[r.id as usize].is_counter || defs.contains_key(&r.id),
                ExprKind::Warp { .. } | ExprKind::LaneRead { .. } => ok = false,
                _ => {}
            });
            if ok {
                defs.insert(*v, vals[0].clone());
                changed = true;
            }
        }
        if !changed {
            return defs;
        }
    }
}

pub fn reorder_grid_stride(mut k: MpmdKernel) -> Result<MpmdKernel, ReorderError> {
    let defs = substitutable(&k);
    let kinds: Vec<ArrayKind> = k.arrays.iter().map(|a| a.kind).collect();
    let params: Vec<String> = k.params.iter().map(|p| p.name.clone()).collect();
    let mut rewritten = 0usize;
    let mut error = None;
    k.for_each_stmt_mut(&mut |s| {
        let StmtKind::For { counter, lo, hi, step, body } = &mut s.kind else { return };
        if error.is_some() || !is_zero(lo) || !is_one(step) || !is_stable(hi, &defs) {
            return;
        }
        let j = counter.id;
        let before = collect_accesses(body, &kinds);
        let mut touched = Vec::new();
        let mut fix = |array: ArrayRef, index: &mut Expr| {
            if let Some(p) = global_param(array, &kinds) {
                if let Some(new) = rewrite_index(index, j, hi, &defs) {
                    *index = new;
                    touched.push(p);
                }
            }
        };
        for st in body.iter_mut() {
            st.walk_exprs_mut(&mut |e| {
                if let ExprKind::Load { array, index } = &mut e.kind {
                    fix(*array, index);
                }
            });
            st.walk_mut(&mut |x| match &mut x.kind {
                StmtKind::Store { array, index, .. }
                | StmtKind::AtomicAdd { array, index, .. }
                | StmtKind::AtomicCas { array, index, .. } => fix(*array, index),
                _ => {}
            });
        }
        for p in &touched {
            let acc: Vec<&Access> = before.iter().filter(|a| a.param == *p).collect();
            let conflict =
                acc.iter().any(|w| w.write && acc.iter().any(|r| !r.write && r.index != w.index));
            if conflict {
                error = Some(ReorderError::DependenceError { array: params[*p as usize].clone() });
            }
        }
        rewritten += touched.len();
    });
    if let Some(e) = error {
        return Err(e);
    }
    if rewritten == 0 {
        return Err(ReorderError::PatternNotFound(k.name.clone()));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus;
    use crate::mpmd::{classify_accesses, compile};

    fn reorder(src: &str) -> Result<MpmdKernel, ReorderError> {
        reorder_grid_stride(compile(src, false, 32).unwrap())
    }

    #[test]
    fn histogram_index_becomes_chunked() {
        let k = reorder(corpus::HISTOGRAM).unwrap();
        let acc = classify_accesses(&k);
        let pix: Vec<_> = acc.iter().filter(|a| a.array == "pixels").collect();
        assert_eq!(pix.len(), 1);
        assert!(pix[0].offset.ends_with("threadIdx.x * k + j"), "{}", pix[0].offset);
        assert!(!pix[0].offset.contains("blockDim.x * j") && !pix[0].offset.contains("j * blockDim.x"));
    }

    #[test]
    fn plain_grid_stride_loop() {
        let src = "kernel h(pix: global i32[], hist: global i32[], k: i32) {
            for (j = 0; j < k; j += 1) { atomic_add(hist[pix[threadIdx.x + j * blockDim.x]], 1); } }";
        let k = reorder(src).unwrap();
        let acc = classify_accesses(&k);
        let pix = acc.iter().find(|a| a.array == "pix").unwrap();
        assert_eq!(pix.offset, "threadIdx.x * k + j");
    }

    #[test]
    fn fir_rewrites_input_and_output() {
        let k = reorder(corpus::FIR).unwrap();
        for a in classify_accesses(&k).iter().filter(|a| a.array != "coeff") {
            assert!(a.offset.contains("threadIdx.x * k"), "{a:?}");
        }
    }

    #[test]
    fn missing_idiom_is_reported() {
        assert_eq!(reorder(corpus::VEC_ADD).unwrap_err(), ReorderError::PatternNotFound("vecAdd".into()));
        assert!(matches!(reorder(corpus::DYNAMIC_REVERSE), Err(ReorderError::PatternNotFound(_))));
    }

    #[test]
    fn mutable_base_is_not_substituted() {
        let src = "kernel h(a: global i32[], k: i32) { let b: i32 = 0; b = 1;
            for (j = 0; j < k; j += 1) { a[b + threadIdx.x + j * blockDim.x] = 1; } }";
        let k = reorder(src).unwrap();
        let acc = classify_accesses(&k);
        assert_eq!(acc[0].offset, "b + threadIdx.x * k + j");
    }

    #[test]
    fn carried_dependence_is_rejected() {
        let src = "kernel h(a: global i32[], k: i32) {
            for (j = 0; j < k; j += 1) { a[threadIdx.x + j * blockDim.x] = a[0] + 1; } }";
        assert_eq!(reorder(src).unwrap_err(), ReorderError::DependenceError { array: "a".into() });
    }

    #[test]
    fn same_index_read_write_is_allowed() {
        let src = "kernel h(a: global i32[], k: i32) {
            for (j = 0; j < k; j += 1) { a[threadIdx.x + j * blockDim.x] = a[threadIdx.x + j * blockDim.x] + 1; } }";
        assert!(reorder(src).is_ok());
    }

    #[test]
    fn nonunit_step_is_not_matched() {
        let src = "kernel h(a: global i32[], k: i32) {
            for (j = 0; j < k; j += 2) { a[threadIdx.x + j * blockDim.x] = 1; } }";
        assert!(matches!(reorder(src), Err(ReorderError::PatternNotFound(_))));
    }
}
