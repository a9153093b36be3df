//! Human-readable dump of a block-fused kernel.

use std::fmt::Write;

use super::{LaneStep, LoopShape, MpmdKernel, Section, UniformLoop};
use crate::ir::{ArrayKind, ArrayRef, Expr, ExprKind, SharedSlot, Stmt, StmtKind, Storage, VarRef};
use crate::lang::ast::{ParamType, UnOp};

pub fn render_listing(k: &MpmdKernel) -> String {
    let mut out = String::new();
    let params: Vec<String> = k
        .params
        .iter()
        .map(|p| match p.ptype {
            ParamType::Scalar(t) => format!("{}: {t}", p.name),
            ParamType::GlobalRef(t) => format!("{}: global {t}[]", p.name),
        })
        .collect();
    let _ = writeln!(out, "kernel {}({})", k.name, params.join(", "));
    if k.warp_mode {
        let _ = writeln!(out, "  warp mode: warp_size {}", k.warp_size);
    }
    if k.expanded_vars.is_empty() {
        let _ = writeln!(out, "  expanded: (none)");
    } else {
        let vs: Vec<String> = k.expanded_vars.iter().map(|v| format!("{}: {}[block_size]", v.name, v.ty)).collect();
        let _ = writeln!(out, "  expanded: {}", vs.join(", "));
    }
    if let Some(l) = &k.shared_layout {
        for s in &l.statics {
            let _ = writeln!(out, "  shared {} {}[{}] @ {} ({} bytes)", s.ty, s.name, s.len, s.offset_bytes, s.size_bytes);
        }
        if let Some((name, ty)) = &l.dynamic {
            let _ = writeln!(out, "  extern shared {ty} {name}[dynamic_shared_size / {}]", ty.size_bytes());
        }
    }
    let mut n = 0;
    sections(k, &k.sections, 0, &mut n, &mut out);
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn header<T>(k: &MpmdKernel, u: &UniformLoop<T>) -> String {
    let c = var_name(k, u.counter);
    format!("for ({c} = {}; {c} < {}; {c} += {})", render_expr(k, &u.lo), render_expr(k, &u.hi), render_expr(k, &u.step))
}

fn sections(k: &MpmdKernel, ss: &[Section], depth: usize, n: &mut usize, out: &mut String) {
    for s in ss {
        match s {
            Section::ThreadLoop { shape, steps: st, barrier_after } => {
                indent(out, depth);
                let tail = if *barrier_after { "  // barrier" } else { "" };
                let _ = writeln!(out, "section {n}:{tail}");
                *n += 1;
                match shape {
                    LoopShape::SingleThreadLoop => {
                        indent(out, depth + 1);
                        out.push_str("for (tid = 0; tid < block_size; tid += 1) {\n");
                        steps(k, st, depth + 2, out);
                        indent(out, depth + 1);
                        out.push_str("}\n");
                    }
                    LoopShape::WarpLaneLoops { warp_size } => {
                        indent(out, depth + 1);
                        let _ = writeln!(
                            out,
                            "for (warp = 0; warp < ceil(block_size / {warp_size}); warp += 1) {{"
                        );
                        steps(k, st, depth + 2, out);
                        indent(out, depth + 1);
                        out.push_str("}\n");
                    }
                }
            }
            Section::Uniform(u) => {
                indent(out, depth);
                let _ = writeln!(out, "uniform {} {{", header(k, u));
                sections(k, &u.body, depth + 1, n, out);
                indent(out, depth);
                out.push_str("}\n");
            }
        }
    }
}

fn steps(k: &MpmdKernel, st: &[LaneStep], depth: usize, out: &mut String) {
    let lanes = match k.warp_mode {
        true => format!("for (lane = 0; lane < {}; lane += 1) {{", k.warp_size),
        false => String::new(),
    };
    for s in st {
        match s {
            LaneStep::Code(b) => {
                if k.warp_mode {
                    indent(out, depth);
                    out.push_str(&lanes);
                    out.push('\n');
                    block(k, b, depth + 1, out);
                    indent(out, depth);
                    out.push_str("}\n");
                } else {
                    block(k, b, depth, out);
                }
            }
            LaneStep::Exchange(x) => {
                indent(out, depth);
                let delta = x.delta.as_ref().map(|d| format!(", {}", render_expr(k, d))).unwrap_or_default();
                let _ = writeln!(out, "exchange #{}: {}({}{delta})", x.id, x.op.name(), render_expr(k, &x.value));
            }
            LaneStep::Uniform(u) => {
                indent(out, depth);
                let _ = writeln!(out, "warp-uniform {} {{", header(k, u));
                steps(k, &u.body, depth + 1, out);
                indent(out, depth);
                out.push_str("}\n");
            }
        }
    }
}

fn block(k: &MpmdKernel, b: &[Stmt], depth: usize, out: &mut String) {
    for s in b {
        stmt(k, s, depth, out);
    }
}

fn stmt(k: &MpmdKernel, s: &Stmt, depth: usize, out: &mut String) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Assign { var, value } => {
            let _ = writeln!(out, "{} = {};", var_name(k, *var), render_expr(k, value));
        }
        StmtKind::Store { array, index, value } => {
            let _ = writeln!(out, "{}[{}] = {};", array_name(k, *array), render_expr(k, index), render_expr(k, value));
        }
        StmtKind::AtomicAdd { array, index, value } => {
            let _ =
                writeln!(out, "atomic_add({}[{}], {});", array_name(k, *array), render_expr(k, index), render_expr(k, value));
        }
        StmtKind::AtomicCas { array, index, compare, value } => {
            let _ = writeln!(
                out,
                "atomic_cas({}[{}], {}, {});",
                array_name(k, *array),
                render_expr(k, index),
                render_expr(k, compare),
                render_expr(k, value)
            );
        }
        StmtKind::If { cond, then_body, else_body } => {
            let _ = writeln!(out, "if ({}) {{", render_expr(k, cond));
            block(k, then_body, depth + 1, out);
            if !else_body.is_empty() {
                indent(out, depth);
                out.push_str("} else {\n");
                block(k, else_body, depth + 1, out);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::For { counter, lo, hi, step, body } => {
            let c = var_name(k, *counter);
            let _ = writeln!(
                out,
                "for ({c} = {}; {c} < {}; {c} += {}) {{",
                render_expr(k, lo),
                render_expr(k, hi),
                render_expr(k, step)
            );
            block(k, body, depth + 1, out);
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::Barrier => out.push_str("barrier;\n"),
    }
}

fn var_name(k: &MpmdKernel, v: VarRef) -> String {
    let name = &k.vars[v.id as usize].name;
    match v.storage {
        Storage::Expanded(_) => format!("{name}[tid]"),
        Storage::Private | Storage::Uniform => name.clone(),
    }
}

fn array_name(k: &MpmdKernel, r: ArrayRef) -> String {
    match r {
        ArrayRef::Named(i) => k.arrays[i as usize].name.clone(),
        ArrayRef::Global { param } => k.params[param as usize].name.clone(),
        ArrayRef::Shared(SharedSlot::Static(slot)) => k
            .arrays
            .iter()
            .find(|a| matches!(a.kind, ArrayKind::StaticShared { slot: s, .. } if s == slot))
            .map(|a| a.name.clone())
            .unwrap_or_else(|| format!("shared{slot}")),
        ArrayRef::Shared(SharedSlot::Dynamic) => k
            .arrays
            .iter()
            .find(|a| a.kind == ArrayKind::DynamicShared)
            .map(|a| a.name.clone())
            .unwrap_or_else(|| "dynamic_shared".into()),
    }
}

pub(crate) fn render_expr(k: &MpmdKernel, e: &Expr) -> String {
    match &e.kind {
        ExprKind::Const(v) => v.to_string(),
        ExprKind::Var(v) => var_name(k, *v),
        ExprKind::Param(p) => k.params[*p as usize].name.clone(),
        ExprKind::Builtin(b) => format!("{}.{}", b.var.name(), b.axis.name()),
        ExprKind::Load { array, index } => format!("{}[{}]", array_name(k, *array), render_expr(k, index)),
        ExprKind::Binary { op, lhs, rhs } => {
            let wrap = |child: &Expr, right: bool| {
                let s = render_expr(k, child);
                match &child.kind {
                    ExprKind::Binary { op: c, .. }
                        if c.precedence() < op.precedence() || (right && c.precedence() == op.precedence()) =>
                    {
                        format!("({s})")
                    }
                    _ => s,
                }
            };
            format!("{} {} {}", wrap(lhs, false), op.symbol(), wrap(rhs, true))
        }
        ExprKind::Unary { op, expr } => {
            let s = render_expr(k, expr);
            let s = if matches!(expr.kind, ExprKind::Binary { .. }) { format!("({s})") } else { s };
            match op {
                UnOp::Neg => format!("-{s}"),
                UnOp::Not => format!("!{s}"),
            }
        }
        ExprKind::Convert(inner) => format!("{}({})", e.ty, render_expr(k, inner)),
        ExprKind::Math { func, args } => {
            let a: Vec<String> = args.iter().map(|x| render_expr(k, x)).collect();
            format!("{}({})", format!("{func:?}").to_lowercase(), a.join(", "))
        }
        ExprKind::Warp { op, args } => {
            let a: Vec<String> = args.iter().map(|x| render_expr(k, x)).collect();
            format!("{}({})", op.name(), a.join(", "))
        }
        ExprKind::LaneRead { exchange } => format!("lane_result#{exchange}"),
    }
}
