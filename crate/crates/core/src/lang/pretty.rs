//! Source printer. `parse(print(k))` is structurally equal to `k`.

use std::fmt::Write;

use super::ast::*;

pub fn print_kernel(k: &KernelProgram) -> String {
    let mut out = String::new();
    let params: Vec<String> = k.params.iter().map(|p| format!("{}: {}", p.name, p.ptype)).collect();
    let _ = writeln!(out, "kernel {}({}) {{", k.name, params.join(", "));
    for d in &k.shared {
        match d.len {
            Some(len) => {
                let _ = writeln!(out, "  shared {} {}[{}];", d.ty, d.name, len);
            }
            None => {
                let _ = writeln!(out, "  extern shared {} {}[];", d.ty, d.name);
            }
        }
    }
    print_stmts(&mut out, &k.body.stmts, 1);
    out.push_str("}\n");
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn print_stmts(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        print_stmt(out, s, depth);
    }
}

fn print_block(out: &mut String, b: &Block, depth: usize) {
    out.push_str("{\n");
    print_stmts(out, &b.stmts, depth + 1);
    indent(out, depth);
    out.push('}');
}

pub fn print_lvalue(lv: &LValue) -> String {
    match lv {
        LValue::Var { name, .. } => name.clone(),
        LValue::Index { array, index, .. } => format!("{}[{}]", array, print_expr(index)),
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::LocalDecl { name, ty, init } => {
            let _ = writeln!(out, "let {}: {} = {};", name, ty, print_expr(init));
        }
        StmtKind::Assign { target, value } => {
            let _ = writeln!(out, "{} = {};", print_lvalue(target), print_expr(value));
        }
        StmtKind::If { cond, then_block, else_block } => {
            let _ = write!(out, "if ({}) ", print_expr(cond));
            print_block(out, then_block, depth);
            if let Some(e) = else_block {
                out.push_str(" else ");
                print_block(out, e, depth);
            }
            out.push('\n');
        }
        StmtKind::For { counter, lo, hi, step, body } => {
            let _ = write!(
                out,
                "for ({c} = {}; {c} < {}; {c} += {}) ",
                print_expr(lo),
                print_expr(hi),
                print_expr(step),
                c = counter
            );
            print_block(out, body, depth);
            out.push('\n');
        }
        StmtKind::Barrier => out.push_str("barrier;\n"),
        StmtKind::Atomic { kind, target, operand, replacement } => {
            let name = match kind {
                AtomicKind::Add => "atomic_add",
                AtomicKind::Cas => "atomic_cas",
            };
            let _ = write!(out, "{}({}, {}", name, print_lvalue(target), print_expr(operand));
            if let Some(r) = replacement {
                let _ = write!(out, ", {}", print_expr(r));
            }
            out.push_str(");\n");
        }
        StmtKind::Noop => out.push_str(";\n"),
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

fn write_expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::IntLit(v) => {
            let _ = write!(out, "{v}");
        }
        ExprKind::FloatLit(v) => {
            let _ = write!(out, "{v:?}");
        }
        ExprKind::Var(n) => out.push_str(n),
        ExprKind::Builtin(b) => {
            let _ = write!(out, "{b}");
        }
        ExprKind::Index { array, index } => {
            out.push_str(array);
            out.push('[');
            write_expr(out, index);
            out.push(']');
        }
        ExprKind::Binary { op, lhs, rhs } => {
            write_operand(out, lhs, op.precedence(), false);
            let _ = write!(out, " {} ", op.symbol());
            write_operand(out, rhs, op.precedence(), true);
        }
        ExprKind::Unary { op, expr } => {
            out.push(match op {
                UnOp::Neg => '-',
                UnOp::Not => '!',
            });
            let needs_parens = matches!(expr.kind, ExprKind::Binary { .. })
                || matches!(expr.kind, ExprKind::Unary { op: UnOp::Neg, .. }) && *op == UnOp::Neg;
            if needs_parens {
                out.push('(');
                write_expr(out, expr);
                out.push(')');
            } else {
                write_expr(out, expr);
            }
        }
        ExprKind::Call { func, args } => {
            out.push_str(func.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
    }
}

fn write_operand(out: &mut String, e: &Expr, parent_prec: u8, is_rhs: bool) {
    let needs_parens = match &e.kind {
        ExprKind::Binary { op, .. } => op.precedence() < parent_prec || (is_rhs && op.precedence() == parent_prec),
        _ => false,
    };
    if needs_parens {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}
