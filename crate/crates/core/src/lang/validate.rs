use super::ast::{KernelProgram, Span};
use super::lower::lower;
use super::{Diagnostic, DiagnosticKind};
use crate::ir::{self, StmtKind, Uniformity};

/// Full check of one kernel: names, types, barrier placement, warp gating.
pub fn validate(k: &KernelProgram, warp_mode: bool) -> Vec<Diagnostic> {
    let (kernel, mut diags) = lower(k, warp_mode);
    diags.extend(check_placement(&kernel));
    diags
}

/// Barriers and warp exchanges must be reached by every thread of a block
/// together: they may only sit at the top level of the kernel or directly
/// inside (possibly nested) loops with block-uniform bounds.
pub fn check_placement(kernel: &ir::Kernel) -> Vec<Diagnostic> {
    let uniformity = Uniformity::analyze(kernel);
    let mut out = Vec::new();
    walk(&kernel.body, true, &uniformity, &mut out);
    out
}

fn walk(body: &[ir::Stmt], legal: bool, u: &Uniformity, out: &mut Vec<Diagnostic>) {
    for s in body {
        match &s.kind {
            StmtKind::Barrier if !legal => out.push(divergent_barrier(s.span)),
            StmtKind::For { lo, hi, step, body, .. } => {
                if [lo, hi, step].iter().any(|e| e.contains_warp()) {
                    out.push(Diagnostic {
                        kind: DiagnosticKind::WarpInDivergentContext,
                        span: s.span,
                        message: "warp intrinsics are not allowed in loop bounds".into(),
                    });
                }
                walk(body, legal && u.is_uniform_for(s), u, out);
            }
            StmtKind::If { cond, then_body, else_body } => {
                if !legal && cond.contains_warp() {
                    out.push(divergent_warp(s.span));
                }
                walk(then_body, false, u, out);
                walk(else_body, false, u, out);
            }
            _ => {
                if !legal && s.own_exprs().iter().any(|e| e.contains_warp()) {
                    out.push(divergent_warp(s.span));
                }
            }
        }
    }
}

fn divergent_barrier(span: Span) -> Diagnostic {
    Diagnostic {
        kind: DiagnosticKind::BarrierInDivergentContext,
        span,
        message: "barrier must be at kernel top level or inside loops with block-uniform bounds".into(),
    }
}

fn divergent_warp(span: Span) -> Diagnostic {
    Diagnostic {
        kind: DiagnosticKind::WarpInDivergentContext,
        span,
        message: "warp intrinsics must be reached by all lanes: use them outside thread-dependent control flow".into(),
    }
}
