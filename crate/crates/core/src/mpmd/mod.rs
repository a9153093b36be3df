//! Block-fused (MPMD) form of a kernel.
//!
//! A kernel body is cut at every barrier into consecutive thread loops.
//! One worker then runs a whole block by executing the thread loops in order,
//! which realizes the barrier without any inter-thread synchronization.

mod listing;
mod memory;
mod reorder;
mod transform;

use serde::Serialize;

use crate::ir::{ArraySym, Expr, Stmt, VarId, VarInfo, VarRef, WarpOp};
use crate::lang::ast::{Param, Span};
use crate::types::ScalarType;

pub use listing::render_listing;
pub use memory::{classify_accesses, map_memory, AccessClass, SharedLayout, StaticSharedSlot};
pub use reorder::{reorder_grid_stride, ReorderError};
pub use transform::{transform, TransformError};

pub const DEFAULT_WARP_SIZE: u32 = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpmdKernel {
    pub name: String,
    pub params: Vec<Param>,
    pub arrays: Vec<ArraySym>,
    pub vars: Vec<VarInfo>,
    pub sections: Vec<Section>,
    pub expanded_vars: Vec<ExpandedVar>,
    pub exchanges: Vec<WarpOp>,
    /// Filled in by [`map_memory`].
    pub shared_layout: Option<SharedLayout>,
    pub warp_mode: bool,
    pub warp_size: u32,
    pub has_atomics: bool,
    pub instruction_estimate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandedVar {
    pub var: VarId,
    pub name: String,
    pub ty: ScalarType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopShape {
    /// `for tid in 0..block_size`
    SingleThreadLoop,
    /// `for warp in 0..ceil(block_size / warp_size) { for lane in 0..warp_size }`
    WarpLaneLoops { warp_size: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    ThreadLoop {
        shape: LoopShape,
        steps: Vec<LaneStep>,
        /// The section ends at a barrier of the source kernel.
        barrier_after: bool,
    },
    /// A block-uniform loop whose body contains barriers; runs once per
    /// block, outside the thread loops.
    Uniform(UniformLoop<Section>),
}

/// A piece of a thread loop. Outside warp mode a thread loop holds a single
/// `Code` step.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneStep {
    Code(Vec<Stmt>),
    /// Every lane publishes a value into lane buffer `id`; later `LaneRead`s
    /// pick the result.
    Exchange(Exchange),
    /// Warp-uniform loop containing exchanges; runs once per warp.
    Uniform(UniformLoop<LaneStep>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformLoop<T> {
    pub counter: VarRef,
    pub lo: Expr,
    pub hi: Expr,
    pub step: Expr,
    pub body: Vec<T>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exchange {
    pub id: u32,
    pub op: WarpOp,
    pub value: Expr,
    /// Source-lane offset, `shfl_down` only.
    pub delta: Option<Expr>,
    pub span: Span,
}

impl MpmdKernel {
    /// Number of thread-loop sections, counting those nested in uniform loops.
    pub fn thread_loop_count(&self) -> usize {
        fn count(ss: &[Section]) -> usize {
            ss.iter()
                .map(|s| match s {
                    Section::ThreadLoop { .. } => 1,
                    Section::Uniform(u) => count(&u.body),
                })
                .sum()
        }
        count(&self.sections)
    }

    pub fn expanded_names(&self) -> Vec<&str> {
        self.expanded_vars.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn is_memory_mapped(&self) -> bool {
        self.shared_layout.is_some()
    }

    /// Visits every IR statement held in the sections.
    pub fn for_each_stmt<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        fn steps<'a>(ss: &'a [LaneStep], f: &mut dyn FnMut(&'a Stmt)) {
            for s in ss {
                match s {
                    LaneStep::Code(b) => b.iter().for_each(|st| st.walk(f)),
                    LaneStep::Exchange(_) => {}
                    LaneStep::Uniform(u) => steps(&u.body, f),
                }
            }
        }
        fn sections<'a>(ss: &'a [Section], f: &mut dyn FnMut(&'a Stmt)) {
            for s in ss {
                match s {
                    Section::ThreadLoop { steps: st, .. } => steps(st, f),
                    Section::Uniform(u) => sections(&u.body, f),
                }
            }
        }
        sections(&self.sections, f);
    }

    /// Visits every expression (statement expressions, exchange operands and
    /// uniform loop headers).
    pub fn for_each_expr_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        fn header<T>(u: &mut UniformLoop<T>, f: &mut dyn FnMut(&mut Expr)) {
            u.lo.walk_mut(f);
            u.hi.walk_mut(f);
            u.step.walk_mut(f);
        }
        fn steps(ss: &mut [LaneStep], f: &mut dyn FnMut(&mut Expr)) {
            for s in ss {
                match s {
                    LaneStep::Code(b) => b.iter_mut().for_each(|st| st.walk_exprs_mut(f)),
                    LaneStep::Exchange(x) => {
                        x.value.walk_mut(f);
                        if let Some(d) = &mut x.delta {
                            d.walk_mut(f);
                        }
                    }
                    LaneStep::Uniform(u) => {
                        header(u, f);
                        steps(&mut u.body, f);
                    }
                }
            }
        }
        fn sections(ss: &mut [Section], f: &mut dyn FnMut(&mut Expr)) {
            for s in ss {
                match s {
                    Section::ThreadLoop { steps: st, .. } => steps(st, f),
                    Section::Uniform(u) => {
                        header(u, f);
                        sections(&mut u.body, f);
                    }
                }
            }
        }
        sections(&mut self.sections, f);
    }

    /// Visits every statement mutably.
    pub fn for_each_stmt_mut(&mut self, f: &mut dyn FnMut(&mut Stmt)) {
        fn steps(ss: &mut [LaneStep], f: &mut dyn FnMut(&mut Stmt)) {
            for s in ss {
                match s {
                    LaneStep::Code(b) => b.iter_mut().for_each(|st| st.walk_mut(f)),
                    LaneStep::Exchange(_) => {}
                    LaneStep::Uniform(u) => steps(&mut u.body, f),
                }
            }
        }
        fn sections(ss: &mut [Section], f: &mut dyn FnMut(&mut Stmt)) {
            for s in ss {
                match s {
                    Section::ThreadLoop { steps: st, .. } => steps(st, f),
                    Section::Uniform(u) => sections(&mut u.body, f),
                }
            }
        }
        sections(&mut self.sections, f);
    }
}

/// Parse, validate, transform and memory-map a single kernel source.
pub fn compile(source: &str, warp_mode: bool, warp_size: u32) -> Result<MpmdKernel, crate::Error> {
    let k = crate::lang::parse(source)?;
    compile_program(&k, warp_mode, warp_size)
}

pub fn compile_program(
    k: &crate::lang::KernelProgram,
    warp_mode: bool,
    warp_size: u32,
) -> Result<MpmdKernel, crate::Error> {
    let diags = crate::lang::validate(k, warp_mode);
    if !diags.is_empty() {
        return Err(crate::Error::Invalid { kernel: k.name.clone(), diagnostics: diags });
    }
    let m = transform(k, warp_mode, warp_size)?;
    Ok(map_memory(m))
}
