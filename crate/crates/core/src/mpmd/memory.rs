//! Memory mapping: every array reference becomes either a device-arena
//! buffer reached through a parameter or a per-block shared buffer.

use serde::Serialize;

use super::MpmdKernel;
use crate::ir::{ArrayKind, ArrayRef, ExprKind, SharedSlot, StmtKind};
use crate::types::ScalarType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StaticSharedSlot {
    pub name: String,
    pub ty: ScalarType,
    pub len: u32,
    pub offset_bytes: usize,
    pub size_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SharedLayout {
    pub statics: Vec<StaticSharedSlot>,
    /// Total bytes of static shared memory per block.
    pub static_bytes: usize,
    /// The `extern shared` array, sized at launch.
    pub dynamic: Option<(String, ScalarType)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessClass {
    Global { param: u32 },
    SharedStatic { slot: u32 },
    SharedDynamic,
}

/// One array access site after mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassifiedAccess {
    pub array: String,
    pub class: AccessClass,
    /// Element offset expression, rendered.
    pub offset: String,
    pub write: bool,
}

pub fn map_memory(mut k: MpmdKernel) -> MpmdKernel {
    let mut layout = SharedLayout::default();
    for a in &k.arrays {
        match a.kind {
            ArrayKind::StaticShared { len, .. } => {
                let size = len as usize * a.ty.size_bytes();
                layout.statics.push(StaticSharedSlot {
                    name: a.name.clone(),
                    ty: a.ty,
                    len,
                    offset_bytes: layout.static_bytes,
                    size_bytes: size,
                });
                layout.static_bytes += size;
            }
            ArrayKind::DynamicShared => layout.dynamic = Some((a.name.clone(), a.ty)),
            ArrayKind::Param(_) => {}
        }
    }
    let kinds: Vec<ArrayKind> = k.arrays.iter().map(|a| a.kind).collect();
    let map = |r: &mut ArrayRef| {
        if let ArrayRef::Named(i) = *r {
            *r = match kinds[i as usize] {
                ArrayKind::Param(p) => ArrayRef::Global { param: p },
                ArrayKind::StaticShared { slot, .. } => ArrayRef::Shared(SharedSlot::Static(slot)),
                ArrayKind::DynamicShared => ArrayRef::Shared(SharedSlot::Dynamic),
            };
        }
    };
    k.for_each_stmt_mut(&mut |s| match &mut s.kind {
        StmtKind::Store { array, .. } | StmtKind::AtomicAdd { array, .. } | StmtKind::AtomicCas { array, .. } => map(array),
        _ => {}
    });
    k.for_each_expr_mut(&mut |e| {
        if let ExprKind::Load { array, .. } = &mut e.kind {
            map(array);
        }
    });
    k.shared_layout = Some(layout);
    k
}

fn class_of(k: &MpmdKernel, r: ArrayRef) -> (String, AccessClass) {
    match r {
        ArrayRef::Global { param } => (k.params[param as usize].name.clone(), AccessClass::Global { param }),
        ArrayRef::Shared(SharedSlot::Static(slot)) => {
            let name = k.shared_layout.as_ref().map(|l| l.statics[slot as usize].name.clone()).unwrap_or_default();
            (name, AccessClass::SharedStatic { slot })
        }
        ArrayRef::Shared(SharedSlot::Dynamic) => {
            let name = k.shared_layout.as_ref().and_then(|l| l.dynamic.as_ref()).map(|d| d.0.clone()).unwrap_or_default();
            (name, AccessClass::SharedDynamic)
        }
        ArrayRef::Named(i) => panic!("array {} not memory-mapped", k.arrays[i as usize].name),
    }
}

/// Lists every array access site of a mapped kernel in program order.
pub fn classify_accesses(k: &MpmdKernel) -> Vec<ClassifiedAccess> {
    let mut out = Vec::new();
    let mut k2 = k.clone();
    let push = |out: &mut Vec<ClassifiedAccess>, r: ArrayRef, index: &crate::ir::Expr, write: bool| {
        let (array, class) = class_of(k, r);
        out.push(ClassifiedAccess { array, class, offset: super::listing::render_expr(k, index), write });
    };
    // Loads are collected from a clone so that one mutable expression walk
    // covers statement operands, exchange operands and loop headers alike.
    k2.for_each_expr_mut(&mut |e| {
        if let ExprKind::Load { array, index } = &e.kind {
            push(&mut out, *array, index, false);
        }
    });
    k.for_each_stmt(&mut |s| match &s.kind {
        StmtKind::Store { array, index, .. } => push(&mut out, *array, index, true),
        StmtKind::AtomicAdd { array, index, .. } | StmtKind::AtomicCas { array, index, .. } => {
            push(&mut out, *array, index, false);
            push(&mut out, *array, index, true);
        }
        _ => {}
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus;
    use crate::mpmd::compile;

    #[test]
    fn dynamic_reverse_classification() {
        let k = compile(corpus::DYNAMIC_REVERSE, false, 32).unwrap();
        let acc = classify_accesses(&k);
        assert!(acc.contains(&ClassifiedAccess {
            array: "s".into(),
            class: AccessClass::SharedDynamic,
            offset: "t[tid]".into(),
            write: true
        }));
        assert!(acc.contains(&ClassifiedAccess {
            array: "d".into(),
            class: AccessClass::Global { param: 0 },
            offset: "t[tid]".into(),
            write: false
        }));
        let layout = k.shared_layout.unwrap();
        assert_eq!(layout.dynamic, Some(("s".into(), ScalarType::I32)));
        assert_eq!(layout.static_bytes, 0);
    }

    #[test]
    fn static_shared_layout_size() {
        let k = compile("kernel k(o: global f32[]) { shared f32 buf[128]; buf[threadIdx.x] = 1.0; o[0] = buf[0]; }", false, 32)
            .unwrap();
        let layout = k.shared_layout.as_ref().unwrap();
        assert_eq!(layout.static_bytes, 512);
        assert_eq!(layout.statics[0].offset_bytes, 0);
        assert!(classify_accesses(&k).iter().any(|a| a.class == AccessClass::SharedStatic { slot: 0 }));
    }

    #[test]
    fn two_globals_get_distinct_classes() {
        let k = compile("kernel k(a: global i32[], b: global i32[]) { a[0] = b[1]; }", false, 32).unwrap();
        let acc = classify_accesses(&k);
        let a: Vec<_> = acc.iter().filter(|x| x.array == "a").map(|x| x.class).collect();
        let b: Vec<_> = acc.iter().filter(|x| x.array == "b").map(|x| x.class).collect();
        assert_eq!(a, vec![AccessClass::Global { param: 0 }]);
        assert_eq!(b, vec![AccessClass::Global { param: 1 }]);
    }

    #[test]
    fn no_named_refs_remain() {
        for (_, src) in corpus::SOURCES {
            let warp = src.contains("shfl_down");
            let k = compile(src, warp, 32).unwrap();
            let mut named = 0;
            k.for_each_stmt(&mut |s| {
                s.walk_exprs(&mut |e| {
                    if let ExprKind::Load { array: ArrayRef::Named(_), .. } = e.kind {
                        named += 1;
                    }
                });
                if let StmtKind::Store { array: ArrayRef::Named(_), .. } = s.kind {
                    named += 1;
                }
            });
            assert_eq!(named, 0);
        }
    }
}
