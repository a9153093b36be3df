//! Serial race detector: runs the grid once in ascending and once in
//! descending block order and reports buffers whose final contents differ.
//! Kernels whose blocks communicate only through atomics on integers or
//! through disjoint writes produce identical results in both orders.

use serde::Serialize;

use super::{run_block, ArgValue, BlockContext, Trap};
use crate::lang::ast::ParamType;
use crate::mpmd::MpmdKernel;
use crate::types::{Dim3, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RaceDiff {
    pub param: String,
    pub differing_elements: usize,
    pub first_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RaceReport {
    pub diffs: Vec<RaceDiff>,
}

impl RaceReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

fn run_order(
    k: &MpmdKernel,
    grid: Dim3,
    block: Dim3,
    args: &[ArgValue],
    dyn_bytes: usize,
    order: impl Iterator<Item = usize>,
) -> Result<(), Trap> {
    for b in order {
        let mut ctx = BlockContext::new(grid.delinearize(b), block, grid, args, dyn_bytes);
        run_block(k, &mut ctx).map_err(|mut t| {
            t.block = Some(b);
            t
        })?;
    }
    Ok(())
}

/// Leaves the buffers in the state of the ascending-order run.
pub fn detect_races(
    k: &MpmdKernel,
    grid: Dim3,
    block: Dim3,
    args: &[ArgValue],
    dynamic_shared_bytes: usize,
) -> Result<RaceReport, Trap> {
    let initial: Vec<Option<Vec<Value>>> = args.iter().map(|a| a.buffer().map(|b| b.to_values())).collect();
    let restore = |snap: &[Option<Vec<Value>>]| {
        for (a, s) in args.iter().zip(snap) {
            if let (Some(b), Some(s)) = (a.buffer(), s) {
                b.fill(s);
            }
        }
    };
    let n = grid.count();
    run_order(k, grid, block, args, dynamic_shared_bytes, (0..n).rev())?;
    let reverse: Vec<Option<Vec<Value>>> = args.iter().map(|a| a.buffer().map(|b| b.to_values())).collect();
    restore(&initial);
    run_order(k, grid, block, args, dynamic_shared_bytes, 0..n)?;

    let mut report = RaceReport::default();
    for (i, (a, rev)) in args.iter().zip(&reverse).enumerate() {
        let (Some(b), Some(rev)) = (a.buffer(), rev) else { continue };
        if !matches!(k.params.get(i).map(|p| p.ptype), Some(ParamType::GlobalRef(_))) {
            continue;
        }
        let fwd = b.to_values();
        let diff: Vec<usize> = (0..fwd.len()).filter(|&j| !fwd[j].bit_eq(rev[j])).collect();
        if let Some(&first_index) = diff.first() {
            report.diffs.push(RaceDiff { param: k.params[i].name.clone(), differing_elements: diff.len(), first_index });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus;
    use crate::exec::DeviceArena;
    use crate::mpmd::compile;
    use crate::types::ScalarType;

    #[test]
    fn histogram_is_race_free() {
        let k = compile(corpus::HISTOGRAM, false, 32).unwrap();
        let arena = DeviceArena::new();
        let pix = arena.get(arena.alloc(ScalarType::I32, 64)).unwrap();
        pix.fill(&(0..64).map(|i| Value::I32(i % 5)).collect::<Vec<_>>());
        let bins = arena.get(arena.alloc(ScalarType::I32, 5)).unwrap();
        let args = [ArgValue::Buffer(pix), ArgValue::Buffer(bins.clone()), ArgValue::Scalar(Value::I32(4)), ArgValue::Scalar(Value::I32(5))];
        let r = detect_races(&k, Dim3::linear(2), Dim3::linear(8), &args, 0).unwrap();
        assert!(r.is_clean());
        let counts: Vec<i64> = bins.to_values().iter().map(|v| v.as_i64()).collect();
        assert_eq!(counts, vec![13, 13, 13, 13, 12]);
    }

    #[test]
    fn racing_plain_writes_are_reported() {
        let k = compile("kernel k(x: global i32[]) { x[0] = blockIdx.x; }", false, 32).unwrap();
        let arena = DeviceArena::new();
        let x = arena.get(arena.alloc(ScalarType::I32, 1)).unwrap();
        let r = detect_races(&k, Dim3::linear(4), Dim3::linear(1), &[ArgValue::Buffer(x.clone())], 0).unwrap();
        assert_eq!(r.diffs, vec![RaceDiff { param: "x".into(), differing_elements: 1, first_index: 0 }]);
        assert_eq!(x.load(0), Value::I32(3));
    }
}
