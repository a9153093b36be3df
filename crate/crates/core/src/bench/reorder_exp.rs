//! Original versus reordered access order under the cache model.

use std::collections::HashMap;

use serde::Serialize;

use super::cases::{BenchCase, CaseKind};
use crate::cachesim::{simulate, CacheConfig, CacheReport};
use crate::exec::{trace_accesses, DeviceArena, Handle, MemoryTrace};
use crate::host::{Download, ScriptOutcome};
use crate::mpmd::{reorder_grid_stride, MpmdKernel};
use crate::types::{Dim3, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReorderSetup {
    pub case: BenchCase,
    pub cache: CacheConfig,
}

impl ReorderSetup {
    /// 16 blocks of 256 threads, 64 pixels per thread: 1 MiB of pixels
    /// against a 32 KiB, 64 B line, 8-way cache.
    pub fn histogram() -> ReorderSetup {
        let case = BenchCase { kind: CaseKind::Histogram, grid: 16, block: 256, k: 64, nbins: 64, taps: 1, seed: 7 };
        ReorderSetup { case, cache: CacheConfig { capacity: 32 * 1024, line_size: 64, associativity: 8 } }
    }

    /// The same layout through the FIR stencil, 4 taps.
    pub fn fir() -> ReorderSetup {
        let case = BenchCase { kind: CaseKind::Fir, grid: 16, block: 256, k: 64, nbins: 1, taps: 4, seed: 7 };
        ReorderSetup { case, cache: CacheConfig { capacity: 32 * 1024, line_size: 64, associativity: 8 } }
    }

    /// A histogram whose whole working set fits in the cache.
    pub fn histogram_in_cache() -> ReorderSetup {
        let case = BenchCase { kind: CaseKind::Histogram, grid: 2, block: 32, k: 4, nbins: 16, taps: 1, seed: 7 };
        ReorderSetup { case, cache: CacheConfig { capacity: 32 * 1024, line_size: 64, associativity: 8 } }
    }

    pub fn for_case(kind: CaseKind) -> Option<ReorderSetup> {
        match kind {
            CaseKind::Histogram => Some(ReorderSetup::histogram()),
            CaseKind::Fir => Some(ReorderSetup::fir()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub trace_events: usize,
    pub cache: CacheReport,
    pub oracle_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReorderReport {
    pub case: String,
    pub working_set_bytes: usize,
    pub cache: CacheConfig,
    pub original: VariantReport,
    pub reordered: VariantReport,
    /// Original load misses minus reordered load misses.
    pub load_miss_delta: i64,
}

fn traced(case: &BenchCase, k: &MpmdKernel) -> Result<(MemoryTrace, DeviceArena, HashMap<String, Handle>), crate::Error> {
    let arena = DeviceArena::new();
    let buffers = case.upload_inputs(&arena);
    let args = case.launch_args(&k.params, &buffers, &arena)?;
    let trace = trace_accesses(k, Dim3::linear(case.grid), Dim3::linear(case.block), &args, case.dynamic_shared_bytes())?;
    Ok((trace, arena, buffers))
}

/// Single-worker trace of `case`, optionally with grid-stride loops reordered.
pub fn case_trace(case: &BenchCase, reordered: bool) -> Result<MemoryTrace, crate::Error> {
    let set = case.kernel_set()?;
    let mut k = set.kernel(case.kind.kernel_name()).expect("case kernel").as_ref().clone();
    if reordered {
        k = reorder_grid_stride(k)?;
    }
    Ok(traced(case, &k)?.0)
}

fn run_variant(case: &BenchCase, k: &MpmdKernel, cache: CacheConfig) -> Result<VariantReport, crate::Error> {
    let (trace, arena, buffers) = traced(case, k)?;
    let report = simulate(&trace, cache)?;
    let mut outcome = ScriptOutcome::default();
    for out in case.kind.outputs() {
        let h = buffers[*out];
        let values: Vec<Value> = arena.download(h).map_err(|e| crate::Error::Other(e.to_string()))?;
        outcome.downloads.push(Download { line: 0, buf: out.to_string(), sink: "-".into(), values });
    }
    Ok(VariantReport { trace_events: trace.len(), cache: report, oracle_passed: case.check_oracle(&outcome).is_ok() })
}

pub fn run_reorder_experiment(setup: &ReorderSetup) -> Result<ReorderReport, crate::Error> {
    setup.cache.validate()?;
    let case = &setup.case;
    let set = case.kernel_set()?;
    let original = set.kernel(case.kind.kernel_name()).expect("case kernel").as_ref().clone();
    let reordered = reorder_grid_stride(original.clone())?;
    let o = run_variant(case, &original, setup.cache)?;
    let r = run_variant(case, &reordered, setup.cache)?;
    Ok(ReorderReport {
        case: case.kind.name().to_string(),
        working_set_bytes: case.working_set_bytes(),
        cache: setup.cache,
        load_miss_delta: o.cache.load_misses as i64 - r.cache.load_misses as i64,
        original: o,
        reordered: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_histogram_both_variants_pass() {
        let r = run_reorder_experiment(&ReorderSetup::histogram_in_cache()).unwrap();
        assert!(r.original.oracle_passed && r.reordered.oracle_passed);
        assert_eq!(r.original.trace_events, r.reordered.trace_events);
        assert_eq!(r.load_miss_delta, 0);
    }
}
