//! Browser bindings: kernel listings, fetch schedules and the reordering
//! cache experiment. Each export returns text or a JSON string.

use blockfuse::bench::{corpus, run_reorder_experiment, CaseKind, ReorderSetup};
use blockfuse::cachesim::CacheConfig;
use blockfuse::mpmd::{compile_program, render_listing};
use blockfuse::runtime::{average_grain, simulate_schedule};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Sample {
    name: &'static str,
    source: &'static str,
    warp: bool,
}

pub fn samples_json() -> String {
    let list: Vec<Sample> = corpus::SOURCES
        .iter()
        .map(|&(name, source)| Sample { name, source, warp: name == "warp_reduce" })
        .collect();
    serde_json::to_string(&list).expect("samples serialize")
}

/// Listing of every kernel in `source`, or the first error.
pub fn listing(source: &str, warp: bool, warp_size: u32) -> Result<String, String> {
    let unit = blockfuse::lang::parse_unit(source).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for k in &unit {
        let m = compile_program(k, warp, warp_size).map_err(|e| e.to_string())?;
        out.push(render_listing(&m));
    }
    Ok(out.join("\n"))
}

/// `grain == 0` selects the average policy.
pub fn schedule_json(total_blocks: usize, grain: usize, pool: usize, block_cost: f64, fetch_cost: f64) -> Result<String, String> {
    if total_blocks == 0 || pool == 0 || total_blocks > 1 << 16 || pool > 256 {
        return Err("need 1..=65536 blocks and 1..=256 workers".into());
    }
    let grain = if grain == 0 { average_grain(total_blocks, pool) } else { grain };
    let s = simulate_schedule(total_blocks, grain, pool, block_cost.max(0.0), fetch_cost.max(0.0));
    serde_json::to_string(&s).map_err(|e| e.to_string())
}

pub fn reorder_json(case: &str, capacity: usize, line: usize, ways: usize) -> Result<String, String> {
    let kind: CaseKind = case.parse()?;
    let mut setup = ReorderSetup::for_case(kind).ok_or_else(|| format!("case `{case}` has no grid-stride loop"))?;
    setup.cache = CacheConfig::new(capacity, line, ways).map_err(|e| e.to_string())?;
    let r = run_reorder_experiment(&setup).map_err(|e| e.to_string())?;
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn samples() -> String {
    samples_json()
}

#[wasm_bindgen]
pub fn compile_listing(source: &str, warp: bool, warp_size: u32) -> Result<String, JsError> {
    listing(source, warp, warp_size).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fetch_schedule(total_blocks: usize, grain: usize, pool: usize, block_cost: f64, fetch_cost: f64) -> Result<String, JsError> {
    schedule_json(total_blocks, grain, pool, block_cost, fetch_cost).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn reorder_experiment(case: &str, capacity: usize, line: usize, ways: usize) -> Result<String, JsError> {
    reorder_json(case, capacity, line, ways).map_err(|e| JsError::new(&e))
}
