//! Grain-size sweeps over one corpus case.

use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::cases::{run_on_runtime, BenchCase};
use crate::exec::DeviceArena;
use crate::runtime::{simulate_schedule, FetchPolicy, Runtime, RuntimeConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    pub pool: usize,
    pub grains: Vec<usize>,
    pub repeats: usize,
    /// Sleep before every block, so workers overlap the way they would on
    /// heavy blocks and idle-worker counts become reproducible.
    pub block_delay: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub grain: usize,
    pub fetch_count: usize,
    pub expected_fetch_count: usize,
    pub blocks_executed: usize,
    /// Most workers left without blocks in any repeat.
    pub idle_workers: usize,
    /// Idle workers in the deterministic schedule model.
    pub modeled_idle_workers: usize,
    pub median_wall_ms: f64,
    pub oracle_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub case: String,
    pub total_blocks: usize,
    pub block_size: u32,
    pub pool: usize,
    pub repeats: usize,
    pub rows: Vec<SweepRow>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Runs the case `repeats` times per grain on a fresh pool. Any oracle
/// mismatch aborts the sweep.
pub fn run_sweep(case: &BenchCase, opts: &SweepOptions) -> Result<SweepReport, crate::Error> {
    let set = case.kernel_set()?;
    let program = case.program(&set)?;
    let expected = case.oracle();
    let total = case.grid as usize;
    let mut rows = Vec::with_capacity(opts.grains.len());
    for &grain in &opts.grains {
        let grain = grain.clamp(1, total.max(1));
        let cfg = RuntimeConfig {
            policy: FetchPolicy::Fixed(grain),
            block_delay: opts.block_delay,
            ..RuntimeConfig::with_pool(opts.pool)
        };
        let rt = Runtime::new(cfg, Arc::new(DeviceArena::new()));
        let mut walls = Vec::new();
        let mut row = SweepRow {
            grain,
            fetch_count: 0,
            expected_fetch_count: total.div_ceil(grain),
            blocks_executed: 0,
            idle_workers: 0,
            modeled_idle_workers: simulate_schedule(total, grain, opts.pool, 1.0, 0.0).idle_workers,
            median_wall_ms: 0.0,
            oracle_passed: true,
        };
        for rep in 0..opts.repeats.max(1) {
            let run = run_on_runtime(&program, &set, &rt)?;
            case.check(&expected, &run.outcome).map_err(|mut m| {
                m.case = format!("{} (grain {grain}, repeat {rep}, seed {})", m.case, case.seed);
                crate::Error::Oracle(Box::new(m))
            })?;
            walls.push(run.wall.as_secs_f64() * 1e3);
            let r = run.reports.last().ok_or_else(|| crate::Error::Other("case launched nothing".into()))?;
            row.fetch_count = r.fetch_count;
            row.blocks_executed = r.blocks_executed;
            row.idle_workers = row.idle_workers.max(r.idle_workers);
        }
        row.median_wall_ms = median(walls);
        log::info!("{} grain {grain}: {} fetches, {} idle", case.kind.name(), row.fetch_count, row.idle_workers);
        rows.push(row);
    }
    Ok(SweepReport {
        case: case.kind.name().to_string(),
        total_blocks: total,
        block_size: case.block,
        pool: opts.pool,
        repeats: opts.repeats.max(1),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::CaseKind;

    #[test]
    fn grid12_pool3_rows() {
        let case = BenchCase::new(CaseKind::VecAdd, 12, 8);
        let opts = SweepOptions { pool: 3, grains: vec![4, 6, 12], repeats: 1, block_delay: Some(Duration::from_millis(3)) };
        let r = run_sweep(&case, &opts).unwrap();
        let fetches: Vec<usize> = r.rows.iter().map(|r| r.fetch_count).collect();
        let modeled: Vec<usize> = r.rows.iter().map(|r| r.modeled_idle_workers).collect();
        assert_eq!(fetches, vec![3, 2, 1]);
        assert_eq!(modeled, vec![0, 1, 2]);
        assert!(r.rows.iter().all(|r| r.blocks_executed == 12 && r.oracle_passed));
        assert!(r.rows[1].idle_workers >= 1 && r.rows[2].idle_workers == 2);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
