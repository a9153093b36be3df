use std::sync::Arc;
use std::time::Duration;

use blockfuse::exec::DeviceArena;
use blockfuse::host::{pack_params, KernelArg, PackedArgs};
use blockfuse::mpmd::{compile, MpmdKernel};
use blockfuse::runtime::{simulate_schedule, FetchPolicy, Runtime, RuntimeConfig};
use blockfuse::{Dim3, ScalarType, Value};
use proptest::prelude::*;

fn noop() -> (Arc<MpmdKernel>, PackedArgs) {
    let k = Arc::new(compile("kernel noop(n: i32) { let x: i32 = n * 2; }", false, 32).unwrap());
    let p = pack_params(&k.params, &[KernelArg::Scalar(Value::I32(3))]).unwrap();
    (k, p)
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn fetch_count_law_and_exactly_once(total in 1usize..3000, grain in 1usize..64, pool in 1usize..9) {
        let (k, p) = noop();
        let cfg = RuntimeConfig { policy: FetchPolicy::Fixed(grain), record_blocks: true, ..RuntimeConfig::with_pool(pool) };
        let rt = Runtime::new(cfg, Arc::new(DeviceArena::new()));
        let id = rt.launch(k, p, Dim3::linear(total as u32), Dim3::linear(2), 0).unwrap();
        rt.synchronize().unwrap();
        let r = rt.launch_report(id).unwrap();
        prop_assert_eq!(r.fetch_count, total.div_ceil(grain.min(total)));
        prop_assert_eq!(r.block_runs.unwrap(), vec![1u32; total]);
        prop_assert!(r.idle_workers >= pool.saturating_sub(r.fetch_count));
        let c = rt.counters();
        prop_assert_eq!(c.blocks_executed, total as u64);
        prop_assert_eq!(c.guard_violations, 0);
    }

    #[test]
    fn modeled_utilization(total in 1usize..500, pool in 1usize..17, grain in 1usize..64) {
        let avg = total.div_ceil(pool);
        // Average grain leaves exactly pool - ceil(total / avg) workers idle,
        // which is zero whenever pool divides total.
        let s = simulate_schedule(total, avg, pool, 1.0, 0.0);
        prop_assert_eq!(s.idle_workers, pool - total.div_ceil(avg));
        if total % pool == 0 {
            prop_assert_eq!(s.idle_workers, 0);
        }
        if grain > avg {
            let s = simulate_schedule(total, grain, pool, 1.0, 0.0);
            prop_assert!(s.idle_workers >= pool - total.div_ceil(grain).min(pool));
            prop_assert!(s.idle_workers as f64 >= (pool as f64 - total as f64 / grain as f64).floor());
        }
    }
}

#[test]
fn average_policy_keeps_every_worker_busy() {
    let (k, p) = noop();
    for (total, pool) in [(12, 3), (16, 4), (9, 2)] {
        let cfg = RuntimeConfig { block_delay: Some(Duration::from_millis(4)), ..RuntimeConfig::with_pool(pool) };
        let rt = Runtime::new(cfg, Arc::new(DeviceArena::new()));
        let id = rt.launch(Arc::clone(&k), p.clone(), Dim3::linear(total), Dim3::linear(1), 0).unwrap();
        rt.synchronize().unwrap();
        let r = rt.launch_report(id).unwrap();
        assert_eq!(r.idle_workers, 0, "{total} blocks on {pool} workers: {:?}", r.per_worker_blocks);
    }
}

#[test]
fn counters_are_stable_after_sync() {
    let (k, p) = noop();
    let rt = Runtime::new(RuntimeConfig::with_pool(4), Arc::new(DeviceArena::new()));
    for _ in 0..5 {
        rt.launch(Arc::clone(&k), p.clone(), Dim3::new(4, 2, 2).unwrap(), Dim3::linear(8), 0).unwrap();
    }
    rt.synchronize().unwrap();
    let a = rt.counters();
    std::thread::sleep(Duration::from_millis(10));
    assert_eq!(a, rt.counters());
    assert_eq!(a.blocks_executed, 80);
    assert_eq!(a.launches, 5);
    let json = serde_json::to_value(&a).unwrap();
    assert!(json.get("fetch_count").is_some() && json.get("busy_blocks").is_some());
}

#[test]
fn launches_are_served_in_order() {
    // The second launch overwrites what the first wrote, so with FIFO
    // service and a sync only at the end the buffer holds the second value
    // for every block the second launch covers.
    let k = Arc::new(
        compile("kernel put(d: global i32[], v: i32) { d[blockIdx.x] = v; }", false, 32).unwrap(),
    );
    let rt = Runtime::new(RuntimeConfig { policy: FetchPolicy::Fixed(1), ..RuntimeConfig::with_pool(1) }, Arc::new(DeviceArena::new()));
    let h = rt.arena().alloc(ScalarType::I32, 32);
    for v in [1, 2] {
        let p = pack_params(&k.params, &[KernelArg::Buffer(h), KernelArg::Scalar(Value::I32(v))]).unwrap();
        rt.launch(Arc::clone(&k), p, Dim3::linear(32), Dim3::linear(1), 0).unwrap();
    }
    rt.synchronize().unwrap();
    assert!(rt.arena().download(h).unwrap().iter().all(|v| *v == Value::I32(2)));
}

#[test]
fn histogram_atomics_across_workers() {
    let k = Arc::new(compile(blockfuse::bench::corpus::HISTOGRAM, false, 32).unwrap());
    let rt = Runtime::new(RuntimeConfig { policy: FetchPolicy::Fixed(1), ..RuntimeConfig::with_pool(8) }, Arc::new(DeviceArena::new()));
    let pixels = rt.arena().alloc(ScalarType::I32, 64 * 32 * 4);
    let bins = rt.arena().alloc(ScalarType::I32, 8);
    let vals: Vec<Value> = (0..64 * 32 * 4).map(|i| Value::I32(i % 8)).collect();
    rt.arena().upload(pixels, &vals).unwrap();
    let args = [KernelArg::Buffer(pixels), KernelArg::Buffer(bins), KernelArg::Scalar(Value::I32(4)), KernelArg::Scalar(Value::I32(8))];
    let p = pack_params(&k.params, &args).unwrap();
    rt.launch(k, p, Dim3::linear(64), Dim3::linear(32), 0).unwrap();
    rt.synchronize().unwrap();
    assert_eq!(rt.arena().download(bins).unwrap(), vec![Value::I32(1024); 8]);
}

#[test]
fn policy_choice_is_recorded_per_launch() {
    let (k, p) = noop();
    let rt = Runtime::new(RuntimeConfig::with_pool(3), Arc::new(DeviceArena::new()));
    let a = rt.launch(Arc::clone(&k), p.clone(), Dim3::linear(12), Dim3::linear(1), 0).unwrap();
    let b = rt
        .launch_with_policy(Arc::clone(&k), p.clone(), Dim3::linear(12), Dim3::linear(1), 0, FetchPolicy::AutoAggressive)
        .unwrap();
    rt.synchronize().unwrap();
    assert_eq!(rt.launch_report(a).unwrap().block_per_fetch, 4);
    assert_eq!(rt.launch_report(b).unwrap().block_per_fetch, 6);
}
