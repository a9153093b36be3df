//! Worker-pool runtime.
//!
//! A launch pushes a [`KernelTask`] onto one FIFO queue behind a single
//! mutex and broadcasts the `wake_pool` condition. Each worker claims a range
//! of `block_per_fetch` blocks under the mutex, then executes it outside the
//! mutex. The pool is created once and joined once, when the runtime is shut
//! down or dropped.

mod policy;
mod queue;
mod sim;

use std::cell::Cell;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::{run_block, ArgValue, BlockContext, DeviceArena, Trap};
use crate::host::{resolve_args, PackError, PackedArgs};
use crate::mpmd::MpmdKernel;
use crate::types::Dim3;

pub use policy::{average_grain, resolve_grain, AutoConfig, FetchPolicy, KernelStats};
pub use queue::{BlockRange, Fetched, TaskQueue};
pub use sim::{simulate_schedule, Schedule, SimFetch};

pub type LaunchId = u64;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("runtime has been shut down")]
    PoolShutdown,
    #[error("launch of {kernel}: {source}")]
    Args { kernel: String, source: PackError },
    #[error("{} fault(s); first: {}", .0.len(), .0[0])]
    Faults(Vec<Trap>),
}

/// Random per-block delays that perturb the interleaving of workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Jitter {
    pub seed: u64,
    pub max_micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeConfig {
    pub pool_size: usize,
    pub policy: FetchPolicy,
    pub auto: AutoConfig,
    /// Keep a per-block execution count for every launch.
    pub record_blocks: bool,
    pub jitter: Option<Jitter>,
    /// Fixed sleep before each block, to emulate heavy blocks.
    pub block_delay: Option<Duration>,
    /// Adversarial mode: launched work is held back until the host calls
    /// [`Runtime::synchronize`], so any host access that should have waited
    /// for a launch observes it incomplete.
    pub defer_until_sync: bool,
}

impl Default for RuntimeConfig {
    fn default() -> RuntimeConfig {
        RuntimeConfig {
            pool_size: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            policy: FetchPolicy::Average,
            auto: AutoConfig::default(),
            record_blocks: false,
            jitter: None,
            block_delay: None,
            defer_until_sync: false,
        }
    }
}

impl RuntimeConfig {
    pub fn with_pool(pool_size: usize) -> RuntimeConfig {
        RuntimeConfig { pool_size: pool_size.max(1), ..RuntimeConfig::default() }
    }
}

/// A launched kernel. Everything here is immutable after launch; the block
/// cursor (`curr_block_id`) lives in the queue entry and only moves under
/// the queue guard.
#[derive(Debug)]
pub struct KernelTask {
    pub id: LaunchId,
    pub routine: Arc<MpmdKernel>,
    pub args: PackedArgs,
    pub grid_dim: Dim3,
    pub block_dim: Dim3,
    pub dynamic_shared_mem_size: usize,
    pub total_blocks: usize,
    pub block_per_fetch: usize,
    state: Arc<LaunchState>,
}

#[derive(Debug)]
struct LaunchState {
    fetches: AtomicUsize,
    blocks_done: AtomicUsize,
    per_worker: Vec<AtomicUsize>,
    bitmap: Option<Vec<AtomicU32>>,
    complete: AtomicBool,
}

/// Per-launch counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LaunchReport {
    pub launch: LaunchId,
    pub kernel: String,
    pub total_blocks: usize,
    pub block_per_fetch: usize,
    pub fetch_count: usize,
    pub blocks_executed: usize,
    pub per_worker_blocks: Vec<usize>,
    pub idle_workers: usize,
    /// Execution count per block id, when recording is enabled.
    pub block_runs: Option<Vec<u32>>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RuntimeCounters {
    pub fetch_count: u64,
    pub blocks_executed: u64,
    pub busy_blocks: Vec<u64>,
    pub syncs: u64,
    pub queue_waits: u64,
    pub launches: u64,
    /// Blocks started while the executing thread held the queue guard.
    pub guard_violations: u64,
}

struct State {
    queue: TaskQueue<Arc<KernelTask>>,
    in_flight: usize,
    gate_open: bool,
    shutdown: bool,
}

struct Counters {
    fetch_count: AtomicU64,
    blocks_executed: AtomicU64,
    busy_blocks: Vec<AtomicU64>,
    syncs: AtomicU64,
    queue_waits: AtomicU64,
    launches: AtomicU64,
    guard_violations: AtomicU64,
}

struct Shared {
    state: Mutex<State>,
    wake_pool: Condvar,
    done: Condvar,
    counters: Counters,
    faults: Mutex<Vec<Trap>>,
    arena: Arc<DeviceArena>,
    config: RuntimeConfig,
}

thread_local! {
    static IN_GUARD: Cell<bool> = const { Cell::new(false) };
}

pub struct Runtime {
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    next_id: AtomicU64,
    launches: Mutex<Vec<Arc<KernelTask>>>,
}

impl Runtime {
    /// Starts the worker pool.
    pub fn new(config: RuntimeConfig, arena: Arc<DeviceArena>) -> Runtime {
        let pool = config.pool_size.max(1);
        let config = RuntimeConfig { pool_size: pool, ..config };
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                queue: TaskQueue::new(),
                in_flight: 0,
                gate_open: !config.defer_until_sync,
                shutdown: false,
            }),
            wake_pool: Condvar::new(),
            done: Condvar::new(),
            counters: Counters {
                fetch_count: AtomicU64::new(0),
                blocks_executed: AtomicU64::new(0),
                busy_blocks: (0..pool).map(|_| AtomicU64::new(0)).collect(),
                syncs: AtomicU64::new(0),
                queue_waits: AtomicU64::new(0),
                launches: AtomicU64::new(0),
                guard_violations: AtomicU64::new(0),
            },
            faults: Mutex::new(Vec::new()),
            arena,
            config,
        });
        let workers = (0..pool)
            .map(|w| {
                let s = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("worker-{w}"))
                    .spawn(move || worker_loop(&s, w))
                    .expect("spawn worker")
            })
            .collect();
        Runtime { shared, workers: Mutex::new(workers), next_id: AtomicU64::new(0), launches: Mutex::new(Vec::new()) }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.shared.config
    }

    pub fn pool_size(&self) -> usize {
        self.shared.config.pool_size
    }

    pub fn arena(&self) -> &Arc<DeviceArena> {
        &self.shared.arena
    }

    pub fn launch(
        &self,
        routine: Arc<MpmdKernel>,
        args: PackedArgs,
        grid: Dim3,
        block: Dim3,
        dynamic_shared_mem_size: usize,
    ) -> Result<LaunchId, RuntimeError> {
        self.launch_with_policy(routine, args, grid, block, dynamic_shared_mem_size, self.shared.config.policy)
    }

    /// Enqueues the kernel and returns without waiting for it.
    pub fn launch_with_policy(
        &self,
        routine: Arc<MpmdKernel>,
        args: PackedArgs,
        grid: Dim3,
        block: Dim3,
        dynamic_shared_mem_size: usize,
        policy: FetchPolicy,
    ) -> Result<LaunchId, RuntimeError> {
        resolve_args(&routine.params, &args, &self.shared.arena)
            .map_err(|source| RuntimeError::Args { kernel: routine.name.clone(), source })?;
        let cfg = &self.shared.config;
        let total_blocks = grid.count();
        let stats = KernelStats {
            instruction_estimate: routine.instruction_estimate,
            block_size: block.count(),
            has_atomics: routine.has_atomics,
        };
        let block_per_fetch = resolve_grain(policy, total_blocks, cfg.pool_size, stats, &cfg.auto);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let state = Arc::new(LaunchState {
            fetches: AtomicUsize::new(0),
            blocks_done: AtomicUsize::new(0),
            per_worker: (0..cfg.pool_size).map(|_| AtomicUsize::new(0)).collect(),
            bitmap: cfg.record_blocks.then(|| (0..total_blocks).map(|_| AtomicU32::new(0)).collect()),
            complete: AtomicBool::new(false),
        });
        let task = Arc::new(KernelTask {
            id,
            routine,
            args,
            grid_dim: grid,
            block_dim: block,
            dynamic_shared_mem_size,
            total_blocks,
            block_per_fetch,
            state,
        });
        {
            let mut st = self.lock();
            if st.shutdown {
                return Err(RuntimeError::PoolShutdown);
            }
            st.queue.push(Arc::clone(&task), total_blocks, block_per_fetch);
            self.shared.counters.launches.fetch_add(1, Ordering::Relaxed);
            self.launches.lock().expect("launch log").push(task);
            IN_GUARD.with(|g| g.set(false));
        }
        self.shared.wake_pool.notify_all();
        Ok(id)
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        let g = self.shared.state.lock().expect("queue guard");
        IN_GUARD.with(|f| f.set(true));
        g
    }

    /// Blocks until the queue is empty and no fetched range is still
    /// executing. Returns the traps raised since the previous call.
    pub fn synchronize(&self) -> Result<(), RuntimeError> {
        self.shared.counters.syncs.fetch_add(1, Ordering::Relaxed);
        let mut st = self.lock();
        if self.shared.config.defer_until_sync {
            st.gate_open = true;
            self.shared.wake_pool.notify_all();
        }
        while !(st.queue.is_empty() && st.in_flight == 0) {
            IN_GUARD.with(|f| f.set(false));
            st = self.shared.done.wait(st).expect("queue guard");
        }
        if self.shared.config.defer_until_sync {
            st.gate_open = false;
        }
        IN_GUARD.with(|f| f.set(false));
        drop(st);
        let faults = std::mem::take(&mut *self.shared.faults.lock().expect("fault log"));
        if faults.is_empty() {
            Ok(())
        } else {
            Err(RuntimeError::Faults(faults))
        }
    }

    pub fn is_complete(&self, id: LaunchId) -> bool {
        self.launches.lock().expect("launch log").iter().any(|t| t.id == id && t.state.complete.load(Ordering::Acquire))
    }

    pub fn launch_report(&self, id: LaunchId) -> Option<LaunchReport> {
        let log = self.launches.lock().expect("launch log");
        let t = log.iter().find(|t| t.id == id)?;
        let per_worker: Vec<usize> = t.state.per_worker.iter().map(|c| c.load(Ordering::Acquire)).collect();
        Some(LaunchReport {
            launch: t.id,
            kernel: t.routine.name.clone(),
            total_blocks: t.total_blocks,
            block_per_fetch: t.block_per_fetch,
            fetch_count: t.state.fetches.load(Ordering::Acquire),
            blocks_executed: t.state.blocks_done.load(Ordering::Acquire),
            idle_workers: per_worker.iter().filter(|&&b| b == 0).count(),
            per_worker_blocks: per_worker,
            block_runs: t.state.bitmap.as_ref().map(|b| b.iter().map(|c| c.load(Ordering::Acquire)).collect()),
            complete: t.state.complete.load(Ordering::Acquire),
        })
    }

    pub fn counters(&self) -> RuntimeCounters {
        let c = &self.shared.counters;
        RuntimeCounters {
            fetch_count: c.fetch_count.load(Ordering::Acquire),
            blocks_executed: c.blocks_executed.load(Ordering::Acquire),
            busy_blocks: c.busy_blocks.iter().map(|b| b.load(Ordering::Acquire)).collect(),
            syncs: c.syncs.load(Ordering::Acquire),
            queue_waits: c.queue_waits.load(Ordering::Acquire),
            launches: c.launches.load(Ordering::Acquire),
            guard_violations: c.guard_violations.load(Ordering::Acquire),
        }
    }

    /// Stops and joins the pool after the queue drains. Later launches fail
    /// with [`RuntimeError::PoolShutdown`].
    pub fn shutdown(&self) {
        {
            let mut st = self.lock();
            st.shutdown = true;
            st.gate_open = true;
            IN_GUARD.with(|f| f.set(false));
        }
        self.shared.wake_pool.notify_all();
        for h in self.workers.lock().expect("worker list").drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(s: &Shared, worker: usize) {
    let mut rng = s.config.jitter.map(|j| ChaCha8Rng::seed_from_u64(j.seed.wrapping_add(worker as u64)));
    loop {
        let fetched = {
            let mut st = s.state.lock().expect("queue guard");
            loop {
                IN_GUARD.with(|f| f.set(true));
                if st.gate_open {
                    if let Some(f) = st.queue.fetch() {
                        st.in_flight += 1;
                        s.counters.fetch_count.fetch_add(1, Ordering::Relaxed);
                        f.task.state.fetches.fetch_add(1, Ordering::Relaxed);
                        break Some(f);
                    }
                }
                if st.shutdown {
                    break None;
                }
                s.counters.queue_waits.fetch_add(1, Ordering::Relaxed);
                IN_GUARD.with(|f| f.set(false));
                st = s.wake_pool.wait(st).expect("queue guard");
            }
        };
        IN_GUARD.with(|f| f.set(false));
        let Some(f) = fetched else { return };
        execute_range(s, worker, &f.task, f.range, rng.as_mut());
        let mut st = s.state.lock().expect("queue guard");
        st.in_flight -= 1;
        if st.queue.is_empty() && st.in_flight == 0 {
            s.done.notify_all();
        }
    }
}

fn execute_range(s: &Shared, worker: usize, task: &KernelTask, range: BlockRange, mut rng: Option<&mut ChaCha8Rng>) {
    let args: Vec<ArgValue> = match resolve_args(&task.routine.params, &task.args, &s.arena) {
        Ok(a) => a,
        Err(e) => {
            let trap = Trap {
                kind: crate::exec::TrapKind::TypeFault(e.to_string()),
                kernel: task.routine.name.clone(),
                block: Some(range.first),
                section: 0,
                tid: 0,
                span: Default::default(),
            };
            s.faults.lock().expect("fault log").push(trap);
            finish_blocks(s, worker, task, range.count);
            return;
        }
    };
    for b in range.ids() {
        if IN_GUARD.with(|f| f.get()) {
            s.counters.guard_violations.fetch_add(1, Ordering::Relaxed);
        }
        if let Some(d) = s.config.block_delay {
            std::thread::sleep(d);
        }
        if let (Some(j), Some(r)) = (s.config.jitter, rng.as_deref_mut()) {
            std::thread::sleep(Duration::from_micros(r.gen_range(0..=j.max_micros)));
        }
        let mut ctx = BlockContext::new(
            task.grid_dim.delinearize(b),
            task.block_dim,
            task.grid_dim,
            &args,
            task.dynamic_shared_mem_size,
        );
        if let Err(mut t) = run_block(&task.routine, &mut ctx) {
            t.block = Some(b);
            s.faults.lock().expect("fault log").push(t);
        }
        if let Some(bm) = &task.state.bitmap {
            bm[b].fetch_add(1, Ordering::Relaxed);
        }
        finish_blocks(s, worker, task, 1);
    }
}

fn finish_blocks(s: &Shared, worker: usize, task: &KernelTask, n: usize) {
    s.counters.blocks_executed.fetch_add(n as u64, Ordering::Relaxed);
    s.counters.busy_blocks[worker].fetch_add(n as u64, Ordering::Relaxed);
    task.state.per_worker[worker].fetch_add(n, Ordering::Relaxed);
    if task.state.blocks_done.fetch_add(n, Ordering::AcqRel) + n == task.total_blocks {
        task.state.complete.store(true, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus;
    use crate::host::{pack_params, KernelArg};
    use crate::mpmd::compile;
    use crate::types::{ScalarType, Value};

    fn reverse_setup(rt: &Runtime, n: usize) -> (Arc<MpmdKernel>, PackedArgs, crate::exec::Handle) {
        let k = Arc::new(compile(corpus::DYNAMIC_REVERSE, false, 32).unwrap());
        let h = rt.arena().alloc(ScalarType::I32, n);
        let vals: Vec<Value> = (0..n as i32).map(Value::I32).collect();
        rt.arena().upload(h, &vals).unwrap();
        let p = pack_params(&k.params, &[KernelArg::Buffer(h), KernelArg::Scalar(Value::I32(n as i32))]).unwrap();
        (k, p, h)
    }

    #[test]
    fn dynamic_reverse_through_the_pool() {
        let rt = Runtime::new(RuntimeConfig::with_pool(2), Arc::new(DeviceArena::new()));
        let (k, p, h) = reverse_setup(&rt, 8);
        rt.launch(k, p, Dim3::linear(1), Dim3::linear(8), 32).unwrap();
        rt.synchronize().unwrap();
        let out: Vec<i32> = rt.arena().download(h).unwrap().iter().map(|v| v.as_i64() as i32).collect();
        assert_eq!(out, vec![7, 6, 5, 4, 3, 2, 1, 0]);
        assert_eq!(rt.counters().guard_violations, 0);
    }

    #[test]
    fn grid16_fixed4_counts() {
        let cfg = RuntimeConfig { policy: FetchPolicy::Fixed(4), record_blocks: true, ..RuntimeConfig::with_pool(3) };
        let rt = Runtime::new(cfg, Arc::new(DeviceArena::new()));
        let (k, _, _) = reverse_setup(&rt, 8);
        let id = rt.launch(Arc::clone(&k), PackedArgs::default(), Dim3::linear(16), Dim3::linear(1), 0);
        assert!(matches!(id, Err(RuntimeError::Args { .. })));
        let k = Arc::new(compile("kernel noop(n: i32) { let x: i32 = n; }", false, 32).unwrap());
        let p = pack_params(&k.params, &[KernelArg::Scalar(Value::I32(1))]).unwrap();
        let id = rt.launch(k, p, Dim3::new(4, 2, 2).unwrap(), Dim3::linear(4), 0).unwrap();
        rt.synchronize().unwrap();
        let r = rt.launch_report(id).unwrap();
        assert_eq!((r.total_blocks, r.block_per_fetch, r.fetch_count, r.blocks_executed), (16, 4, 4, 16));
        assert!(r.complete && rt.is_complete(id));
        assert_eq!(r.block_runs.unwrap(), vec![1; 16]);
        assert_eq!(rt.counters().blocks_executed, 16);
    }

    #[test]
    fn sync_with_nothing_launched_returns() {
        let rt = Runtime::new(RuntimeConfig::with_pool(2), Arc::new(DeviceArena::new()));
        rt.synchronize().unwrap();
        assert_eq!(rt.counters().blocks_executed, 0);
    }

    #[test]
    fn repeated_launches_accumulate() {
        let rt = Runtime::new(RuntimeConfig::with_pool(4), Arc::new(DeviceArena::new()));
        let k = Arc::new(compile("kernel noop(n: i32) { let x: i32 = n; }", false, 32).unwrap());
        let p = pack_params(&k.params, &[KernelArg::Scalar(Value::I32(1))]).unwrap();
        for _ in 0..10 {
            rt.launch(Arc::clone(&k), p.clone(), Dim3::linear(7), Dim3::linear(2), 0).unwrap();
        }
        rt.synchronize().unwrap();
        let c = rt.counters();
        assert_eq!(c.blocks_executed, 70);
        assert_eq!(c.fetch_count, 10 * 4);
        assert_eq!(c.busy_blocks.iter().sum::<u64>(), 70);
    }

    #[test]
    fn deferred_launch_waits_for_sync() {
        let cfg = RuntimeConfig { defer_until_sync: true, ..RuntimeConfig::with_pool(2) };
        let rt = Runtime::new(cfg, Arc::new(DeviceArena::new()));
        let (k, p, h) = reverse_setup(&rt, 8);
        let id = rt.launch(k, p, Dim3::linear(1), Dim3::linear(8), 32).unwrap();
        std::thread::sleep(Duration::from_millis(20));
        assert!(!rt.is_complete(id));
        assert_eq!(rt.arena().download(h).unwrap()[0], Value::I32(0));
        rt.synchronize().unwrap();
        assert!(rt.is_complete(id));
        assert_eq!(rt.arena().download(h).unwrap()[0], Value::I32(7));
    }

    #[test]
    fn traps_surface_at_sync_with_block_id() {
        let rt = Runtime::new(RuntimeConfig::with_pool(2), Arc::new(DeviceArena::new()));
        let (k, p, _) = reverse_setup(&rt, 8);
        rt.launch(k, p, Dim3::linear(3), Dim3::linear(16), 64).unwrap();
        match rt.synchronize() {
            Err(RuntimeError::Faults(f)) => {
                assert_eq!(f.len(), 3);
                assert!(f.iter().all(|t| t.block.is_some()));
            }
            other => panic!("expected faults, got {other:?}"),
        }
        rt.synchronize().unwrap();
    }

    #[test]
    fn launch_after_shutdown_fails() {
        let rt = Runtime::new(RuntimeConfig::with_pool(1), Arc::new(DeviceArena::new()));
        let (k, p, _) = reverse_setup(&rt, 8);
        rt.shutdown();
        assert!(matches!(rt.launch(k, p, Dim3::linear(1), Dim3::linear(8), 32), Err(RuntimeError::PoolShutdown)));
    }
}
