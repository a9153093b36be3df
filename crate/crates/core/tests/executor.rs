use std::sync::Arc;

use blockfuse::exec::{
    detect_races, run_block, run_reference, trace_accesses, ArgValue, BlockContext, DeviceArena, TrapKind,
};
use blockfuse::host::{pack_params, KernelArg};
use blockfuse::mpmd::{compile, reorder_grid_stride, MpmdKernel};
use blockfuse::runtime::{FetchPolicy, Runtime, RuntimeConfig, RuntimeError};
use blockfuse::{Dim3, ScalarType, Value};

fn buf(arena: &DeviceArena, ty: ScalarType, vals: &[Value]) -> ArgValue {
    let h = arena.alloc(ty, vals.len());
    arena.upload(h, vals).unwrap();
    ArgValue::Buffer(arena.get(h).unwrap())
}

fn run_all(k: &MpmdKernel, grid: u32, block: u32, args: &[ArgValue], dyn_bytes: usize) -> Result<(), blockfuse::exec::Trap> {
    let (g, b) = (Dim3::linear(grid), Dim3::linear(block));
    for i in 0..grid as usize {
        run_block(k, &mut BlockContext::new(g.delinearize(i), b, g, args, dyn_bytes))?;
    }
    Ok(())
}

#[test]
fn vec_add_two_blocks_of_two() {
    let k = compile(blockfuse::bench::corpus::VEC_ADD, false, 32).unwrap();
    let arena = DeviceArena::new();
    let f = |xs: [f64; 4]| xs.map(Value::F64).to_vec();
    let args = vec![
        buf(&arena, ScalarType::F64, &f([1.0, 2.0, 3.0, 4.0])),
        buf(&arena, ScalarType::F64, &f([10.0, 20.0, 30.0, 40.0])),
        buf(&arena, ScalarType::F64, &f([0.0; 4])),
        ArgValue::Scalar(Value::I32(4)),
    ];
    run_all(&k, 2, 2, &args, 0).unwrap();
    assert_eq!(args[2].buffer().unwrap().to_values(), f([11.0, 22.0, 33.0, 44.0]));
}

#[test]
fn racing_cas_has_one_winner() {
    let src = "kernel claim(x: global i32[], wins: global i32[]) {
      if (threadIdx.x == 0) {
        atomic_cas(x[0], 0, 5);
      }
    }";
    let k = Arc::new(compile(src, false, 32).unwrap());
    let rt = Runtime::new(RuntimeConfig { policy: FetchPolicy::Fixed(1), ..RuntimeConfig::with_pool(8) }, Arc::new(DeviceArena::new()));
    let x = rt.arena().alloc(ScalarType::I32, 1);
    let w = rt.arena().alloc(ScalarType::I32, 1);
    let p = pack_params(&k.params, &[KernelArg::Buffer(x), KernelArg::Buffer(w)]).unwrap();
    rt.launch(k, p, Dim3::linear(64), Dim3::linear(4), 0).unwrap();
    rt.synchronize().unwrap();
    assert_eq!(rt.arena().download(x).unwrap(), vec![Value::I32(5)]);
    // exactly one success: the old value 0 was observed once
    let b = rt.arena().get(x).unwrap();
    assert_eq!(b.atomic_cas(0, Value::I32(0), Value::I32(9)), Value::I32(5));
}

#[test]
fn vec_add_trace_is_tid_linear() {
    let arena = DeviceArena::new();
    let z = vec![Value::F32(0.0); 4];
    let src = "kernel va(a: global f32[], b: global f32[], c: global f32[]) {
      let i: i32 = threadIdx.x;
      c[i] = a[i] + b[i];
    }";
    let k2 = compile(src, false, 32).unwrap();
    let args = vec![buf(&arena, ScalarType::F32, &z), buf(&arena, ScalarType::F32, &z), buf(&arena, ScalarType::F32, &z)];
    let t = trace_accesses(&k2, Dim3::linear(1), Dim3::linear(4), &args, 0).unwrap();
    assert_eq!(t.len(), 12);
    let base_c = args[2].buffer().unwrap().base();
    let writes: Vec<u64> = t.iter().filter(|e| e.write).map(|e| e.addr - base_c).collect();
    assert_eq!(writes, vec![0, 4, 8, 12]);
    assert!(t.iter().all(|e| e.size == 4));
    assert_eq!(t, trace_accesses(&k2, Dim3::linear(1), Dim3::linear(4), &args, 0).unwrap());
}

#[test]
fn grid_stride_trace_before_and_after_reordering() {
    let k = compile(blockfuse::bench::corpus::HISTOGRAM, false, 32).unwrap();
    let (threads, per) = (8u32, 4usize);
    let arena = DeviceArena::new();
    let pixels: Vec<Value> = (0..(threads as usize * per)).map(|_| Value::I32(0)).collect();
    let args = vec![
        buf(&arena, ScalarType::I32, &pixels),
        buf(&arena, ScalarType::I32, &[Value::I32(0)]),
        ArgValue::Scalar(Value::I32(per as i32)),
        ArgValue::Scalar(Value::I32(1)),
    ];
    let base = args[0].buffer().unwrap().base();
    let end = base + 4 * pixels.len() as u64;
    let pixel_reads = |k: &MpmdKernel| -> Vec<u64> {
        trace_accesses(k, Dim3::linear(1), Dim3::linear(threads), &args, 0)
            .unwrap()
            .into_iter()
            .filter(|e| !e.write && e.addr >= base && e.addr < end)
            .map(|e| (e.addr - base) / 4)
            .collect()
    };
    let before = pixel_reads(&k);
    assert_eq!(&before[..per], &[0, 8, 16, 24]);
    let after = pixel_reads(&reorder_grid_stride(k).unwrap());
    assert_eq!(&after[..per], &[0, 1, 2, 3]);
    let (mut a, mut b) = (before.clone(), after.clone());
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn traps_name_their_location() {
    let src = "kernel bad(d: global i32[], n: i32) {
      let i: i32 = threadIdx.x;
      barrier;
      d[i + n] = 1;
    }";
    let k = compile(src, false, 32).unwrap();
    let arena = DeviceArena::new();
    let args = vec![buf(&arena, ScalarType::I32, &[Value::I32(0); 4]), ArgValue::Scalar(Value::I32(2))];
    let t = run_all(&k, 1, 4, &args, 0).unwrap_err();
    assert_eq!(t.kind, TrapKind::OutOfBounds { array: "d".into(), index: 4, len: 4 });
    assert_eq!((t.section, t.tid, t.span.line), (1, 2, 4));
    let prog = blockfuse::lang::parse(src).unwrap();
    let r = run_reference(&prog, Dim3::linear(1), Dim3::linear(4), &args, 0, None).unwrap_err();
    assert_eq!((r.kind, r.tid), (t.kind.clone(), 2));
}

#[test]
fn integer_division_by_zero_traps() {
    let k = compile("kernel z(d: global i32[], n: i32) { d[0] = 1 / n; }", false, 32).unwrap();
    let arena = DeviceArena::new();
    let args = vec![buf(&arena, ScalarType::I32, &[Value::I32(0)]), ArgValue::Scalar(Value::I32(0))];
    assert_eq!(run_all(&k, 1, 1, &args, 0).unwrap_err().kind, TrapKind::DivByZero);
}

#[test]
fn thread_dependent_barrier_loop_is_rejected() {
    let src = "kernel u(d: global i32[]) {
      for (s = 0; s < threadIdx.x; s += 1) {
        barrier;
      }
    }";
    match compile(src, false, 32) {
        Err(blockfuse::Error::Invalid { diagnostics, .. }) => {
            assert_eq!(diagnostics[0].kind, blockfuse::lang::DiagnosticKind::BarrierInDivergentContext);
            assert_eq!(diagnostics[0].span.line, 3);
        }
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn trap_surfaces_as_runtime_fault() {
    let k = Arc::new(compile("kernel z(d: global i32[], n: i32) { d[n] = 1; }", false, 32).unwrap());
    let rt = Runtime::new(RuntimeConfig::with_pool(2), Arc::new(DeviceArena::new()));
    let h = rt.arena().alloc(ScalarType::I32, 1);
    let p = pack_params(&k.params, &[KernelArg::Buffer(h), KernelArg::Scalar(Value::I32(3))]).unwrap();
    rt.launch(k, p, Dim3::linear(2), Dim3::linear(1), 0).unwrap();
    match rt.synchronize() {
        Err(RuntimeError::Faults(f)) => {
            let mut blocks: Vec<_> = f.iter().map(|t| t.block.unwrap()).collect();
            blocks.sort();
            assert_eq!(blocks, vec![0, 1]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn race_detector_flags_order_dependent_writes() {
    let racy = compile("kernel r(d: global i32[]) { d[0] = blockIdx.x; }", false, 32).unwrap();
    let arena = DeviceArena::new();
    let args = vec![buf(&arena, ScalarType::I32, &[Value::I32(0)])];
    let rep = detect_races(&racy, Dim3::linear(4), Dim3::linear(1), &args, 0).unwrap();
    assert_eq!(rep.diffs.len(), 1);
    let hist = compile(blockfuse::bench::corpus::HISTOGRAM, false, 32).unwrap();
    let args = vec![
        buf(&arena, ScalarType::I32, &(0..64).map(Value::I32).collect::<Vec<_>>()),
        buf(&arena, ScalarType::I32, &[Value::I32(0); 4]),
        ArgValue::Scalar(Value::I32(2)),
        ArgValue::Scalar(Value::I32(4)),
    ];
    assert!(detect_races(&hist, Dim3::linear(4), Dim3::linear(8), &args, 0).unwrap().is_clean());
}

#[test]
fn dynamic_shared_memory_is_zeroed_per_block() {
    let src = "kernel s(d: global i32[]) {
      extern shared i32 e[];
      d[blockIdx.x] = e[threadIdx.x];
      e[threadIdx.x] = 7;
    }";
    let k = compile(src, false, 32).unwrap();
    let arena = DeviceArena::new();
    let args = vec![buf(&arena, ScalarType::I32, &[Value::I32(-1); 3])];
    run_all(&k, 3, 1, &args, 4).unwrap();
    assert_eq!(args[0].buffer().unwrap().to_values(), vec![Value::I32(0); 3]);
}
