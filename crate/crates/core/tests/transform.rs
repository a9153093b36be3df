use std::fmt::Write as _;

use blockfuse::exec::{run_block, run_reference, ArgValue, BlockContext, DeviceArena};
use blockfuse::lang::parse;
use blockfuse::mpmd::{compile, compile_program, render_listing};
use blockfuse::{Dim3, ScalarType, Value};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Let(u8, u8, u8),
    Assign(u8, u8, u8),
    Barrier,
    Publish(u8),
    Read(u8, u8),
    Guarded(u8, u8),
    LoopWithBarrier(u8, u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<u8>(), any::<u8>(), 0u8..6).prop_map(|(a, b, o)| Op::Let(a, b, o)),
        (any::<u8>(), any::<u8>(), 0u8..6).prop_map(|(a, b, o)| Op::Assign(a, b, o)),
        Just(Op::Barrier),
        any::<u8>().prop_map(Op::Publish),
        (any::<u8>(), 0u8..8).prop_map(|(a, c)| Op::Read(a, c)),
        (any::<u8>(), any::<u8>()).prop_map(|(a, b)| Op::Guarded(a, b)),
        (any::<u8>(), 1u8..4).prop_map(|(a, n)| Op::LoopWithBarrier(a, n)),
    ]
}

/// Random kernel whose locals are live across barriers in arbitrary ways.
/// Shared reads only happen after a barrier that follows a publish.
fn kernel_source(ops: &[Op]) -> String {
    let mut vars = vec!["t".to_string(), "v0".to_string()];
    let mut body = String::new();
    let mut published = false;
    let mut synced = false;
    let pick = |vars: &Vec<String>, i: u8| vars[i as usize % vars.len()].clone();
    let bin = |o: u8| ["+", "-", "*", "^", "&", "|"][o as usize % 6];
    for op in ops {
        match op {
            Op::Let(a, b, o) => {
                let name = format!("v{}", vars.len() - 1);
                let _ = writeln!(body, "  let {name}: i32 = {} {} {} + 3;", pick(&vars, *a), bin(*o), pick(&vars, *b));
                vars.push(name);
            }
            Op::Assign(a, b, o) => {
                let target = pick(&vars[1..].to_vec(), *a);
                let _ = writeln!(body, "  {target} = {} {} {};", pick(&vars, *b), bin(*o), target);
            }
            Op::Barrier => {
                body.push_str("  barrier;\n");
                synced = published;
            }
            Op::Publish(a) => {
                let _ = writeln!(body, "  sh[t] = {};", pick(&vars, *a));
                published = true;
                synced = false;
            }
            Op::Read(a, c) if synced => {
                let target = pick(&vars[1..].to_vec(), *a);
                let _ = writeln!(body, "  {target} = {target} + sh[(t + {c}) % blockDim.x];");
            }
            Op::Read(..) => {}
            Op::Guarded(a, b) => {
                let target = pick(&vars[1..].to_vec(), *a);
                let _ = writeln!(body, "  if (t % 2 == 0) {{\n    {target} = {target} + {};\n  }}", pick(&vars, *b));
            }
            Op::LoopWithBarrier(a, n) => {
                let target = pick(&vars[1..].to_vec(), *a);
                let _ = writeln!(body, "  for (s = 0; s < {n}; s += 1) {{\n    {target} = {target} * 2 + s;\n    barrier;\n  }}");
                synced = published;
            }
        }
    }
    let sum: Vec<String> = vars.iter().cloned().collect();
    format!(
        "kernel gen(inp: global i32[], out: global i32[]) {{\n  shared i32 sh[256];\n  let t: i32 = threadIdx.x;\n  \
         let v0: i32 = inp[blockIdx.x * blockDim.x + t];\n{body}  out[blockIdx.x * blockDim.x + t] = {};\n}}\n",
        sum.join(" + ")
    )
}

fn run_both(src: &str, grid: u32, block: u32) -> (Vec<Value>, Vec<Value>, u64, u64) {
    let prog = parse(src).unwrap();
    let k = compile_program(&prog, false, 32).unwrap();
    let n = (grid * block) as usize;
    let input: Vec<Value> = (0..n as i32).map(|i| Value::I32(i * 7 - 11)).collect();
    let mut outs = Vec::new();
    let mut mpmd_barriers = 0u64;
    let mut ref_barriers = 0u64;
    for fused in [true, false] {
        let arena = DeviceArena::new();
        let a = arena.alloc(ScalarType::I32, n);
        let b = arena.alloc(ScalarType::I32, n);
        arena.upload(a, &input).unwrap();
        let args = vec![ArgValue::Buffer(arena.get(a).unwrap()), ArgValue::Buffer(arena.get(b).unwrap())];
        let (g, bd) = (Dim3::linear(grid), Dim3::linear(block));
        if fused {
            for bi in 0..grid as usize {
                let mut ctx = BlockContext::new(g.delinearize(bi), bd, g, &args, 0);
                ctx.barrier_counter = Some(&mut mpmd_barriers);
                run_block(&k, &mut ctx).unwrap();
            }
        } else {
            ref_barriers = run_reference(&prog, g, bd, &args, 0, None).unwrap().barrier_events;
        }
        outs.push(arena.download(b).unwrap());
    }
    let r = outs.pop().unwrap();
    (outs.pop().unwrap(), r, mpmd_barriers, ref_barriers)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 150, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fused_execution_matches_per_thread_semantics(
        ops in prop::collection::vec(op(), 0..14),
        grid in 1u32..4,
        block in 1u32..97,
    ) {
        let src = kernel_source(&ops);
        let (fused, reference, fb, rb) = run_both(&src, grid, block);
        prop_assert_eq!(fused, reference, "{}", src);
        prop_assert_eq!(fb, rb);
    }
}

#[test]
fn expanded_set_for_corpus() {
    let k = compile(blockfuse::bench::corpus::REDUCE, false, 32).unwrap();
    assert_eq!(k.expanded_names(), vec!["t"]);
    let k = compile(blockfuse::bench::corpus::VEC_ADD, false, 32).unwrap();
    assert!(k.expanded_names().is_empty());
}

#[test]
fn reduce_barrier_events_per_block() {
    let k = compile(blockfuse::bench::corpus::REDUCE, false, 32).unwrap();
    let arena = DeviceArena::new();
    let a = arena.alloc(ScalarType::F32, 64);
    let p = arena.alloc(ScalarType::F32, 1);
    let args = vec![ArgValue::Buffer(arena.get(a).unwrap()), ArgValue::Buffer(arena.get(p).unwrap())];
    let mut events = 0u64;
    let mut ctx = BlockContext::new(Dim3::linear(1).delinearize(0), Dim3::linear(64), Dim3::linear(1), &args, 0);
    ctx.barrier_counter = Some(&mut events);
    run_block(&k, &mut ctx).unwrap();
    // one top-level barrier plus one per trip of s = 1, 2, 4, 8, 16, 32
    assert_eq!(events, 1 + 6);
}

#[test]
fn listing_shows_thread_loops() {
    let k = compile(blockfuse::bench::corpus::DYNAMIC_REVERSE, false, 32).unwrap();
    let text = render_listing(&k);
    assert_eq!(text.matches("for (tid = 0; tid < block_size; tid += 1)").count(), 2);
    assert!(text.contains("tr[tid]"));
}

