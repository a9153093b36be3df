//! Generated host scripts with a known conflict structure.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::sync::Arc;

use blockfuse::exec::DeviceArena;
use blockfuse::host::{Backend, HostOp, HostProgram, KernelSet, ScriptOutcome, ScriptRunner};
use blockfuse::runtime::{Runtime, RuntimeConfig};
use rand::seq::SliceRandom;
use rand::Rng;

pub const UNIT: &str = "
kernel copy(src: global i32[], dst: global i32[], n: i32) {
  let i: i32 = blockIdx.x * blockDim.x + threadIdx.x;
  if (i < n) {
    dst[i] = src[i] + 1;
  }
}

kernel bump(buf: global i32[], n: i32) {
  let i: i32 = blockIdx.x * blockDim.x + threadIdx.x;
  if (i < n) {
    buf[i] = buf[i] * 3 + 1;
  }
}
";

pub const BUFFERS: usize = 10;
pub const LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictKind {
    Raw,
    War,
    Waw,
    None,
}

#[derive(Debug, Clone)]
pub struct ScriptSpec {
    pub text: String,
    pub kinds: Vec<ConflictKind>,
    /// Source lines of the ops that must be preceded by an inserted sync.
    pub sync_before: Vec<u32>,
}

fn copy(s: usize, d: usize) -> String {
    format!("launch copy grid 2 1 1 block 32 1 1 shmem 0 args b{s} b{d} {LEN}")
}

fn bump(b: usize) -> String {
    format!("launch bump grid 2 1 1 block 32 1 1 shmem 0 args b{b} {LEN}")
}

struct Script {
    lines: Vec<String>,
}

impl Script {
    fn push(&mut self, s: String) -> u32 {
        self.lines.push(s);
        self.lines.len() as u32
    }
}

/// One launch `L`, up to three unrelated fillers, then the probe op `O`
/// that conflicts with `L` in the requested way (or touches only other
/// buffers for `ConflictKind::None`). Returns the line of `O`.
fn episode(sc: &mut Script, kind: ConflictKind, rng: &mut impl Rng) -> u32 {
    let mut pool: Vec<usize> = (0..BUFFERS).collect();
    pool.shuffle(rng);
    let mut take = || pool.pop().expect("enough buffers");
    let use_copy = rng.gen_bool(0.5) || kind == ConflictKind::War;
    let (reads, writes): (Vec<usize>, Vec<usize>);
    if use_copy {
        let (s, d) = (take(), take());
        sc.push(copy(s, d));
        reads = vec![s];
        writes = vec![d];
    } else {
        let z = take();
        sc.push(bump(z));
        reads = vec![z];
        writes = vec![z];
    }
    let filler_launch = take();
    let free_a = take();
    let free_b = take();
    let fresh = take();
    let mut launched_filler = false;
    for _ in 0..rng.gen_range(0..=3) {
        let f = [free_a, free_b][rng.gen_range(0..2)];
        let line = match rng.gen_range(0..3) {
            0 => format!("upload b{f} fill:rand:{}", rng.gen::<u16>()),
            2 if !launched_filler => {
                launched_filler = true;
                bump(filler_launch)
            }
            _ => format!("download b{f} -"),
        };
        sc.push(line);
    }
    let w = writes[0];
    let r = reads[0];
    let probe = match kind {
        ConflictKind::Raw => match rng.gen_range(0..3) {
            0 => format!("download b{w} -"),
            1 => copy(w, fresh),
            _ => bump(w),
        },
        ConflictKind::War => match rng.gen_range(0..2) {
            0 => format!("upload b{r} fill:rand:{}", rng.gen::<u16>()),
            _ => copy(fresh, r),
        },
        ConflictKind::Waw => match rng.gen_range(0..2) {
            0 => format!("upload b{w} fill:const:5"),
            _ => copy(fresh, w),
        },
        ConflictKind::None => match rng.gen_range(0..4) {
            0 => format!("download b{fresh} -"),
            1 => format!("upload b{fresh} fill:seq"),
            2 => copy(free_a, fresh),
            _ => bump(fresh),
        },
    };
    sc.push(probe)
}

/// A script of one to three episodes separated by explicit syncs.
pub fn generate(kind: ConflictKind, rng: &mut impl Rng) -> ScriptSpec {
    let mut sc = Script { lines: Vec::new() };
    for b in 0..BUFFERS {
        sc.push(format!("alloc b{b} i32 {LEN}"));
        sc.push(format!("upload b{b} fill:rand:{b}"));
    }
    sc.push("sync".into());
    let mut kinds = Vec::new();
    let mut sync_before = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let k = if kind == ConflictKind::None {
            ConflictKind::None
        } else {
            [ConflictKind::Raw, ConflictKind::War, ConflictKind::Waw][rng.gen_range(0..3)]
        };
        let probe = episode(&mut sc, k, rng);
        if k != ConflictKind::None {
            sync_before.push(probe);
        }
        kinds.push(k);
        sc.push("sync".into());
    }
    for b in 0..BUFFERS {
        sc.push(format!("download b{b} -"));
    }
    let mut text = String::new();
    for l in &sc.lines {
        let _ = writeln!(text, "{l}");
    }
    ScriptSpec { text, kinds, sync_before }
}

pub fn unit() -> KernelSet {
    KernelSet::compile(UNIT, false, 32).expect("unit compiles")
}

/// Source lines of the ops directly preceded by an inserted sync.
pub fn lines_after_implicit_syncs(p: &HostProgram) -> Vec<u32> {
    p.ops
        .windows(2)
        .filter(|w| matches!(w[0].op, HostOp::Sync { implicit: true }))
        .map(|w| w[1].line)
        .collect()
}

pub fn without_op(p: &HostProgram, index: usize) -> HostProgram {
    let mut q = p.clone();
    q.ops.remove(index);
    q
}

/// A pool that holds every launch back until the host synchronizes.
pub fn deferred_runtime() -> Runtime {
    let cfg = RuntimeConfig { defer_until_sync: true, ..RuntimeConfig::with_pool(4) };
    Runtime::new(cfg, Arc::new(DeviceArena::new()))
}

pub fn run(set: &KernelSet, rt: &Runtime, p: &HostProgram) -> ScriptOutcome {
    ScriptRunner::new(set, Backend::Runtime(rt)).run(p).expect("script runs")
}
