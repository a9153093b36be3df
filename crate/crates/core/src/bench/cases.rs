//! Corpus cases: launch shapes, host scripts and native oracles.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Serialize;

use super::corpus;
use crate::exec::{ArgValue, DeviceArena, Handle};
use crate::lang::ast::Param;
use crate::host::{insert_barriers, random_values, Backend, HostProgram, KernelSet, ScriptOutcome, ScriptRunner};
use crate::mpmd::DEFAULT_WARP_SIZE;
use crate::runtime::{LaunchReport, Runtime};
use crate::types::{ScalarType, Value};

/// Largest total thread count used by randomized shapes.
pub const MAX_THREADS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    VecAdd,
    DynamicReverse,
    Reduce,
    Histogram,
    Fir,
    WarpReduce,
}

impl CaseKind {
    pub const ALL: [CaseKind; 6] = [
        CaseKind::VecAdd,
        CaseKind::DynamicReverse,
        CaseKind::Reduce,
        CaseKind::Histogram,
        CaseKind::Fir,
        CaseKind::WarpReduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseKind::VecAdd => "vec_add",
            CaseKind::DynamicReverse => "dynamic_reverse",
            CaseKind::Reduce => "reduce",
            CaseKind::Histogram => "histogram",
            CaseKind::Fir => "fir",
            CaseKind::WarpReduce => "warp_reduce",
        }
    }

    pub fn kernel_name(self) -> &'static str {
        match self {
            CaseKind::VecAdd => "vecAdd",
            CaseKind::DynamicReverse => "dynamicReverse",
            CaseKind::Reduce => "reduce",
            CaseKind::Histogram => "histogram",
            CaseKind::Fir => "fir",
            CaseKind::WarpReduce => "warpReduce",
        }
    }

    pub fn source(self) -> &'static str {
        corpus::SOURCES.iter().find(|(n, _)| *n == self.name()).map(|(_, s)| *s).expect("corpus entry")
    }

    pub fn warp_mode(self) -> bool {
        self == CaseKind::WarpReduce
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            CaseKind::VecAdd => &["c"],
            CaseKind::DynamicReverse => &["d"],
            CaseKind::Reduce => &["partial"],
            CaseKind::Histogram => &["bins"],
            CaseKind::Fir => &["output"],
            CaseKind::WarpReduce => &["out"],
        }
    }
}

impl FromStr for CaseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<CaseKind, String> {
        CaseKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.kernel_name() == s)
            .ok_or_else(|| format!("unknown case `{s}`"))
    }
}

/// One corpus kernel at one launch shape. `k`, `nbins` and `taps` only
/// matter to the kernels that take them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchCase {
    pub kind: CaseKind,
    pub grid: u32,
    pub block: u32,
    pub k: u32,
    pub nbins: u32,
    pub taps: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{case}: buffer {buf} element {index}: expected {expected}, got {actual}")]
pub struct OracleMismatch {
    pub case: String,
    pub buf: String,
    pub index: usize,
    pub expected: String,
    pub actual: String,
}

impl BenchCase {
    pub fn new(kind: CaseKind, grid: u32, block: u32) -> BenchCase {
        let grid = if kind == CaseKind::DynamicReverse { 1 } else { grid };
        BenchCase { kind, grid, block, k: 4, nbins: 16, taps: 4, seed: 1 }
    }

    /// The shape shipped with the corpus scripts.
    pub fn standard(kind: CaseKind) -> BenchCase {
        match kind {
            CaseKind::DynamicReverse => BenchCase::new(kind, 1, 256),
            CaseKind::WarpReduce => BenchCase::new(kind, 16, 64),
            _ => BenchCase::new(kind, 16, 128),
        }
    }

    /// A random shape with at most [`MAX_THREADS`] threads in total.
    pub fn random(kind: CaseKind, rng: &mut impl Rng) -> BenchCase {
        let block = match kind {
            CaseKind::DynamicReverse | CaseKind::Reduce => rng.gen_range(1..=1024),
            CaseKind::WarpReduce => 32 * rng.gen_range(1..=8),
            _ => rng.gen_range(1..=256),
        };
        let grid = match kind {
            CaseKind::DynamicReverse => 1,
            _ => rng.gen_range(1..=(MAX_THREADS / block).min(64)),
        };
        BenchCase {
            kind,
            grid,
            block,
            k: rng.gen_range(1..=8),
            nbins: rng.gen_range(1..=64),
            taps: rng.gen_range(1..=8),
            seed: rng.gen(),
        }
    }

    pub fn total_threads(&self) -> u32 {
        self.grid * self.block
    }

    fn seed_for(&self, buffer: u64) -> u64 {
        self.seed.wrapping_mul(16).wrapping_add(buffer)
    }

    /// Input buffers: `(name, type, length, seed)`; seed `None` means zeros.
    fn inputs(&self) -> Vec<(&'static str, ScalarType, usize, Option<u64>)> {
        let n = self.total_threads() as usize;
        let (g, k, taps) = (self.grid as usize, self.k as usize, self.taps as usize);
        let s = |i| Some(self.seed_for(i));
        match self.kind {
            CaseKind::VecAdd => vec![
                ("a", ScalarType::F64, n, s(0)),
                ("b", ScalarType::F64, n, s(1)),
                ("c", ScalarType::F64, n, None),
            ],
            CaseKind::DynamicReverse => vec![("d", ScalarType::I32, n, s(0))],
            CaseKind::Reduce => vec![("input", ScalarType::F32, n, s(0)), ("partial", ScalarType::F32, g, None)],
            CaseKind::Histogram => vec![
                ("pixels", ScalarType::I32, n * k, s(0)),
                ("bins", ScalarType::I32, self.nbins as usize, None),
            ],
            CaseKind::Fir => vec![
                ("input", ScalarType::F32, n * k + taps - 1, s(0)),
                ("coeff", ScalarType::F32, taps, s(1)),
                ("output", ScalarType::F32, n * k, None),
            ],
            CaseKind::WarpReduce => vec![("input", ScalarType::I32, n, s(0)), ("out", ScalarType::I32, n / 32, None)],
        }
    }

    fn input_values(&self, name: &str) -> Vec<Value> {
        let (_, ty, len, seed) = self.inputs().into_iter().find(|i| i.0 == name).expect("input buffer");
        match seed {
            Some(s) => random_values(s, ty, len),
            None => vec![ty.zero(); len],
        }
    }

    pub fn working_set_bytes(&self) -> usize {
        self.inputs().iter().map(|(_, ty, len, _)| ty.size_bytes() * len).sum()
    }

    pub fn dynamic_shared_bytes(&self) -> usize {
        match self.kind {
            CaseKind::DynamicReverse => 4 * self.total_threads() as usize,
            _ => 0,
        }
    }

    /// Allocates and fills every buffer of the case.
    pub fn upload_inputs(&self, arena: &DeviceArena) -> HashMap<String, Handle> {
        self.inputs()
            .into_iter()
            .map(|(name, ty, len, _)| {
                let h = arena.alloc(ty, len);
                arena.upload(h, &self.input_values(name)).expect("length matches allocation");
                (name.to_string(), h)
            })
            .collect()
    }

    /// Argument list for a launch over buffers from [`Self::upload_inputs`].
    pub fn launch_args(
        &self,
        params: &[Param],
        buffers: &HashMap<String, Handle>,
        arena: &DeviceArena,
    ) -> Result<Vec<ArgValue>, crate::Error> {
        params
            .iter()
            .map(|p| {
                if p.ptype.is_global() {
                    let h = buffers.get(&p.name).ok_or_else(|| crate::Error::Other(format!("no buffer `{}`", p.name)))?;
                    return arena.get(*h).map(ArgValue::Buffer).map_err(|e| crate::Error::Other(e.to_string()));
                }
                let v = match p.name.as_str() {
                    "n" => self.total_threads() as i64,
                    "k" => self.k as i64,
                    "nbins" => self.nbins as i64,
                    "taps" => self.taps as i64,
                    other => return Err(crate::Error::Other(format!("no value for scalar `{other}`"))),
                };
                Ok(ArgValue::Scalar(Value::I64(v).convert(p.ptype.elem())))
            })
            .collect()
    }

    /// Host script for this case. It never syncs explicitly; the syncs come
    /// from implicit barrier insertion.
    pub fn host_script(&self) -> String {
        let mut s = format!("# {} grid {} block {}\n", self.kind.name(), self.grid, self.block);
        for (name, ty, len, _) in self.inputs() {
            let _ = writeln!(s, "alloc {name} {ty} {len}");
        }
        for (name, _, _, seed) in self.inputs() {
            match seed {
                Some(seed) => {
                    let _ = writeln!(s, "upload {name} fill:rand:{seed}");
                }
                None => {
                    let _ = writeln!(s, "upload {name} fill:const:0");
                }
            }
        }
        let n = self.total_threads();
        let shmem = self.dynamic_shared_bytes();
        let args = match self.kind {
            CaseKind::VecAdd => format!("a b c {n}"),
            CaseKind::DynamicReverse => format!("d {n}"),
            CaseKind::Reduce => "input partial".to_string(),
            CaseKind::Histogram => format!("pixels bins {} {}", self.k, self.nbins),
            CaseKind::Fir => format!("input coeff output {} {}", self.k, self.taps),
            CaseKind::WarpReduce => "input out".to_string(),
        };
        let _ = writeln!(
            s,
            "launch {} grid {} 1 1 block {} 1 1 shmem {shmem} args {args}",
            self.kind.kernel_name(),
            self.grid,
            self.block
        );
        for out in self.kind.outputs() {
            let _ = writeln!(s, "download {out} {out}.bin");
        }
        for (name, _, _, _) in self.inputs() {
            let _ = writeln!(s, "free {name}");
        }
        s
    }

    pub fn kernel_set(&self) -> Result<KernelSet, crate::Error> {
        KernelSet::compile(self.kind.source(), self.kind.warp_mode(), DEFAULT_WARP_SIZE)
    }

    /// Parsed script with implicit barriers inserted.
    pub fn program(&self, set: &KernelSet) -> Result<HostProgram, crate::Error> {
        let p = set.parse_host(&self.host_script())?;
        Ok(insert_barriers(&p, set.summaries()))
    }

    /// Expected contents of every output buffer, computed natively.
    pub fn oracle(&self) -> Vec<(String, Vec<Value>)> {
        let (b, k) = (self.block as usize, self.k as usize);
        let out = match self.kind {
            CaseKind::VecAdd => {
                let (a, bb) = (self.input_values("a"), self.input_values("b"));
                a.iter().zip(&bb).map(|(x, y)| Value::F64(x.as_f64() + y.as_f64())).collect()
            }
            CaseKind::DynamicReverse => self.input_values("d").into_iter().rev().collect(),
            CaseKind::Reduce => {
                let input: Vec<f32> = self.input_values("input").iter().map(|v| v.as_f64() as f32).collect();
                input
                    .chunks(b)
                    .map(|chunk| {
                        let mut s = chunk.to_vec();
                        let mut stride = 1;
                        while stride < b {
                            for t in (0..b).step_by(2 * stride) {
                                if t + stride < b {
                                    s[t] += s[t + stride];
                                }
                            }
                            stride += stride;
                        }
                        Value::F32(s[0])
                    })
                    .collect()
            }
            CaseKind::Histogram => {
                let mut bins = vec![0i32; self.nbins as usize];
                for p in self.input_values("pixels") {
                    bins[(p.as_i64() % self.nbins as i64) as usize] += 1;
                }
                bins.into_iter().map(Value::I32).collect()
            }
            CaseKind::Fir => {
                let input: Vec<f32> = self.input_values("input").iter().map(|v| v.as_f64() as f32).collect();
                let coeff: Vec<f32> = self.input_values("coeff").iter().map(|v| v.as_f64() as f32).collect();
                (0..self.total_threads() as usize * k)
                    .map(|i| {
                        let mut acc = 0.0f32;
                        for (c, w) in coeff.iter().enumerate() {
                            acc += w * input[i + c];
                        }
                        Value::F32(acc)
                    })
                    .collect()
            }
            CaseKind::WarpReduce => self
                .input_values("input")
                .chunks(32)
                .map(|w| Value::I32(w.iter().fold(0i32, |s, v| s.wrapping_add(v.as_i64() as i32))))
                .collect(),
        };
        vec![(self.kind.outputs()[0].to_string(), out)]
    }

    /// Compares the downloads of a run with expected buffers: integers
    /// bit-exactly, floats to a relative 1e-6.
    pub fn check(&self, expected: &[(String, Vec<Value>)], outcome: &ScriptOutcome) -> Result<(), OracleMismatch> {
        for (buf, want) in expected {
            let mismatch = |index: usize, e: String, a: String| OracleMismatch {
                case: self.kind.name().to_string(),
                buf: buf.clone(),
                index,
                expected: e,
                actual: a,
            };
            let Some(got) = outcome.download(buf) else {
                return Err(mismatch(0, format!("{} elements", want.len()), "no download".into()));
            };
            if got.len() != want.len() {
                return Err(mismatch(0, format!("{} elements", want.len()), format!("{} elements", got.len())));
            }
            if let Some(i) = (0..want.len()).find(|&i| !values_match(want[i], got[i])) {
                return Err(mismatch(i, want[i].to_string(), got[i].to_string()));
            }
        }
        Ok(())
    }

    pub fn check_oracle(&self, outcome: &ScriptOutcome) -> Result<(), OracleMismatch> {
        self.check(&self.oracle(), outcome)
    }
}

pub fn values_match(expected: Value, actual: Value) -> bool {
    if expected.bit_eq(actual) {
        return true;
    }
    if expected.ty() != actual.ty() || expected.ty().is_int() {
        return false;
    }
    let (e, a) = (expected.as_f64(), actual.as_f64());
    (e - a).abs() <= 1e-6 * e.abs().max(a.abs())
}

/// Result of running a case through the worker pool.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub outcome: ScriptOutcome,
    pub reports: Vec<LaunchReport>,
    pub wall: Duration,
}

pub fn run_on_runtime(program: &HostProgram, set: &KernelSet, rt: &Runtime) -> Result<CaseRun, crate::Error> {
    let start = Instant::now();
    let outcome = ScriptRunner::new(set, Backend::Runtime(rt)).run(program)?;
    let wall = start.elapsed();
    let reports = outcome.launches.iter().filter_map(|&id| rt.launch_report(id)).collect();
    Ok(CaseRun { outcome, reports, wall })
}

pub fn run_on_reference(program: &HostProgram, set: &KernelSet) -> Result<ScriptOutcome, crate::Error> {
    Ok(ScriptRunner::new(set, Backend::Reference(Arc::new(DeviceArena::new()))).run(program)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn standard_cases_match_oracle_on_reference() {
        for kind in CaseKind::ALL {
            let case = BenchCase::standard(kind);
            let set = case.kernel_set().unwrap();
            let prog = case.program(&set).unwrap();
            assert!(prog.implicit_syncs() >= 1, "{}", kind.name());
            let out = run_on_reference(&prog, &set).unwrap();
            case.check_oracle(&out).unwrap();
        }
    }

    #[test]
    fn random_shapes_respect_limits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for kind in CaseKind::ALL {
            for _ in 0..100 {
                let c = BenchCase::random(kind, &mut rng);
                assert!(c.total_threads() <= MAX_THREADS);
                if kind == CaseKind::WarpReduce {
                    assert_eq!(c.block % 32, 0);
                }
                if kind == CaseKind::DynamicReverse {
                    assert_eq!(c.grid, 1);
                }
            }
        }
    }

    #[test]
    fn case_names_round_trip() {
        for kind in CaseKind::ALL {
            assert_eq!(kind.name().parse::<CaseKind>().unwrap(), kind);
            assert_eq!(kind.kernel_name().parse::<CaseKind>().unwrap(), kind);
        }
    }
}
