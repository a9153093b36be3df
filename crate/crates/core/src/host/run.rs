//! Executes host scripts against the worker-pool runtime or the reference
//! interpreter.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::access::{op_access, AccessSummary, BufferSets};
use super::pack::{pack_params, resolve_args, KernelArg};
use super::{HostArg, HostError, HostOp, HostProgram, Launch, Signatures, UploadSource};
use crate::exec::{run_reference, DeviceArena, Handle};
use crate::lang::KernelProgram;
use crate::mpmd::{compile_program, MpmdKernel};
use crate::runtime::{LaunchId, Runtime};
use crate::types::{ScalarType, Value};

/// Every kernel of a compilation unit, in both source and block-fused form.
#[derive(Debug, Clone)]
pub struct KernelSet {
    programs: Vec<KernelProgram>,
    compiled: HashMap<String, Arc<MpmdKernel>>,
    summaries: HashMap<String, AccessSummary>,
    pub warp_mode: bool,
    pub warp_size: u32,
}

impl KernelSet {
    pub fn compile(source: &str, warp_mode: bool, warp_size: u32) -> Result<KernelSet, crate::Error> {
        KernelSet::from_programs(crate::lang::parse_unit(source)?, warp_mode, warp_size)
    }

    pub fn from_programs(programs: Vec<KernelProgram>, warp_mode: bool, warp_size: u32) -> Result<KernelSet, crate::Error> {
        let mut seen = std::collections::HashSet::new();
        for k in &programs {
            if !seen.insert(k.name.as_str()) {
                let diagnostics = crate::lang::validate_unit(&programs, warp_mode);
                return Err(crate::Error::Invalid { kernel: k.name.clone(), diagnostics });
            }
        }
        let mut compiled = HashMap::new();
        let mut summaries = HashMap::new();
        for k in &programs {
            compiled.insert(k.name.clone(), Arc::new(compile_program(k, warp_mode, warp_size)?));
            summaries.insert(k.name.clone(), super::summarize_access(k));
        }
        Ok(KernelSet { programs, compiled, summaries, warp_mode, warp_size })
    }

    pub fn signatures(&self) -> Signatures {
        Signatures::from_kernels(&self.programs)
    }

    pub fn summaries(&self) -> &HashMap<String, AccessSummary> {
        &self.summaries
    }

    pub fn program(&self, name: &str) -> Option<&KernelProgram> {
        self.programs.iter().find(|k| k.name == name)
    }

    pub fn kernel(&self, name: &str) -> Option<&Arc<MpmdKernel>> {
        self.compiled.get(name)
    }

    /// Swaps in another block-fused body, e.g. a reordered variant.
    pub fn replace_kernel(&mut self, k: MpmdKernel) {
        self.compiled.insert(k.name.clone(), Arc::new(k));
    }

    pub fn parse_host(&self, source: &str) -> Result<HostProgram, HostError> {
        super::parse_host(source, &self.signatures())
    }
}

pub enum Backend<'a> {
    Runtime(&'a Runtime),
    /// Per-thread interpreter on the untransformed kernels; launches run to
    /// completion immediately.
    Reference(Arc<DeviceArena>),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory that relative `file:` upload paths resolve against.
    pub base_dir: Option<PathBuf>,
    /// When set, downloads are written to their sink paths under this
    /// directory (`-` never writes).
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Download {
    pub line: u32,
    pub buf: String,
    pub sink: String,
    pub values: Vec<Value>,
}

/// A host op that touched a buffer while a conflicting launch still had
/// unfinished blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub line: u32,
    pub op: String,
    pub launch_line: u32,
    pub launch: LaunchId,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScriptOutcome {
    pub downloads: Vec<Download>,
    pub conflicts: Vec<Conflict>,
    pub launches: Vec<LaunchId>,
}

impl ScriptOutcome {
    pub fn download(&self, buf: &str) -> Option<&[Value]> {
        self.downloads.iter().rev().find(|d| d.buf == buf).map(|d| d.values.as_slice())
    }
}

pub struct ScriptRunner<'a> {
    kernels: &'a KernelSet,
    backend: Backend<'a>,
    options: RunOptions,
}

struct Unsynced {
    id: LaunchId,
    line: u32,
    access: BufferSets,
}

impl<'a> ScriptRunner<'a> {
    pub fn new(kernels: &'a KernelSet, backend: Backend<'a>) -> ScriptRunner<'a> {
        ScriptRunner { kernels, backend, options: RunOptions::default() }
    }

    pub fn with_options(mut self, options: RunOptions) -> ScriptRunner<'a> {
        self.options = options;
        self
    }

    fn arena(&self) -> Arc<DeviceArena> {
        match &self.backend {
            Backend::Runtime(rt) => Arc::clone(rt.arena()),
            Backend::Reference(a) => Arc::clone(a),
        }
    }

    fn path(&self, p: &str) -> PathBuf {
        match &self.options.base_dir {
            Some(d) => d.join(p),
            None => PathBuf::from(p),
        }
    }

    /// Runs every op in order, then synchronizes. Buffers still allocated at
    /// the end are freed.
    pub fn run(&self, program: &HostProgram) -> Result<ScriptOutcome, HostError> {
        let arena = self.arena();
        let mut handles: HashMap<String, (Handle, ScalarType, usize)> = HashMap::new();
        let mut out = ScriptOutcome::default();
        let mut unsynced: Vec<Unsynced> = Vec::new();
        let mut last_line = 0;
        for s in &program.ops {
            let line = s.line;
            last_line = last_line.max(line);
            if let (Backend::Runtime(rt), Some(acc)) = (&self.backend, op_access(&s.op, self.kernels.summaries())) {
                for u in &unsynced {
                    if u.access.conflicts_with(&acc) && !rt.is_complete(u.id) {
                        out.conflicts.push(Conflict { line, op: s.op.to_string(), launch_line: u.line, launch: u.id });
                    }
                }
            }
            let lookup = |buf: &str| handles.get(buf).copied().ok_or_else(|| HostError::UnknownBuffer { line, buf: buf.into() });
            match &s.op {
                HostOp::Alloc { buf, ty, len } => {
                    let h = arena.alloc(*ty, *len);
                    handles.insert(buf.clone(), (h, *ty, *len));
                }
                HostOp::Upload { buf, source } => {
                    let (h, ty, len) = lookup(buf)?;
                    let values = self.source_values(line, source, ty, len)?;
                    arena.upload(h, &values).map_err(|e| HostError::Data { line, message: e.to_string() })?;
                }
                HostOp::Launch(l) => {
                    let id = self.launch(line, l, &handles, &arena)?;
                    let access = op_access(&s.op, self.kernels.summaries()).unwrap_or_default();
                    unsynced.push(Unsynced { id, line, access });
                    out.launches.push(id);
                }
                HostOp::Download { buf, sink } => {
                    let (h, ty, _) = lookup(buf)?;
                    let values = arena.download(h).map_err(|e| HostError::Data { line, message: e.to_string() })?;
                    if let (Some(dir), false) = (&self.options.out_dir, sink == "-") {
                        let mut bytes = Vec::with_capacity(values.len() * ty.size_bytes());
                        values.iter().for_each(|v| v.write_le(&mut bytes));
                        let p = dir.join(sink);
                        std::fs::write(&p, bytes).map_err(|source| HostError::Io { path: p.display().to_string(), source })?;
                    }
                    out.downloads.push(Download { line, buf: buf.clone(), sink: sink.clone(), values });
                }
                HostOp::Sync { .. } => {
                    self.synchronize(line)?;
                    unsynced.clear();
                }
                HostOp::Free { buf } => {
                    let (h, _, _) = lookup(buf)?;
                    arena.free(h).map_err(|e| HostError::Data { line, message: e.to_string() })?;
                    handles.remove(buf);
                }
            }
        }
        self.synchronize(last_line + 1)?;
        for (h, _, _) in handles.values() {
            let _ = arena.free(*h);
        }
        Ok(out)
    }

    fn synchronize(&self, line: u32) -> Result<(), HostError> {
        match &self.backend {
            Backend::Runtime(rt) => rt.synchronize().map_err(|source| HostError::Runtime { line, source }),
            Backend::Reference(_) => Ok(()),
        }
    }

    fn launch(
        &self,
        line: u32,
        l: &Launch,
        handles: &HashMap<String, (Handle, ScalarType, usize)>,
        arena: &DeviceArena,
    ) -> Result<LaunchId, HostError> {
        let unknown = || HostError::UnknownKernel { line, kernel: l.kernel.clone() };
        let program = self.kernels.program(&l.kernel).ok_or_else(unknown)?;
        let args = l
            .args
            .iter()
            .map(|a| match a {
                HostArg::Scalar(v) => Ok(KernelArg::Scalar(*v)),
                HostArg::Buffer(b) => handles
                    .get(b)
                    .map(|h| KernelArg::Buffer(h.0))
                    .ok_or_else(|| HostError::UnknownBuffer { line, buf: b.clone() }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let packed = pack_params(&program.params, &args).map_err(|source| HostError::Pack { line, source })?;
        match &self.backend {
            Backend::Runtime(rt) => {
                let k = self.kernels.kernel(&l.kernel).ok_or_else(unknown)?;
                rt.launch(Arc::clone(k), packed, l.grid, l.block, l.shmem)
                    .map_err(|source| HostError::Runtime { line, source })
            }
            Backend::Reference(_) => {
                let values = resolve_args(&program.params, &packed, arena).map_err(|source| HostError::Pack { line, source })?;
                let warp = self.kernels.warp_mode.then_some(self.kernels.warp_size);
                run_reference(program, l.grid, l.block, &values, l.shmem, warp)
                    .map_err(|source| HostError::Trap { line, source })?;
                Ok(0)
            }
        }
    }

    fn source_values(&self, line: u32, source: &UploadSource, ty: ScalarType, len: usize) -> Result<Vec<Value>, HostError> {
        Ok(match source {
            UploadSource::Seq => (0..len).map(|i| Value::I64(i as i64).convert(ty)).collect(),
            UploadSource::Const(text) => {
                let v = Value::parse_as(ty, text).ok_or_else(|| HostError::Data { line, message: format!("bad constant `{text}`") })?;
                vec![v; len]
            }
            UploadSource::Rand(seed) => random_values(*seed, ty, len),
            UploadSource::File(p) => {
                let path = self.path(p);
                let bytes = std::fs::read(&path).map_err(|source| HostError::Io { path: path.display().to_string(), source })?;
                let want = len * ty.size_bytes();
                if bytes.len() != want {
                    return Err(HostError::Data {
                        line,
                        message: format!("{} holds {} bytes, expected {want}", path.display(), bytes.len()),
                    });
                }
                bytes.chunks_exact(ty.size_bytes()).map(|c| Value::read_le(ty, c).expect("chunk size")).collect()
            }
        })
    }
}

/// `fill:rand:<seed>` contents: integers uniform in [0, 1024), floats
/// uniform in [0, 1).
pub fn random_values(seed: u64, ty: ScalarType, len: usize) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| match ty {
            ScalarType::I32 => Value::I32(rng.gen_range(0..1024)),
            ScalarType::I64 => Value::I64(rng.gen_range(0..1024)),
            ScalarType::F32 => Value::F32(rng.gen()),
            ScalarType::F64 => Value::F64(rng.gen()),
        })
        .collect()
}
