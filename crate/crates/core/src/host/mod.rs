//! Host scripts: the stand-in for the host half of a CUDA program.
//!
//! ```text
//! # reverse eight integers in place
//! alloc d_d i32 8
//! upload d_d fill:seq
//! launch dynamicReverse grid 1 1 1 block 8 1 1 shmem 32 args d_d 8
//! download d_d out.bin
//! free d_d
//! ```
//!
//! One op per line, `#` starts a comment. Upload sources are
//! `file:<path>`, `fill:seq`, `fill:const:<value>` and `fill:rand:<seed>`.
//! Scalar arguments may carry an `i32`/`i64`/`f32`/`f64` suffix; without
//! one they take the type of the parameter.

mod access;
mod pack;
mod run;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::lang::ast::{Param, ParamType};
use crate::lang::KernelProgram;
use crate::types::{Dim3, ScalarType, Value};

pub use access::{insert_barriers, launch_buffers, summarize_access, AccessSummary, BufferSets};
pub use pack::{pack_params, packed_bytes, resolve_args, unpack_params, KernelArg, PackError, PackedArgs};
pub use run::{random_values, Backend, Conflict, Download, KernelSet, RunOptions, ScriptOutcome, ScriptRunner};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadSource {
    File(String),
    Seq,
    Const(String),
    Rand(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HostArg {
    Buffer(String),
    Scalar(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Launch {
    pub kernel: String,
    pub grid: Dim3,
    pub block: Dim3,
    pub shmem: usize,
    pub args: Vec<HostArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HostOp {
    Alloc { buf: String, ty: ScalarType, len: usize },
    Upload { buf: String, source: UploadSource },
    Launch(Launch),
    Download { buf: String, sink: String },
    /// `implicit` marks syncs added by [`insert_barriers`].
    Sync { implicit: bool },
    Free { buf: String },
}

impl HostOp {
    pub fn is_sync(&self) -> bool {
        matches!(self, HostOp::Sync { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostStmt {
    pub op: HostOp,
    /// 1-based source line; 0 for inserted ops.
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HostProgram {
    pub ops: Vec<HostStmt>,
}

impl HostProgram {
    pub fn sync_count(&self) -> usize {
        self.ops.iter().filter(|s| s.op.is_sync()).count()
    }

    pub fn implicit_syncs(&self) -> usize {
        self.ops.iter().filter(|s| matches!(s.op, HostOp::Sync { implicit: true })).count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HostError {
    #[error("line {line}: {message}")]
    Syntax { line: u32, message: String },
    #[error("line {line}: kernel `{kernel}` takes {expected} arguments, got {got}")]
    Arity { line: u32, kernel: String, expected: usize, got: usize },
    #[error("line {line}: unknown kernel `{kernel}`")]
    UnknownKernel { line: u32, kernel: String },
    #[error("line {line}: unknown buffer `{buf}`")]
    UnknownBuffer { line: u32, buf: String },
    #[error("line {line}: buffer `{buf}` is already allocated")]
    DuplicateBuffer { line: u32, buf: String },
    #[error("line {line}: argument {index} of `{kernel}` should be {expected}")]
    ArgType { line: u32, kernel: String, index: usize, expected: String },
    #[error("line {line}: {message}")]
    Data { line: u32, message: String },
    #[error("line {line}: {source}")]
    Pack { line: u32, source: PackError },
    #[error("line {line}: {source}")]
    Runtime { line: u32, source: crate::runtime::RuntimeError },
    #[error("line {line}: {source}")]
    Trap { line: u32, source: crate::exec::Trap },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Kernel signatures known to the host parser.
#[derive(Debug, Clone, Default)]
pub struct Signatures {
    map: HashMap<String, Vec<Param>>,
}

impl Signatures {
    pub fn from_kernels<'a>(kernels: impl IntoIterator<Item = &'a KernelProgram>) -> Signatures {
        Signatures { map: kernels.into_iter().map(|k| (k.name.clone(), k.params.clone())).collect() }
    }

    pub fn get(&self, name: &str) -> Option<&[Param]> {
        self.map.get(name).map(Vec::as_slice)
    }
}

fn syntax(line: u32, message: impl Into<String>) -> HostError {
    HostError::Syntax { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(line: u32, what: &str, s: Option<&str>) -> Result<T, HostError> {
    let s = s.ok_or_else(|| syntax(line, format!("missing {what}")))?;
    s.parse().map_err(|_| syntax(line, format!("bad {what} `{s}`")))
}

fn expect_kw(line: u32, toks: &mut std::slice::Iter<&str>, kw: &str) -> Result<(), HostError> {
    match toks.next() {
        Some(t) if *t == kw => Ok(()),
        Some(t) => Err(syntax(line, format!("expected `{kw}`, found `{t}`"))),
        None => Err(syntax(line, format!("expected `{kw}`"))),
    }
}

fn parse_dim(line: u32, toks: &mut std::slice::Iter<&str>, what: &str) -> Result<Dim3, HostError> {
    let x = parse_num(line, what, toks.next().copied())?;
    let y = parse_num(line, what, toks.next().copied())?;
    let z = parse_num(line, what, toks.next().copied())?;
    Dim3::new(x, y, z).map_err(|e| syntax(line, format!("{what}: {e}")))
}

fn split_suffix(text: &str) -> (&str, Option<ScalarType>) {
    for t in ScalarType::ALL {
        if let Some(head) = text.strip_suffix(t.name()) {
            if !head.is_empty() {
                return (head, Some(t));
            }
        }
    }
    (text, None)
}

/// Parses a script against the given kernel signatures.
pub fn parse_host(source: &str, sigs: &Signatures) -> Result<HostProgram, HostError> {
    let mut live: HashMap<String, ScalarType> = HashMap::new();
    let mut ops = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i as u32 + 1;
        let text = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = text.split_whitespace().collect();
        let Some((&head, rest)) = toks.split_first() else { continue };
        let mut it = rest.iter();
        let buf_of = |name: Option<&&str>, live: &HashMap<String, ScalarType>| -> Result<String, HostError> {
            let name = name.ok_or_else(|| syntax(line, "missing buffer name"))?;
            if !live.contains_key(*name) {
                return Err(HostError::UnknownBuffer { line, buf: name.to_string() });
            }
            Ok(name.to_string())
        };
        let op = match head {
            "alloc" => {
                let buf = it.next().ok_or_else(|| syntax(line, "missing buffer name"))?.to_string();
                let tname = it.next().ok_or_else(|| syntax(line, "missing element type"))?;
                let ty = ScalarType::from_name(tname).ok_or_else(|| syntax(line, format!("unknown type `{tname}`")))?;
                let len = parse_num(line, "length", it.next().copied())?;
                if live.insert(buf.clone(), ty).is_some() {
                    return Err(HostError::DuplicateBuffer { line, buf });
                }
                HostOp::Alloc { buf, ty, len }
            }
            "upload" => {
                let buf = buf_of(it.next(), &live)?;
                let spec = it.next().ok_or_else(|| syntax(line, "missing upload source"))?;
                let source = if let Some(p) = spec.strip_prefix("file:") {
                    UploadSource::File(p.to_string())
                } else if *spec == "fill:seq" {
                    UploadSource::Seq
                } else if let Some(v) = spec.strip_prefix("fill:const:") {
                    if Value::parse_as(live[&buf], v).is_none() {
                        return Err(syntax(line, format!("bad constant `{v}` for {}", live[&buf])));
                    }
                    UploadSource::Const(v.to_string())
                } else if let Some(s) = spec.strip_prefix("fill:rand:") {
                    UploadSource::Rand(parse_num(line, "seed", Some(s))?)
                } else {
                    return Err(syntax(line, format!("bad upload source `{spec}`")));
                };
                HostOp::Upload { buf, source }
            }
            "launch" => {
                let kernel = it.next().ok_or_else(|| syntax(line, "missing kernel name"))?.to_string();
                let sig = sigs.get(&kernel).ok_or_else(|| HostError::UnknownKernel { line, kernel: kernel.clone() })?;
                expect_kw(line, &mut it, "grid")?;
                let grid = parse_dim(line, &mut it, "grid")?;
                expect_kw(line, &mut it, "block")?;
                let block = parse_dim(line, &mut it, "block")?;
                expect_kw(line, &mut it, "shmem")?;
                let shmem = parse_num(line, "shmem bytes", it.next().copied())?;
                expect_kw(line, &mut it, "args")?;
                let texts: Vec<&str> = it.by_ref().copied().collect();
                if texts.len() != sig.len() {
                    return Err(HostError::Arity { line, kernel, expected: sig.len(), got: texts.len() });
                }
                let mut args = Vec::with_capacity(texts.len());
                for (index, (p, t)) in sig.iter().zip(&texts).enumerate() {
                    let bad = || HostError::ArgType { line, kernel: kernel.clone(), index, expected: p.ptype.to_string() };
                    match p.ptype {
                        ParamType::GlobalRef(elem) => match live.get(*t) {
                            Some(&ty) if ty == elem => args.push(HostArg::Buffer(t.to_string())),
                            Some(_) => return Err(bad()),
                            None if t.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') => {
                                return Err(HostError::UnknownBuffer { line, buf: t.to_string() })
                            }
                            None => return Err(bad()),
                        },
                        ParamType::Scalar(ty) => {
                            let (num, suffix) = split_suffix(t);
                            if suffix.is_some_and(|s| s != ty) {
                                return Err(bad());
                            }
                            args.push(HostArg::Scalar(Value::parse_as(ty, num).ok_or_else(bad)?));
                        }
                    }
                }
                HostOp::Launch(Launch { kernel, grid, block, shmem, args })
            }
            "download" => {
                let buf = buf_of(it.next(), &live)?;
                let sink = it.next().ok_or_else(|| syntax(line, "missing download path"))?.to_string();
                HostOp::Download { buf, sink }
            }
            "sync" => HostOp::Sync { implicit: false },
            "free" => {
                let buf = buf_of(it.next(), &live)?;
                live.remove(&buf);
                HostOp::Free { buf }
            }
            other => return Err(syntax(line, format!("unknown op `{other}`"))),
        };
        if let Some(extra) = it.next() {
            return Err(syntax(line, format!("unexpected `{extra}`")));
        }
        ops.push(HostStmt { op, line });
    }
    Ok(HostProgram { ops })
}

impl fmt::Display for HostOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostOp::Alloc { buf, ty, len } => write!(f, "alloc {buf} {ty} {len}"),
            HostOp::Upload { buf, source } => match source {
                UploadSource::File(p) => write!(f, "upload {buf} file:{p}"),
                UploadSource::Seq => write!(f, "upload {buf} fill:seq"),
                UploadSource::Const(v) => write!(f, "upload {buf} fill:const:{v}"),
                UploadSource::Rand(s) => write!(f, "upload {buf} fill:rand:{s}"),
            },
            HostOp::Launch(l) => {
                let (g, b) = (l.grid, l.block);
                write!(
                    f,
                    "launch {} grid {} {} {} block {} {} {} shmem {} args",
                    l.kernel, g.x, g.y, g.z, b.x, b.y, b.z, l.shmem
                )?;
                for a in &l.args {
                    match a {
                        HostArg::Buffer(n) => write!(f, " {n}")?,
                        HostArg::Scalar(v) => write!(f, " {v}{}", v.ty())?,
                    }
                }
                Ok(())
            }
            HostOp::Download { buf, sink } => write!(f, "download {buf} {sink}"),
            HostOp::Sync { implicit: false } => f.write_str("sync"),
            HostOp::Sync { implicit: true } => f.write_str("sync  # implicit"),
            HostOp::Free { buf } => write!(f, "free {buf}"),
        }
    }
}

impl fmt::Display for HostProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.ops {
            writeln!(f, "{}", s.op)?;
        }
        Ok(())
    }
}

/// Buffers named by ops, in first-use order.
pub fn buffer_names(p: &HostProgram) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in &p.ops {
        if let HostOp::Alloc { buf, .. } = &s.op {
            if seen.insert(buf.clone()) {
                out.push(buf.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus;
    use crate::lang::parse;

    fn sigs() -> Signatures {
        let ks: Vec<_> = corpus::SOURCES.iter().map(|(_, s)| parse(s).unwrap()).collect();
        Signatures::from_kernels(&ks)
    }

    const VEC_ADD: &str = "\
alloc a f64 4
upload a fill:seq
launch vecAdd grid 1 1 1 block 4 1 1 shmem 0 args a a a 4
download a out.bin
";

    #[test]
    fn four_op_script() {
        let p = parse_host(VEC_ADD, &sigs()).unwrap();
        assert_eq!(p.ops.len(), 4);
        assert!(matches!(&p.ops[2].op, HostOp::Launch(l) if l.args[3] == HostArg::Scalar(Value::I32(4))));
        assert_eq!(p.ops[3].line, 4);
    }

    #[test]
    fn empty_script_has_no_ops() {
        assert!(parse_host("", &sigs()).unwrap().ops.is_empty());
        assert!(parse_host("# nothing\n\n", &sigs()).unwrap().ops.is_empty());
    }

    #[test]
    fn arity_and_unknown_names() {
        let s = sigs();
        let e = parse_host("alloc d i32 8\nlaunch dynamicReverse grid 1 1 1 block 8 1 1 shmem 32 args d\n", &s);
        assert!(matches!(e, Err(HostError::Arity { line: 2, expected: 2, got: 1, .. })));
        let e = parse_host("launch nope grid 1 1 1 block 1 1 1 shmem 0 args\n", &s);
        assert!(matches!(e, Err(HostError::UnknownKernel { .. })));
        let e = parse_host("alloc d i32 8\nfree d\ndownload d x\n", &s);
        assert!(matches!(e, Err(HostError::UnknownBuffer { line: 3, .. })));
    }

    #[test]
    fn argument_types_are_checked() {
        let s = sigs();
        let e = parse_host("alloc d f32 8\nlaunch dynamicReverse grid 1 1 1 block 8 1 1 shmem 32 args d 8\n", &s);
        assert!(matches!(e, Err(HostError::ArgType { index: 0, .. })));
        let e = parse_host("alloc d i32 8\nlaunch dynamicReverse grid 1 1 1 block 8 1 1 shmem 32 args d 8f32\n", &s);
        assert!(matches!(e, Err(HostError::ArgType { index: 1, .. })));
        let ok = parse_host("alloc d i32 8\nlaunch dynamicReverse grid 1 1 1 block 8 1 1 shmem 32 args d 8i32\n", &s);
        assert!(ok.is_ok());
    }

    #[test]
    fn display_reparses_to_same_program() {
        let p = parse_host(VEC_ADD, &sigs()).unwrap();
        let again = parse_host(&p.to_string(), &sigs()).unwrap();
        assert_eq!(p.ops.iter().map(|s| &s.op).collect::<Vec<_>>(), again.ops.iter().map(|s| &s.op).collect::<Vec<_>>());
    }
}
