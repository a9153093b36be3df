//! Kernel execution: the block-fused interpreter used by the runtime, the
//! per-thread reference interpreter used as the oracle, memory tracing and
//! the serial race detector.

mod arena;
mod interp;
mod ops;
mod race;
mod reference;
mod trace;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::lang::ast::{Param, ParamType, Span};
use crate::types::{ScalarType, Value};

pub use arena::{ArenaError, Buffer, DeviceArena, Handle, BASE_ALIGN};
pub use interp::{run_block, BlockContext};
pub use race::{detect_races, RaceReport};
pub use reference::{run_reference, Reference};
pub use trace::{
    parse_trace_binary, parse_trace_text, trace_accesses, write_trace_binary, write_trace_text, MemEvent, MemoryTrace,
    TraceParseError,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    OutOfBounds { array: String, index: i64, len: usize },
    DivByZero,
    TypeFault(String),
    NonUniformTrip,
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrapKind::OutOfBounds { array, index, len } => {
                write!(f, "index {index} out of bounds for {array} (length {len})")
            }
            TrapKind::DivByZero => f.write_str("integer division by zero"),
            TrapKind::TypeFault(m) => write!(f, "type fault: {m}"),
            TrapKind::NonUniformTrip => f.write_str("uniform loop bounds differ between threads"),
        }
    }
}

/// A runtime fault with its location. `section` is the thread-loop index in
/// the block-fused kernel, or the barrier phase in the reference interpreter.
#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{kind} in kernel {kernel}, block {}, section {section}, thread {tid} at {span}", block.map(|b| b.to_string()).unwrap_or_else(|| "?".into()))]
pub struct Trap {
    pub kind: TrapKind,
    pub kernel: String,
    pub block: Option<usize>,
    pub section: usize,
    pub tid: usize,
    pub span: Span,
}

/// An unpacked kernel argument.
#[derive(Debug, Clone)]
pub enum ArgValue {
    Scalar(Value),
    Buffer(Arc<Buffer>),
}

impl ArgValue {
    pub fn scalar(&self) -> Option<Value> {
        match self {
            ArgValue::Scalar(v) => Some(*v),
            ArgValue::Buffer(_) => None,
        }
    }

    pub fn buffer(&self) -> Option<&Arc<Buffer>> {
        match self {
            ArgValue::Buffer(b) => Some(b),
            ArgValue::Scalar(_) => None,
        }
    }
}

/// Checks unpacked arguments against a kernel signature.
pub fn check_args(params: &[Param], args: &[ArgValue]) -> Result<(), String> {
    if params.len() != args.len() {
        return Err(format!("expected {} arguments, got {}", params.len(), args.len()));
    }
    for (p, a) in params.iter().zip(args) {
        let ok = match (p.ptype, a) {
            (ParamType::Scalar(t), ArgValue::Scalar(v)) => v.ty() == t,
            (ParamType::GlobalRef(t), ArgValue::Buffer(b)) => b.ty() == t,
            _ => false,
        };
        if !ok {
            return Err(format!("argument for `{}` does not match its type", p.name));
        }
    }
    Ok(())
}

/// Element index check shared by both interpreters.
pub(crate) fn check_index(name: &str, index: Value, len: usize) -> Result<usize, TrapKind> {
    let i = index.as_i64();
    if i < 0 || i as u64 >= len as u64 {
        return Err(TrapKind::OutOfBounds { array: name.to_string(), index: i, len });
    }
    Ok(i as usize)
}

pub(crate) fn elem_count(bytes: usize, ty: ScalarType) -> usize {
    bytes / ty.size_bytes()
}
