//! Global-memory access traces.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{run_block, ArgValue, BlockContext, Trap};
use crate::mpmd::MpmdKernel;
use crate::types::Dim3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemEvent {
    pub write: bool,
    pub addr: u64,
    pub size: u32,
}

pub type MemoryTrace = Vec<MemEvent>;

/// Global accesses in issue order of a single worker running blocks
/// `0..grid.count()` in ascending order. Executing the kernel has its usual
/// effects on the argument buffers.
pub fn trace_accesses(
    k: &MpmdKernel,
    grid: Dim3,
    block: Dim3,
    args: &[ArgValue],
    dynamic_shared_bytes: usize,
) -> Result<MemoryTrace, Trap> {
    let mut trace = Vec::new();
    for b in 0..grid.count() {
        let mut ctx = BlockContext::new(grid.delinearize(b), block, grid, args, dynamic_shared_bytes);
        ctx.trace = Some(&mut trace);
        run_block(k, &mut ctx).map_err(|mut t| {
            t.block = Some(b);
            t
        })?;
    }
    Ok(trace)
}

/// One event per line: `R|W 0x<hex address> <bytes>`.
pub fn write_trace_text(trace: &[MemEvent]) -> String {
    let mut out = String::with_capacity(trace.len() * 16);
    for e in trace {
        let _ = writeln!(out, "{} {:#x} {}", if e.write { 'W' } else { 'R' }, e.addr, e.size);
    }
    out
}

/// 13 bytes per event: kind (0 = read, 1 = write), address, size; little-endian.
pub fn write_trace_binary(trace: &[MemEvent]) -> Vec<u8> {
    let mut out = Vec::with_capacity(trace.len() * 13);
    for e in trace {
        out.push(e.write as u8);
        out.extend_from_slice(&e.addr.to_le_bytes());
        out.extend_from_slice(&e.size.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceParseError {
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("binary trace length {0} is not a multiple of 13")]
    Truncated(usize),
    #[error("event {index}: bad kind byte {kind}")]
    Kind { index: usize, kind: u8 },
}

pub fn parse_trace_text(text: &str) -> Result<MemoryTrace, TraceParseError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| TraceParseError::Text { line: n + 1, message: message.to_string() };
        let mut it = line.split_whitespace();
        let write = match it.next() {
            Some("R") => false,
            Some("W") => true,
            _ => return Err(err("expected R or W")),
        };
        let addr = it.next().ok_or_else(|| err("missing address"))?;
        let addr = addr.strip_prefix("0x").or_else(|| addr.strip_prefix("0X")).unwrap_or(addr);
        let addr = u64::from_str_radix(addr, 16).map_err(|_| err("bad hex address"))?;
        let size = it.next().ok_or_else(|| err("missing size"))?.parse().map_err(|_| err("bad size"))?;
        if it.next().is_some() {
            return Err(err("trailing fields"));
        }
        out.push(MemEvent { write, addr, size });
    }
    Ok(out)
}

pub fn parse_trace_binary(bytes: &[u8]) -> Result<MemoryTrace, TraceParseError> {
    if bytes.len() % 13 != 0 {
        return Err(TraceParseError::Truncated(bytes.len()));
    }
    bytes
        .chunks_exact(13)
        .enumerate()
        .map(|(index, c)| {
            let write = match c[0] {
                0 => false,
                1 => true,
                kind => return Err(TraceParseError::Kind { index, kind }),
            };
            let addr = u64::from_le_bytes(c[1..9].try_into().expect("8 bytes"));
            let size = u32::from_le_bytes(c[9..13].try_into().expect("4 bytes"));
            Ok(MemEvent { write, addr, size })
        })
        .collect()
}
