//! Device global memory: handle-addressed buffers on the host heap.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::types::{ScalarType, Value};

/// Synthetic address alignment of buffer bases (one cache line).
pub const BASE_ALIGN: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Handle(pub u32);

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug)]
enum Cells {
    W32(Vec<AtomicU32>),
    W64(Vec<AtomicU64>),
}

/// A typed buffer whose elements may be accessed concurrently. Plain loads
/// and stores are relaxed; read-modify-write operations are indivisible.
#[derive(Debug)]
pub struct Buffer {
    handle: Handle,
    ty: ScalarType,
    base: u64,
    cells: Cells,
}

impl Buffer {
    fn new(handle: Handle, ty: ScalarType, len: usize, base: u64) -> Buffer {
        let cells = match ty.size_bytes() {
            4 => Cells::W32((0..len).map(|_| AtomicU32::new(0)).collect()),
            _ => Cells::W64((0..len).map(|_| AtomicU64::new(0)).collect()),
        };
        Buffer { handle, ty, base, cells }
    }

    pub fn handle(&self) -> Handle {
        self.handle
    }

    pub fn ty(&self) -> ScalarType {
        self.ty
    }

    pub fn len(&self) -> usize {
        match &self.cells {
            Cells::W32(c) => c.len(),
            Cells::W64(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Synthetic byte address of element 0.
    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn address(&self, index: usize) -> u64 {
        self.base + (index * self.ty.size_bytes()) as u64
    }

    fn raw_load(&self, i: usize) -> u64 {
        match &self.cells {
            Cells::W32(c) => c[i].load(Ordering::Relaxed) as u64,
            Cells::W64(c) => c[i].load(Ordering::Relaxed),
        }
    }

    fn raw_store(&self, i: usize, bits: u64) {
        match &self.cells {
            Cells::W32(c) => c[i].store(bits as u32, Ordering::Relaxed),
            Cells::W64(c) => c[i].store(bits, Ordering::Relaxed),
        }
    }

    fn raw_cas(&self, i: usize, current: u64, new: u64) -> Result<u64, u64> {
        match &self.cells {
            Cells::W32(c) => c[i]
                .compare_exchange(current as u32, new as u32, Ordering::AcqRel, Ordering::Acquire)
                .map(u64::from)
                .map_err(u64::from),
            Cells::W64(c) => c[i].compare_exchange(current, new, Ordering::AcqRel, Ordering::Acquire),
        }
    }

    /// Panics if `i` is out of bounds; callers check bounds first.
    pub fn load(&self, i: usize) -> Value {
        Value::from_bits(self.ty, self.raw_load(i))
    }

    pub fn store(&self, i: usize, v: Value) {
        self.raw_store(i, v.convert(self.ty).to_bits());
    }

    /// Indivisible `x += v`, returning the old value. Float adds retry a
    /// compare-and-swap, so their rounding order depends on the schedule.
    pub fn atomic_add(&self, i: usize, v: Value) -> Value {
        let v = v.convert(self.ty);
        match (&self.cells, v) {
            (Cells::W32(c), Value::I32(x)) => Value::I32(c[i].fetch_add(x as u32, Ordering::AcqRel) as i32),
            (Cells::W64(c), Value::I64(x)) => Value::I64(c[i].fetch_add(x as u64, Ordering::AcqRel) as i64),
            _ => {
                let mut cur = self.raw_load(i);
                loop {
                    let old = Value::from_bits(self.ty, cur);
                    let new = super::ops::add(old, v).expect("operands share the buffer type");
                    match self.raw_cas(i, cur, new.to_bits()) {
                        Ok(_) => return old,
                        Err(actual) => cur = actual,
                    }
                }
            }
        }
    }

    /// Indivisible `if x == compare { x = value }`, returning the old value.
    /// Comparison is bitwise.
    pub fn atomic_cas(&self, i: usize, compare: Value, value: Value) -> Value {
        let c = compare.convert(self.ty).to_bits();
        let n = value.convert(self.ty).to_bits();
        let old = match self.raw_cas(i, c, n) {
            Ok(o) | Err(o) => o,
        };
        Value::from_bits(self.ty, old)
    }

    pub fn to_values(&self) -> Vec<Value> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    pub fn fill(&self, values: &[Value]) {
        for (i, v) in values.iter().enumerate().take(self.len()) {
            self.store(i, *v);
        }
    }

    /// Raw little-endian image of the buffer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.ty.size_bytes());
        for i in 0..self.len() {
            self.load(i).write_le(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArenaError {
    #[error("unknown or freed buffer handle {0}")]
    UnknownHandle(Handle),
    #[error("buffer {handle} holds {len} elements, got {got}")]
    LengthMismatch { handle: Handle, len: usize, got: usize },
}

#[derive(Debug, Default)]
struct Inner {
    buffers: BTreeMap<Handle, Arc<Buffer>>,
    next_handle: u32,
    next_base: u64,
}

/// Handle-addressed buffer store. Handles increase monotonically and are
/// never reused; synthetic base addresses are assigned in allocation order,
/// aligned to [`BASE_ALIGN`], and are not reclaimed by `free`.
#[derive(Debug, Default)]
pub struct DeviceArena {
    inner: Mutex<Inner>,
}

impl DeviceArena {
    pub fn new() -> DeviceArena {
        DeviceArena::default()
    }

    pub fn alloc(&self, ty: ScalarType, len: usize) -> Handle {
        let mut g = self.inner.lock().expect("arena lock");
        let h = Handle(g.next_handle);
        g.next_handle += 1;
        let base = g.next_base;
        let end = base + (len * ty.size_bytes()) as u64;
        g.next_base = end.div_ceil(BASE_ALIGN) * BASE_ALIGN;
        g.buffers.insert(h, Arc::new(Buffer::new(h, ty, len, base)));
        h
    }

    pub fn get(&self, h: Handle) -> Result<Arc<Buffer>, ArenaError> {
        self.inner.lock().expect("arena lock").buffers.get(&h).cloned().ok_or(ArenaError::UnknownHandle(h))
    }

    pub fn free(&self, h: Handle) -> Result<(), ArenaError> {
        self.inner.lock().expect("arena lock").buffers.remove(&h).map(|_| ()).ok_or(ArenaError::UnknownHandle(h))
    }

    pub fn upload(&self, h: Handle, values: &[Value]) -> Result<(), ArenaError> {
        let b = self.get(h)?;
        if values.len() != b.len() {
            return Err(ArenaError::LengthMismatch { handle: h, len: b.len(), got: values.len() });
        }
        b.fill(values);
        Ok(())
    }

    pub fn download(&self, h: Handle) -> Result<Vec<Value>, ArenaError> {
        Ok(self.get(h)?.to_values())
    }

    pub fn live_handles(&self) -> Vec<Handle> {
        self.inner.lock().expect("arena lock").buffers.keys().copied().collect()
    }
}
