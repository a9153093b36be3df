//! Launch-parameter packing.
//!
//! A launch boxes every argument into its own byte slot, in parameter
//! order: scalars as their little-endian bits, global buffers as a 4-byte
//! handle. The unpack prologue turns the slots back into typed values
//! before the first section runs.

use serde::Serialize;

use crate::exec::{ArenaError, ArgValue, DeviceArena, Handle};
use crate::lang::ast::{Param, ParamType};
use crate::types::Value;

/// A launch argument before packing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    Scalar(Value),
    Buffer(Handle),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PackedArgs {
    slots: Vec<Box<[u8]>>,
}

impl PackedArgs {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, i: usize) -> Option<&[u8]> {
        self.slots.get(i).map(|s| &s[..])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PackError {
    #[error("expected {expected} arguments, got {got}")]
    Count { expected: usize, got: usize },
    #[error("argument {index} (`{name}`) should be {expected}")]
    TypeMismatch { index: usize, name: String, expected: String },
    #[error("slot {index} holds {got} bytes, expected {expected}")]
    SlotSize { index: usize, expected: usize, got: usize },
    #[error("argument {index} (`{name}`): {source}")]
    Arena { index: usize, name: String, source: ArenaError },
}

fn mismatch(i: usize, p: &Param) -> PackError {
    PackError::TypeMismatch { index: i, name: p.name.clone(), expected: p.ptype.to_string() }
}

pub fn pack_params(sig: &[Param], args: &[KernelArg]) -> Result<PackedArgs, PackError> {
    if sig.len() != args.len() {
        return Err(PackError::Count { expected: sig.len(), got: args.len() });
    }
    let mut slots = Vec::with_capacity(args.len());
    for (i, (p, a)) in sig.iter().zip(args).enumerate() {
        let mut bytes = Vec::with_capacity(8);
        match (p.ptype, a) {
            (ParamType::Scalar(t), KernelArg::Scalar(v)) if v.ty() == t => v.write_le(&mut bytes),
            (ParamType::GlobalRef(_), KernelArg::Buffer(h)) => bytes.extend_from_slice(&h.0.to_le_bytes()),
            _ => return Err(mismatch(i, p)),
        }
        slots.push(bytes.into_boxed_slice());
    }
    Ok(PackedArgs { slots })
}

fn slot_size(p: ParamType) -> usize {
    match p {
        ParamType::Scalar(t) => t.size_bytes(),
        ParamType::GlobalRef(_) => 4,
    }
}

pub fn unpack_params(sig: &[Param], packed: &PackedArgs) -> Result<Vec<KernelArg>, PackError> {
    if sig.len() != packed.slots.len() {
        return Err(PackError::Count { expected: sig.len(), got: packed.slots.len() });
    }
    sig.iter()
        .zip(&packed.slots)
        .enumerate()
        .map(|(i, (p, s))| {
            let want = slot_size(p.ptype);
            if s.len() != want {
                return Err(PackError::SlotSize { index: i, expected: want, got: s.len() });
            }
            Ok(match p.ptype {
                ParamType::Scalar(t) => KernelArg::Scalar(Value::read_le(t, s).expect("slot size checked")),
                ParamType::GlobalRef(_) => KernelArg::Buffer(Handle(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))),
            })
        })
        .collect()
}

/// The unpack prologue: slots to values, handles to live buffers whose
/// element type matches the parameter.
pub fn resolve_args(sig: &[Param], packed: &PackedArgs, arena: &DeviceArena) -> Result<Vec<ArgValue>, PackError> {
    let raw = unpack_params(sig, packed)?;
    sig.iter()
        .zip(raw)
        .enumerate()
        .map(|(i, (p, a))| match a {
            KernelArg::Scalar(v) => Ok(ArgValue::Scalar(v)),
            KernelArg::Buffer(h) => {
                let b = arena
                    .get(h)
                    .map_err(|source| PackError::Arena { index: i, name: p.name.clone(), source })?;
                if b.ty() != p.ptype.elem() {
                    return Err(mismatch(i, p));
                }
                Ok(ArgValue::Buffer(b))
            }
        })
        .collect()
}

/// Byte width of a packed argument list, for reporting.
pub fn packed_bytes(packed: &PackedArgs) -> usize {
    packed.slots.iter().map(|s| s.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::ast::Span;
    use crate::types::ScalarType;

    fn param(name: &str, ptype: ParamType) -> Param {
        Param { name: name.into(), ptype, span: Span::default() }
    }

    #[test]
    fn dynamic_reverse_packs_handle_then_scalar() {
        let sig = [param("d", ParamType::GlobalRef(ScalarType::I32)), param("n", ParamType::Scalar(ScalarType::I32))];
        let args = [KernelArg::Buffer(Handle(3)), KernelArg::Scalar(Value::I32(8))];
        let p = pack_params(&sig, &args).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.slot(0).unwrap(), &3u32.to_le_bytes());
        assert_eq!(p.slot(1).unwrap(), &8i32.to_le_bytes());
        assert_eq!(unpack_params(&sig, &p).unwrap(), args);
    }

    #[test]
    fn zero_params_pack_to_nothing() {
        let p = pack_params(&[], &[]).unwrap();
        assert!(p.is_empty());
        assert!(unpack_params(&[], &p).unwrap().is_empty());
    }

    #[test]
    fn wrong_scalar_type_is_rejected() {
        let sig = [param("n", ParamType::Scalar(ScalarType::I32))];
        let err = pack_params(&sig, &[KernelArg::Scalar(Value::I64(1))]).unwrap_err();
        assert!(matches!(err, PackError::TypeMismatch { index: 0, .. }));
        let err = pack_params(&sig, &[KernelArg::Buffer(Handle(0))]).unwrap_err();
        assert!(matches!(err, PackError::TypeMismatch { .. }));
    }

    #[test]
    fn resolve_checks_buffer_element_type() {
        let arena = DeviceArena::new();
        let h = arena.alloc(ScalarType::F32, 4);
        let sig = [param("d", ParamType::GlobalRef(ScalarType::I32))];
        let p = pack_params(&sig, &[KernelArg::Buffer(h)]).unwrap();
        assert!(matches!(resolve_args(&sig, &p, &arena), Err(PackError::TypeMismatch { .. })));
        arena.free(h).unwrap();
        let sig = [param("d", ParamType::GlobalRef(ScalarType::F32))];
        assert!(matches!(resolve_args(&sig, &p, &arena), Err(PackError::Arena { .. })));
    }
}
