//! Scalar types, runtime values and launch dimensions shared by every stage.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    I32,
    I64,
    F32,
    F64,
}

impl ScalarType {
    pub const ALL: [ScalarType; 4] = [ScalarType::I32, ScalarType::I64, ScalarType::F32, ScalarType::F64];

    pub fn size_bytes(self) -> usize {
        match self {
            ScalarType::I32 | ScalarType::F32 => 4,
            ScalarType::I64 | ScalarType::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    pub fn is_int(self) -> bool {
        !self.is_float()
    }

    /// Rank used by the usual arithmetic conversions: the wider operand wins.
    fn rank(self) -> u8 {
        match self {
            ScalarType::I32 => 0,
            ScalarType::I64 => 1,
            ScalarType::F32 => 2,
            ScalarType::F64 => 3,
        }
    }

    pub fn common(a: ScalarType, b: ScalarType) -> ScalarType {
        if a.rank() >= b.rank() {
            a
        } else {
            b
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I32 => "i32",
            ScalarType::I64 => "i64",
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
        }
    }

    pub fn from_name(s: &str) -> Option<ScalarType> {
        match s {
            "i32" => Some(ScalarType::I32),
            "i64" => Some(ScalarType::I64),
            "f32" => Some(ScalarType::F32),
            "f64" => Some(ScalarType::F64),
            _ => None,
        }
    }

    pub fn zero(self) -> Value {
        Value::I32(0).convert(self)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scalar runtime value. Conversions follow C cast semantics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
}

impl Value {
    pub fn ty(self) -> ScalarType {
        match self {
            Value::I32(_) => ScalarType::I32,
            Value::I64(_) => ScalarType::I64,
            Value::F32(_) => ScalarType::F32,
            Value::F64(_) => ScalarType::F64,
        }
    }

    pub fn convert(self, to: ScalarType) -> Value {
        match to {
            ScalarType::I32 => Value::I32(match self {
                Value::I32(v) => v,
                Value::I64(v) => v as i32,
                Value::F32(v) => v as i32,
                Value::F64(v) => v as i32,
            }),
            ScalarType::I64 => Value::I64(match self {
                Value::I32(v) => v as i64,
                Value::I64(v) => v,
                Value::F32(v) => v as i64,
                Value::F64(v) => v as i64,
            }),
            ScalarType::F32 => Value::F32(match self {
                Value::I32(v) => v as f32,
                Value::I64(v) => v as f32,
                Value::F32(v) => v,
                Value::F64(v) => v as f32,
            }),
            ScalarType::F64 => Value::F64(match self {
                Value::I32(v) => v as f64,
                Value::I64(v) => v as f64,
                Value::F32(v) => v as f64,
                Value::F64(v) => v,
            }),
        }
    }

    pub fn is_truthy(self) -> bool {
        match self {
            Value::I32(v) => v != 0,
            Value::I64(v) => v != 0,
            Value::F32(v) => v != 0.0,
            Value::F64(v) => v != 0.0,
        }
    }

    /// Index value as a signed 64-bit integer, truncating floats.
    pub fn as_i64(self) -> i64 {
        match self {
            Value::I32(v) => v as i64,
            Value::I64(v) => v,
            Value::F32(v) => v as i64,
            Value::F64(v) => v as i64,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Value::I32(v) => v as f64,
            Value::I64(v) => v as f64,
            Value::F32(v) => v as f64,
            Value::F64(v) => v,
        }
    }

    /// Raw little-endian bit pattern, zero-extended to 64 bits.
    pub fn to_bits(self) -> u64 {
        match self {
            Value::I32(v) => v as u32 as u64,
            Value::I64(v) => v as u64,
            Value::F32(v) => v.to_bits() as u64,
            Value::F64(v) => v.to_bits(),
        }
    }

    pub fn from_bits(ty: ScalarType, bits: u64) -> Value {
        match ty {
            ScalarType::I32 => Value::I32(bits as u32 as i32),
            ScalarType::I64 => Value::I64(bits as i64),
            ScalarType::F32 => Value::F32(f32::from_bits(bits as u32)),
            ScalarType::F64 => Value::F64(f64::from_bits(bits)),
        }
    }

    /// Bit-level equality, so NaN payloads and signed zeros compare exactly.
    pub fn bit_eq(self, other: Value) -> bool {
        self.ty() == other.ty() && self.to_bits() == other.to_bits()
    }

    pub fn write_le(self, out: &mut Vec<u8>) {
        match self {
            Value::I32(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::I64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::F32(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::F64(v) => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    pub fn read_le(ty: ScalarType, bytes: &[u8]) -> Option<Value> {
        let n = ty.size_bytes();
        if bytes.len() < n {
            return None;
        }
        let mut raw = [0u8; 8];
        raw[..n].copy_from_slice(&bytes[..n]);
        Some(Value::from_bits(ty, u64::from_le_bytes(raw)))
    }

    /// Parses a literal of the given type; integers are accepted for float types.
    pub fn parse_as(ty: ScalarType, text: &str) -> Option<Value> {
        match ty {
            ScalarType::I32 => text.parse::<i32>().ok().map(Value::I32),
            ScalarType::I64 => text.parse::<i64>().ok().map(Value::I64),
            ScalarType::F32 => text.parse::<f32>().ok().map(Value::F32),
            ScalarType::F64 => text.parse::<f64>().ok().map(Value::F64),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I32(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}"),
            Value::F32(v) => write!(f, "{v:?}"),
            Value::F64(v) => write!(f, "{v:?}"),
        }
    }
}

/// Grid or block extent. All components are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dim3 {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid dimension ({x}, {y}, {z}): components must be >= 1 and the product must fit in 2^31-1")]
pub struct DimError {
    pub x: u64,
    pub y: u64,
    pub z: u64,
}

impl Dim3 {
    pub const ONE: Dim3 = Dim3 { x: 1, y: 1, z: 1 };

    pub fn new(x: u32, y: u32, z: u32) -> Result<Dim3, DimError> {
        let product = x as u64 * y as u64 * z as u64;
        if x == 0 || y == 0 || z == 0 || product > i32::MAX as u64 {
            return Err(DimError { x: x as u64, y: y as u64, z: z as u64 });
        }
        Ok(Dim3 { x, y, z })
    }

    pub fn linear(x: u32) -> Dim3 {
        Dim3::new(x, 1, 1).expect("1-D dimension out of range")
    }

    pub fn count(&self) -> usize {
        self.x as usize * self.y as usize * self.z as usize
    }

    /// Inverse of `((z * dim.y) + y) * dim.x + x`.
    pub fn delinearize(&self, id: usize) -> Dim3 {
        let x = id % self.x as usize;
        let y = (id / self.x as usize) % self.y as usize;
        let z = id / (self.x as usize * self.y as usize);
        Dim3 { x: x as u32, y: y as u32, z: z as u32 }
    }

    pub fn linearize(&self, idx: Dim3) -> usize {
        (idx.z as usize * self.y as usize + idx.y as usize) * self.x as usize + idx.x as usize
    }

    pub fn component(&self, axis: Axis) -> u32 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }
}

impl fmt::Display for Dim3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dim3_rejects_zero_and_overflow() {
        assert!(Dim3::new(0, 1, 1).is_err());
        assert!(Dim3::new(1 << 16, 1 << 16, 1).is_err());
        assert_eq!(Dim3::new(4, 2, 2).unwrap().count(), 16);
    }

    #[test]
    fn delinearize_matches_linearize() {
        let d = Dim3::new(3, 4, 5).unwrap();
        for id in 0..d.count() {
            assert_eq!(d.linearize(d.delinearize(id)), id);
        }
        assert_eq!(d.delinearize(13), Dim3 { x: 1, y: 0, z: 1 });
    }

    #[test]
    fn bits_round_trip() {
        for v in [Value::I32(-7), Value::I64(i64::MIN), Value::F32(-0.0), Value::F64(f64::NAN)] {
            assert!(Value::from_bits(v.ty(), v.to_bits()).bit_eq(v));
            let mut buf = Vec::new();
            v.write_le(&mut buf);
            assert!(Value::read_le(v.ty(), &buf).unwrap().bit_eq(v));
        }
    }
}
