//! Scalar arithmetic shared by both interpreters. Integer arithmetic wraps;
//! integer division and remainder by zero trap.

use super::TrapKind;
use crate::ir::MathFn;
use crate::lang::ast::{BinOp, UnOp};
use crate::types::Value;

fn bool_val(b: bool) -> Value {
    Value::I32(b as i32)
}

macro_rules! int_arith {
    ($op:expr, $a:expr, $b:expr, $bits:expr) => {{
        let (a, b) = ($a, $b);
        match $op {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return Err(TrapKind::DivByZero);
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return Err(TrapKind::DivByZero);
                }
                a.wrapping_rem(b)
            }
            BinOp::BitAnd => a & b,
            BinOp::BitOr => a | b,
            BinOp::BitXor => a ^ b,
            BinOp::Shl => a.wrapping_shl((b as u32) % $bits),
            BinOp::Shr => a.wrapping_shr((b as u32) % $bits),
            _ => unreachable!("comparison handled separately"),
        }
    }};
}

macro_rules! float_arith {
    ($op:expr, $a:expr, $b:expr) => {{
        let (a, b) = ($a, $b);
        match $op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Rem => a % b,
            _ => return Err(TrapKind::TypeFault(format!("operator `{}` on floats", $op.symbol()))),
        }
    }};
}

/// Non-short-circuit binary operator on operands of the same type.
pub fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, TrapKind> {
    if op.is_logical() {
        return Ok(bool_val(match op {
            BinOp::And => a.is_truthy() && b.is_truthy(),
            _ => a.is_truthy() || b.is_truthy(),
        }));
    }
    if op.is_comparison() {
        let ord = match (a, b) {
            (Value::I32(x), Value::I32(y)) => x.partial_cmp(&y),
            (Value::I64(x), Value::I64(y)) => x.partial_cmp(&y),
            (Value::F32(x), Value::F32(y)) => x.partial_cmp(&y),
            (Value::F64(x), Value::F64(y)) => x.partial_cmp(&y),
            _ => return Err(mismatch(a, b)),
        };
        use std::cmp::Ordering::*;
        return Ok(bool_val(match (op, ord) {
            (_, None) => op == BinOp::Ne,
            (BinOp::Lt, Some(o)) => o == Less,
            (BinOp::Le, Some(o)) => o != Greater,
            (BinOp::Gt, Some(o)) => o == Greater,
            (BinOp::Ge, Some(o)) => o != Less,
            (BinOp::Eq, Some(o)) => o == Equal,
            (BinOp::Ne, Some(o)) => o != Equal,
            _ => unreachable!(),
        }));
    }
    Ok(match (a, b) {
        (Value::I32(x), Value::I32(y)) => Value::I32(int_arith!(op, x, y, 32)),
        (Value::I64(x), Value::I64(y)) => Value::I64(int_arith!(op, x, y, 64)),
        (Value::F32(x), Value::F32(y)) => Value::F32(float_arith!(op, x, y)),
        (Value::F64(x), Value::F64(y)) => Value::F64(float_arith!(op, x, y)),
        _ => return Err(mismatch(a, b)),
    })
}

fn mismatch(a: Value, b: Value) -> TrapKind {
    TrapKind::TypeFault(format!("operand types {} and {} differ", a.ty(), b.ty()))
}

pub fn unary(op: UnOp, v: Value) -> Value {
    match op {
        UnOp::Not => bool_val(!v.is_truthy()),
        UnOp::Neg => match v {
            Value::I32(x) => Value::I32(x.wrapping_neg()),
            Value::I64(x) => Value::I64(x.wrapping_neg()),
            Value::F32(x) => Value::F32(-x),
            Value::F64(x) => Value::F64(-x),
        },
    }
}

pub fn math(f: MathFn, args: &[Value]) -> Result<Value, TrapKind> {
    Ok(match (f, args) {
        (MathFn::Min | MathFn::Max, [a, b]) => {
            let less = binary(BinOp::Lt, *a, *b)?.is_truthy();
            match (f, less) {
                (MathFn::Min, true) | (MathFn::Max, false) => *a,
                _ => *b,
            }
        }
        (MathFn::Abs, [v]) => match *v {
            Value::I32(x) => Value::I32(x.wrapping_abs()),
            Value::I64(x) => Value::I64(x.wrapping_abs()),
            Value::F32(x) => Value::F32(x.abs()),
            Value::F64(x) => Value::F64(x.abs()),
        },
        (MathFn::Sqrt, [v]) => match *v {
            Value::F32(x) => Value::F32(x.sqrt()),
            Value::F64(x) => Value::F64(x.sqrt()),
            other => return Err(TrapKind::TypeFault(format!("sqrt of {}", other.ty()))),
        },
        _ => return Err(TrapKind::TypeFault(format!("bad arity for {f:?}"))),
    })
}

/// `a + b` for atomic add on values of one type.
pub fn add(a: Value, b: Value) -> Result<Value, TrapKind> {
    binary(BinOp::Add, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_arithmetic_wraps() {
        assert_eq!(binary(BinOp::Add, Value::I32(i32::MAX), Value::I32(1)).unwrap(), Value::I32(i32::MIN));
        assert_eq!(binary(BinOp::Div, Value::I32(i32::MIN), Value::I32(-1)).unwrap(), Value::I32(i32::MIN));
        assert_eq!(binary(BinOp::Shr, Value::I32(16), Value::I32(2)).unwrap(), Value::I32(4));
    }

    #[test]
    fn division_by_zero_traps_for_ints_only() {
        assert_eq!(binary(BinOp::Rem, Value::I64(3), Value::I64(0)), Err(TrapKind::DivByZero));
        assert_eq!(binary(BinOp::Div, Value::F32(1.0), Value::F32(0.0)).unwrap(), Value::F32(f32::INFINITY));
    }

    #[test]
    fn comparisons_yield_i32() {
        assert_eq!(binary(BinOp::Le, Value::F64(1.0), Value::F64(1.0)).unwrap(), Value::I32(1));
        assert_eq!(binary(BinOp::Eq, Value::F32(f32::NAN), Value::F32(f32::NAN)).unwrap(), Value::I32(0));
        assert_eq!(binary(BinOp::Ne, Value::F32(f32::NAN), Value::F32(f32::NAN)).unwrap(), Value::I32(1));
    }

    #[test]
    fn mixed_types_are_a_fault() {
        assert!(matches!(binary(BinOp::Add, Value::I32(1), Value::I64(1)), Err(TrapKind::TypeFault(_))));
    }

    #[test]
    fn min_max_abs_sqrt() {
        assert_eq!(math(MathFn::Min, &[Value::I32(3), Value::I32(-2)]).unwrap(), Value::I32(-2));
        assert_eq!(math(MathFn::Max, &[Value::F64(0.5), Value::F64(1.5)]).unwrap(), Value::F64(1.5));
        assert_eq!(math(MathFn::Abs, &[Value::I64(-7)]).unwrap(), Value::I64(7));
        assert_eq!(math(MathFn::Sqrt, &[Value::F32(9.0)]).unwrap(), Value::F32(3.0));
    }
}
