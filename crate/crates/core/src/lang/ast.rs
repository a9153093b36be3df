//! Surface syntax tree for the kernel language.

use std::fmt;

use serde::Serialize;

use crate::types::{Axis, ScalarType};

/// Byte range plus line/column of the first character.
///
/// Spans never take part in structural equality: two trees that differ only
/// in where they came from compare equal.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelProgram {
    pub name: String,
    pub params: Vec<Param>,
    /// `shared` and `extern shared` declarations, in source order.
    pub shared: Vec<SharedDecl>,
    pub body: Block,
    pub span: Span,
}

impl KernelProgram {
    pub fn static_shared(&self) -> impl Iterator<Item = &SharedDecl> {
        self.shared.iter().filter(|d| d.len.is_some())
    }

    pub fn dynamic_shared(&self) -> Option<&SharedDecl> {
        self.shared.iter().find(|d| d.len.is_none())
    }

    pub fn barrier_count(&self) -> usize {
        fn count(block: &Block) -> usize {
            block
                .stmts
                .iter()
                .map(|s| match &s.kind {
                    StmtKind::Barrier => 1,
                    StmtKind::If { then_block, else_block, .. } => {
                        count(then_block) + else_block.as_ref().map_or(0, count)
                    }
                    StmtKind::For { body, .. } => count(body),
                    _ => 0,
                })
                .sum()
        }
        count(&self.body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Scalar(ScalarType),
    GlobalRef(ScalarType),
}

impl ParamType {
    pub fn elem(self) -> ScalarType {
        match self {
            ParamType::Scalar(t) | ParamType::GlobalRef(t) => t,
        }
    }

    pub fn is_global(self) -> bool {
        matches!(self, ParamType::GlobalRef(_))
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamType::Scalar(t) => write!(f, "{t}"),
            ParamType::GlobalRef(t) => write!(f, "global {t}[]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub name: String,
    pub ptype: ParamType,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharedDecl {
    pub name: String,
    pub ty: ScalarType,
    /// `None` for the `extern shared` array sized at launch.
    pub len: Option<u32>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StmtKind {
    LocalDecl {
        name: String,
        ty: ScalarType,
        init: Expr,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    If {
        cond: Expr,
        then_block: Block,
        else_block: Option<Block>,
    },
    /// `for (c = lo; c < hi; c += step) body`. `hi` and `step` are
    /// re-evaluated on every iteration, as in C.
    For {
        counter: String,
        lo: Expr,
        hi: Expr,
        step: Expr,
        body: Block,
    },
    Barrier,
    Atomic {
        kind: AtomicKind,
        target: LValue,
        operand: Expr,
        /// New value for `atomic_cas`; `operand` is then the compare value.
        replacement: Option<Expr>,
    },
    Noop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomicKind {
    Add,
    Cas,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LValue {
    Var { name: String, span: Span },
    Index { array: String, index: Box<Expr>, span: Span },
}

impl LValue {
    pub fn span(&self) -> Span {
        match self {
            LValue::Var { span, .. } | LValue::Index { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprKind {
    IntLit(i64),
    FloatLit(f64),
    Var(String),
    Builtin(Builtin),
    Index { array: String, index: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Unary { op: UnOp, expr: Box<Expr> },
    Call { func: Intrinsic, args: Vec<Expr> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Builtin {
    pub var: BuiltinVar,
    pub axis: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinVar {
    ThreadIdx,
    BlockIdx,
    BlockDim,
    GridDim,
}

impl BuiltinVar {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinVar::ThreadIdx => "threadIdx",
            BuiltinVar::BlockIdx => "blockIdx",
            BuiltinVar::BlockDim => "blockDim",
            BuiltinVar::GridDim => "gridDim",
        }
    }

    pub fn from_name(s: &str) -> Option<BuiltinVar> {
        match s {
            "threadIdx" => Some(BuiltinVar::ThreadIdx),
            "blockIdx" => Some(BuiltinVar::BlockIdx),
            "blockDim" => Some(BuiltinVar::BlockDim),
            "gridDim" => Some(BuiltinVar::GridDim),
            _ => None,
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.var.name(), self.axis.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
        }
    }

    /// Binding power; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::BitOr => 3,
            BinOp::BitXor => 4,
            BinOp::BitAnd => 5,
            BinOp::Eq | BinOp::Ne => 6,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 7,
            BinOp::Shl | BinOp::Shr => 8,
            BinOp::Add | BinOp::Sub => 9,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 10,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }

    pub fn is_integer_only(self) -> bool {
        matches!(self, BinOp::Rem | BinOp::BitAnd | BinOp::BitOr | BinOp::BitXor | BinOp::Shl | BinOp::Shr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Intrinsic {
    Min,
    Max,
    Abs,
    Sqrt,
    ShflDown,
    VoteAny,
    VoteAll,
}

impl Intrinsic {
    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Min => "min",
            Intrinsic::Max => "max",
            Intrinsic::Abs => "abs",
            Intrinsic::Sqrt => "sqrt",
            Intrinsic::ShflDown => "shfl_down",
            Intrinsic::VoteAny => "vote_any",
            Intrinsic::VoteAll => "vote_all",
        }
    }

    pub fn from_name(s: &str) -> Option<Intrinsic> {
        Some(match s {
            "min" => Intrinsic::Min,
            "max" => Intrinsic::Max,
            "abs" => Intrinsic::Abs,
            "sqrt" => Intrinsic::Sqrt,
            "shfl_down" => Intrinsic::ShflDown,
            "vote_any" => Intrinsic::VoteAny,
            "vote_all" => Intrinsic::VoteAll,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Intrinsic::Min | Intrinsic::Max | Intrinsic::ShflDown => 2,
            Intrinsic::Abs | Intrinsic::Sqrt | Intrinsic::VoteAny | Intrinsic::VoteAll => 1,
        }
    }

    pub fn is_warp(self) -> bool {
        matches!(self, Intrinsic::ShflDown | Intrinsic::VoteAny | Intrinsic::VoteAll)
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Expr {
        Expr { kind, span }
    }

    /// Pre-order visit of this expression and every subexpression.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Index { index, .. } => index.walk(f),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            ExprKind::Unary { expr, .. } => expr.walk(f),
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            ExprKind::IntLit(_) | ExprKind::FloatLit(_) | ExprKind::Var(_) | ExprKind::Builtin(_) => {}
        }
    }

    pub fn contains_warp_call(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let ExprKind::Call { func, .. } = &e.kind {
                found |= func.is_warp();
            }
        });
        found
    }
}

impl Stmt {
    /// Expressions evaluated directly by this statement (not by nested blocks).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        fn lvalue_exprs(lv: &LValue) -> Option<&Expr> {
            match lv {
                LValue::Index { index, .. } => Some(index),
                LValue::Var { .. } => None,
            }
        }
        match &self.kind {
            StmtKind::LocalDecl { init, .. } => vec![init],
            StmtKind::Assign { target, value } => lvalue_exprs(target).into_iter().chain([value]).collect(),
            StmtKind::If { cond, .. } => vec![cond],
            StmtKind::For { lo, hi, step, .. } => vec![lo, hi, step],
            StmtKind::Atomic { target, operand, replacement, .. } => lvalue_exprs(target)
                .into_iter()
                .chain([operand])
                .chain(replacement.as_ref())
                .collect(),
            StmtKind::Barrier | StmtKind::Noop => Vec::new(),
        }
    }
}
