//! Recursive-descent parser for `.kn` sources.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;
use crate::types::{Axis, ScalarType};

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

const STMT_START: &[&str] = &["`let`", "`if`", "`for`", "`barrier`", "`atomic_add`", "`atomic_cas`", "identifier", "`;`"];

impl Parser {
    pub fn new(src: &str) -> Result<Parser, ParseError> {
        Ok(Parser { toks: tokenize(src)?, pos: 0 })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        let t = self.peek();
        Err(ParseError::new(t.span, expected.iter().map(|s| s.to_string()).collect(), t.tok.to_string()))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> Result<Span, ParseError> {
        if self.is_punct(p) {
            Ok(self.bump().span)
        } else {
            self.err(&[&format!("`{p}`")])
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<Span, ParseError> {
        if self.is_keyword(kw) {
            Ok(self.bump().span)
        } else {
            self.err(&[&format!("`{kw}`")])
        }
    }

    fn expect_ident(&mut self) -> Result<(String, Span), ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                Ok((s, self.bump().span))
            }
            _ => self.err(&["identifier"]),
        }
    }

    fn expect_scalar(&mut self) -> Result<ScalarType, ParseError> {
        if let Tok::Ident(s) = &self.peek().tok {
            if let Some(t) = ScalarType::from_name(s) {
                self.bump();
                return Ok(t);
            }
        }
        self.err(&["`i32`", "`i64`", "`f32`", "`f64`"])
    }

    fn expect_empty_brackets(&mut self) -> Result<(), ParseError> {
        if self.eat_punct("[]") {
            return Ok(());
        }
        self.expect_punct("[")?;
        self.expect_punct("]")?;
        Ok(())
    }

    fn join(a: Span, b: Span) -> Span {
        Span { start: a.start, end: b.end.max(a.end), line: a.line, col: a.col }
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    pub fn parse_unit(&mut self) -> Result<Vec<KernelProgram>, ParseError> {
        let mut kernels = Vec::new();
        while self.peek().tok != Tok::Eof {
            kernels.push(self.parse_kernel()?);
        }
        Ok(kernels)
    }

    pub fn parse_kernel(&mut self) -> Result<KernelProgram, ParseError> {
        let start = self.expect_keyword("kernel")?;
        let (name, _) = self.expect_ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                params.push(self.parse_param()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        let mut shared = Vec::new();
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if self.is_keyword("shared") || self.is_keyword("extern") {
                shared.push(self.parse_shared_decl()?);
            } else {
                stmts.push(self.parse_stmt()?);
            }
        }
        let end = self.expect_punct("}")?;
        Ok(KernelProgram { name, params, shared, body: Block { stmts }, span: Self::join(start, end) })
    }

    fn parse_param(&mut self) -> Result<Param, ParseError> {
        let (name, span) = self.expect_ident()?;
        self.expect_punct(":")?;
        let ptype = if self.is_keyword("global") {
            self.bump();
            let t = self.expect_scalar()?;
            self.expect_empty_brackets()?;
            ParamType::GlobalRef(t)
        } else if let Tok::Ident(s) = &self.peek().tok {
            match ScalarType::from_name(s) {
                Some(t) => {
                    self.bump();
                    ParamType::Scalar(t)
                }
                None => return self.err(&["`global`", "`i32`", "`i64`", "`f32`", "`f64`"]),
            }
        } else {
            return self.err(&["`global`", "`i32`", "`i64`", "`f32`", "`f64`"]);
        };
        Ok(Param { name, ptype, span: Self::join(span, self.prev_span()) })
    }

    fn parse_shared_decl(&mut self) -> Result<SharedDecl, ParseError> {
        let start = self.peek().span;
        let dynamic = if self.is_keyword("extern") {
            self.bump();
            true
        } else {
            false
        };
        self.expect_keyword("shared")?;
        let ty = self.expect_scalar()?;
        let (name, _) = self.expect_ident()?;
        let len = if dynamic {
            self.expect_empty_brackets()?;
            None
        } else {
            self.expect_punct("[")?;
            let len = match self.peek().tok {
                Tok::Int(v) if v > 0 && v <= u32::MAX as i64 => {
                    self.bump();
                    v as u32
                }
                _ => return self.err(&["positive array length"]),
            };
            self.expect_punct("]")?;
            Some(len)
        };
        let end = self.expect_punct(";")?;
        Ok(SharedDecl { name, ty, len, span: Self::join(start, end) })
    }

    fn parse_block(&mut self) -> Result<Block, ParseError> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if self.peek().tok == Tok::Eof {
                return self.err(&["`}`"]);
            }
            stmts.push(self.parse_stmt()?);
        }
        self.bump();
        Ok(Block { stmts })
    }

    fn parse_stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.peek().span;
        let kind = match &self.peek().tok {
            Tok::Punct(";") => {
                self.bump();
                StmtKind::Noop
            }
            Tok::Ident(kw) => match kw.as_str() {
                "let" => {
                    self.bump();
                    let (name, _) = self.expect_ident()?;
                    self.expect_punct(":")?;
                    let ty = self.expect_scalar()?;
                    self.expect_punct("=")?;
                    let init = self.parse_expr()?;
                    self.expect_punct(";")?;
                    StmtKind::LocalDecl { name, ty, init }
                }
                "if" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let cond = self.parse_expr()?;
                    self.expect_punct(")")?;
                    let then_block = self.parse_block()?;
                    let else_block = if self.is_keyword("else") {
                        self.bump();
                        if self.is_keyword("if") {
                            Some(Block { stmts: vec![self.parse_stmt()?] })
                        } else {
                            Some(self.parse_block()?)
                        }
                    } else {
                        None
                    };
                    StmtKind::If { cond, then_block, else_block }
                }
                "for" => self.parse_for()?,
                "barrier" => {
                    self.bump();
                    self.expect_punct(";")?;
                    StmtKind::Barrier
                }
                "atomic_add" | "atomic_cas" => {
                    let kind = if kw == "atomic_add" { AtomicKind::Add } else { AtomicKind::Cas };
                    self.bump();
                    self.expect_punct("(")?;
                    let target = self.parse_lvalue()?;
                    self.expect_punct(",")?;
                    let operand = self.parse_expr()?;
                    let replacement = if kind == AtomicKind::Cas {
                        self.expect_punct(",")?;
                        Some(self.parse_expr()?)
                    } else {
                        None
                    };
                    self.expect_punct(")")?;
                    self.expect_punct(";")?;
                    StmtKind::Atomic { kind, target, operand, replacement }
                }
                _ => {
                    let target = self.parse_lvalue()?;
                    self.expect_punct("=")?;
                    let value = self.parse_expr()?;
                    self.expect_punct(";")?;
                    StmtKind::Assign { target, value }
                }
            },
            _ => return self.err(STMT_START),
        };
        Ok(Stmt { kind, span: Self::join(start, self.prev_span()) })
    }

    fn parse_for(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_keyword("for")?;
        self.expect_punct("(")?;
        let (counter, _) = self.expect_ident()?;
        self.expect_punct("=")?;
        let lo = self.parse_expr()?;
        self.expect_punct(";")?;
        self.expect_counter(&counter)?;
        self.expect_punct("<")?;
        let hi = self.parse_expr()?;
        self.expect_punct(";")?;
        self.expect_counter(&counter)?;
        self.expect_punct("+=")?;
        let step = self.parse_expr()?;
        self.expect_punct(")")?;
        let body = self.parse_block()?;
        Ok(StmtKind::For { counter, lo, hi, step, body })
    }

    fn expect_counter(&mut self, counter: &str) -> Result<(), ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) if s == counter => {
                self.bump();
                Ok(())
            }
            _ => self.err(&[&format!("loop counter `{counter}`")]),
        }
    }

    fn parse_lvalue(&mut self) -> Result<LValue, ParseError> {
        let (name, span) = self.expect_ident()?;
        if self.eat_punct("[") {
            let index = self.parse_expr()?;
            let end = self.expect_punct("]")?;
            Ok(LValue::Index { array: name, index: Box::new(index), span: Self::join(span, end) })
        } else {
            Ok(LValue::Var { name, span })
        }
    }

    pub fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        self.parse_binary(0)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = &self.peek().tok else { return None };
        Some(match *p {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            "&" => BinOp::BitAnd,
            "|" => BinOp::BitOr,
            "^" => BinOp::BitXor,
            "<<" => BinOp::Shl,
            ">>" => BinOp::Shr,
            _ => return None,
        })
    }

    fn parse_binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        while let Some(op) = self.peek_binop() {
            let prec = op.precedence();
            if prec < min_prec.max(1) {
                break;
            }
            self.bump();
            let rhs = self.parse_binary(prec + 1)?;
            let span = Self::join(lhs.span, rhs.span);
            lhs = Expr::new(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, span);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        let start = self.peek().span;
        let op = if self.is_punct("-") {
            Some(UnOp::Neg)
        } else if self.is_punct("!") {
            Some(UnOp::Not)
        } else {
            None
        };
        match op {
            Some(op) => {
                self.bump();
                let e = self.parse_unary()?;
                let span = Self::join(start, e.span);
                Ok(Expr::new(ExprKind::Unary { op, expr: Box::new(e) }, span))
            }
            None => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::IntLit(v), t.span))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::FloatLit(v), t.span))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(var) = BuiltinVar::from_name(&name) {
                    self.expect_punct(".")?;
                    let axis = match &self.peek().tok {
                        Tok::Ident(a) if a == "x" => Axis::X,
                        Tok::Ident(a) if a == "y" => Axis::Y,
                        Tok::Ident(a) if a == "z" => Axis::Z,
                        _ => return self.err(&["`x`", "`y`", "`z`"]),
                    };
                    let end = self.bump().span;
                    return Ok(Expr::new(ExprKind::Builtin(Builtin { var, axis }), Self::join(t.span, end)));
                }
                if self.is_punct("(") {
                    let Some(func) = Intrinsic::from_name(&name) else {
                        return Err(ParseError::new(
                            t.span,
                            vec!["intrinsic (min, max, abs, sqrt, shfl_down, vote_any, vote_all)".into()],
                            format!("`{name}`"),
                        ));
                    };
                    self.bump();
                    let mut args = Vec::new();
                    if !self.is_punct(")") {
                        loop {
                            args.push(self.parse_expr()?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    let end = self.expect_punct(")")?;
                    return Ok(Expr::new(ExprKind::Call { func, args }, Self::join(t.span, end)));
                }
                if self.eat_punct("[") {
                    let index = self.parse_expr()?;
                    let end = self.expect_punct("]")?;
                    return Ok(Expr::new(
                        ExprKind::Index { array: name, index: Box::new(index) },
                        Self::join(t.span, end),
                    ));
                }
                Ok(Expr::new(ExprKind::Var(name), t.span))
            }
            _ => self.err(&["expression"]),
        }
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek_at(0), Tok::Eof)
    }
}
