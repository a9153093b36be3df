//! The kernel language: a small CUDA-like SPMD dialect.
//!
//! ```text
//! kernel dynamicReverse(d: global i32[], n: i32) {
//!   extern shared i32 s[];
//!   let t: i32 = threadIdx.x;
//!   let tr: i32 = n - t - 1;
//!   s[t] = d[t];
//!   barrier;
//!   d[t] = s[tr];
//! }
//! ```

pub mod ast;
mod lexer;
pub mod lower;
mod parser;
pub mod pretty;
mod validate;

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

pub use ast::{KernelProgram, Span};
pub use pretty::print_kernel;
pub use validate::{check_placement, validate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parse error at {line}:{col}: expected {}, found {found}", expected.join(" or "))]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub expected: Vec<String>,
    pub found: String,
}

impl ParseError {
    pub(crate) fn new(span: Span, expected: Vec<String>, found: impl Into<String>) -> ParseError {
        ParseError { line: span.line, col: span.col, expected, found: found.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    UnknownIdentifier,
    DuplicateName,
    DuplicateKernel,
    DuplicateDynamicShared,
    TypeError,
    ImmutableAssign,
    Arity,
    InvalidAtomicTarget,
    BarrierInDivergentContext,
    ShuffleWithoutWarpMode,
    WarpInDivergentContext,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub span: Span,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.kind, self.message)
    }
}

/// Parses a source containing exactly one kernel.
pub fn parse(source: &str) -> Result<KernelProgram, ParseError> {
    let mut p = parser::Parser::new(source)?;
    let k = p.parse_kernel()?;
    if !p.at_eof() {
        let rest = parse_unit(source)?;
        if rest.len() > 1 {
            return Err(ParseError {
                line: rest[1].span.line,
                col: rest[1].span.col,
                expected: vec!["end of input".into()],
                found: format!("second kernel `{}`", rest[1].name),
            });
        }
    }
    Ok(k)
}

/// Parses a compilation unit with any number of kernels.
pub fn parse_unit(source: &str) -> Result<Vec<KernelProgram>, ParseError> {
    parser::Parser::new(source)?.parse_unit()
}

/// Validates every kernel of a unit and checks that names are unique.
pub fn validate_unit(kernels: &[KernelProgram], warp_mode: bool) -> Vec<Diagnostic> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for k in kernels {
        if !seen.insert(k.name.as_str()) {
            out.push(Diagnostic {
                kind: DiagnosticKind::DuplicateKernel,
                span: k.span,
                message: format!("kernel `{}` is defined more than once", k.name),
            });
        }
        out.extend(validate(k, warp_mode));
    }
    out
}
