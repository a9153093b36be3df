use std::fmt;

use super::ast::Span;
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Float(v) => write!(f, "`{v:?}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

// Longest first so that `<=` wins over `<`.
const PUNCTS: &[&str] = &[
    "+=", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "[]", "(", ")", "{", "}", "[", "]", ";", ":", ",", ".",
    "=", "+", "-", "*", "/", "%", "<", ">", "!", "&", "|", "^",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut line_start = 0usize;

    let span_at = |start: usize, end: usize, line: u32, line_start: usize| Span {
        start,
        end,
        line,
        col: (start - line_start) as u32 + 1,
    };

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            let open = span_at(i, i + 2, line, line_start);
            i += 2;
            loop {
                if i >= bytes.len() {
                    return Err(ParseError::new(open, vec!["`*/`".into()], "end of input"));
                }
                if src[i..].starts_with("*/") {
                    i += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                    line_start = i + 1;
                }
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), span: span_at(start, i, line, line_start) });
            continue;
        }
        if c.is_ascii_digit() {
            let mut is_float = false;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let span = span_at(start, i, line, line_start);
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| ParseError::new(span, vec!["number".into()], text))?)
            } else {
                Tok::Int(text.parse().map_err(|_| ParseError::new(span, vec!["64-bit integer".into()], text))?)
            };
            out.push(Token { tok, span });
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                i += p.len();
                out.push(Token { tok: Tok::Punct(p), span: span_at(start, i, line, line_start) });
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::new(
                    span_at(start, start + ch.len_utf8(), line, line_start),
                    vec!["token".into()],
                    format!("`{ch}`"),
                ));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: span_at(bytes.len(), bytes.len(), line, line_start) });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_numbers_and_operators() {
        let toks: Vec<Tok> = tokenize("a+=1.5e3<=2 // c\n/* x */ x[]").unwrap().into_iter().map(|t| t.tok).collect();
        assert_eq!(
            toks,
            vec![
                Tok::Ident("a".into()),
                Tok::Punct("+="),
                Tok::Float(1500.0),
                Tok::Punct("<="),
                Tok::Int(2),
                Tok::Ident("x".into()),
                Tok::Punct("[]"),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn tracks_lines() {
        let toks = tokenize("a\n  b").unwrap();
        assert_eq!((toks[1].span.line, toks[1].span.col), (2, 3));
    }

    #[test]
    fn unterminated_comment_is_an_error() {
        assert!(tokenize("/* open").is_err());
    }
}
