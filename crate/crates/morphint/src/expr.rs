//! Arithmetic expression parser for user-defined integrands.
//!
//! Expressions are written over variables `x1..xN` with the usual operators
//! and a small function library. The grammar (EBNF, whitespace-insensitive):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = factor { ("*" | "/") factor } ;
//! factor  = "-" factor | power ;
//! power   = atom [ "^" factor ] ;            (* right-associative *)
//! atom    = number | variable | function "(" expr ")" | "(" expr ")" ;
//! function = "exp" | "ln" | "sin" | "cos" | "tan" | "sqrt" | "abs" ;
//! variable = "x" digits ;                    (* 1-based, x1..xN *)
//! ```
//!
//! `^` binds tighter than unary minus (`-x^2` is `-(x^2)`), which binds
//! tighter than `*`/`/`, which bind tighter than `+`/`-`. Parsing compiles to
//! a flat postfix program; evaluation at finite inputs never aborts — domain
//! violations such as `ln` of a non-positive value or division by zero
//! surface as non-finite results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` takes {expected} argument(s), got {got} (at byte {offset})")]
    Arity { name: String, expected: usize, got: usize, offset: usize },
    #[error("expression nests deeper than {0} levels")]
    TooDeep(usize),
}

/// Maximum operand-stack depth of a compiled program.
pub const MAX_STACK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Self::Exp,
            "ln" => Self::Ln,
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "tan" => Self::Tan,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Exp => "exp",
            Self::Ln => "ln",
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Tan => "tan",
            Self::Sqrt => "sqrt",
            Self::Abs => "abs",
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Exp => v.exp(),
            Self::Ln => v.ln(),
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Tan => v.tan(),
            Self::Sqrt => v.sqrt(),
            Self::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Instr {
    Const(f64),
    /// 0-based variable index.
    Var(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Pow,
    Call(Func),
}

/// A parsed expression: postfix instruction list plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionProgram {
    source: String,
    dim: usize,
    instrs: Vec<Instr>,
    referenced: Vec<usize>,
    max_stack: usize,
}

impl ExpressionProgram {
    /// Parses `source` over variables `x1..x{dim}`.
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::Syntax { offset: 0, message: "dimension must be positive".into() });
        }
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens: &tokens, pos: 0, dim, instrs: Vec::new() };
        parser.expr()?;
        if parser.pos != tokens.len() {
            let t = &tokens[parser.pos];
            return Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("unexpected `{}`", t.kind.describe()),
            });
        }
        if parser.instrs.is_empty() {
            return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
        }
        let max_stack = stack_depth(&parser.instrs);
        if max_stack > MAX_STACK {
            return Err(ExprError::TooDeep(MAX_STACK));
        }
        let mut referenced: Vec<usize> = parser
            .instrs
            .iter()
            .filter_map(|i| match i {
                Instr::Var(v) => Some(*v),
                _ => None,
            })
            .collect();
        referenced.sort_unstable();
        referenced.dedup();
        Ok(Self { source: source.to_string(), dim, instrs: parser.instrs, referenced, max_stack })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instructions(&self) -> &[Instr] {
        &self.instrs
    }

    /// 0-based indices of the variables the program actually references.
    pub fn referenced_vars(&self) -> &[usize] {
        &self.referenced
    }

    /// Evaluates at a point with `dim` coordinates. Domain violations yield
    /// non-finite values rather than errors.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut stack = [0.0f64; MAX_STACK];
        let mut top = 0usize;
        for instr in &self.instrs {
            match instr {
                Instr::Const(c) => {
                    stack[top] = *c;
                    top += 1;
                }
                Instr::Var(v) => {
                    stack[top] = x[*v];
                    top += 1;
                }
                Instr::Neg => stack[top - 1] = -stack[top - 1],
                Instr::Call(f) => stack[top - 1] = f.apply(stack[top - 1]),
                Instr::Add => {
                    top -= 1;
                    stack[top - 1] += stack[top];
                }
                Instr::Sub => {
                    top -= 1;
                    stack[top - 1] -= stack[top];
                }
                Instr::Mul => {
                    top -= 1;
                    stack[top - 1] *= stack[top];
                }
                Instr::Div => {
                    top -= 1;
                    stack[top - 1] /= stack[top];
                }
                Instr::Pow => {
                    top -= 1;
                    stack[top - 1] = stack[top - 1].powf(stack[top]);
                }
            }
        }
        stack[top - 1]
    }

    /// Canonical fully-parenthesized rendering; re-parsing it yields an
    /// identical instruction list.
    pub fn pretty_print(&self) -> String {
        let mut stack: Vec<String> = Vec::new();
        for instr in &self.instrs {
            match instr {
                Instr::Const(c) => stack.push(format_const(*c)),
                Instr::Var(v) => stack.push(format!("x{}", v + 1)),
                Instr::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(format!("(-{a})"));
                }
                Instr::Call(f) => {
                    let a = stack.pop().unwrap();
                    stack.push(format!("{}({a})", f.name()));
                }
                Instr::Add | Instr::Sub | Instr::Mul | Instr::Div | Instr::Pow => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    let op = match instr {
                        Instr::Add => "+",
                        Instr::Sub => "-",
                        Instr::Mul => "*",
                        Instr::Div => "/",
                        Instr::Pow => "^",
                        _ => unreachable!(),
                    };
                    stack.push(format!("({a} {op} {b})"));
                }
            }
        }
        stack.pop().unwrap()
    }
}

fn format_const(c: f64) -> String {
    // Round-trip representation; negative literals only arise through Neg.
    let mut s = format!("{c:e}");
    if !s.contains('e') {
        return s;
    }
    // `1e0`-style is valid input for the tokenizer; keep as is.
    if s.ends_with("e0") {
        s.truncate(s.len() - 2);
    }
    s
}

fn stack_depth(instrs: &[Instr]) -> usize {
    let mut depth = 0usize;
    let mut max = 0usize;
    for i in instrs {
        match i {
            Instr::Const(_) | Instr::Var(_) => depth += 1,
            Instr::Add | Instr::Sub | Instr::Mul | Instr::Div | Instr::Pow => depth -= 1,
            Instr::Neg | Instr::Call(_) => {}
        }
        max = max.max(depth);
    }
    max
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(n) => format!("{n}"),
            TokenKind::Ident(s) => s.clone(),
            TokenKind::Plus => "+".into(),
            TokenKind::Minus => "-".into(),
            TokenKind::Star => "*".into(),
            TokenKind::Slash => "/".into(),
            TokenKind::Caret => "^".into(),
            TokenKind::LParen => "(".into(),
            TokenKind::RParen => ")".into(),
            TokenKind::Comma => ",".into(),
        }
    }
}

#[derive(Debug)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(source: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let b = bytes[i];
        let kind = match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // Exponent part: e / E with optional sign.
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &source[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("bad number literal `{text}`"),
                })?;
                tokens.push(Token { kind: TokenKind::Number(value), offset: start });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(source[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            other => {
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        tokens.push(Token { kind, offset: i });
        i += 1;
    }
    if tokens.is_empty() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
    instrs: Vec<Instr>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn end_offset(&self) -> usize {
        self.tokens
            .last()
            .map(|t| t.offset + t.kind.describe().len())
            .unwrap_or(0)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.offset).unwrap_or_else(|| self.end_offset())
    }

    fn expr(&mut self) -> Result<(), ExprError> {
        self.term()?;
        while let Some(op) = self.peek() {
            let instr = match op {
                TokenKind::Plus => Instr::Add,
                TokenKind::Minus => Instr::Sub,
                _ => break,
            };
            self.pos += 1;
            self.term()?;
            self.instrs.push(instr);
        }
        Ok(())
    }

    fn term(&mut self) -> Result<(), ExprError> {
        self.factor()?;
        while let Some(op) = self.peek() {
            let instr = match op {
                TokenKind::Star => Instr::Mul,
                TokenKind::Slash => Instr::Div,
                _ => break,
            };
            self.pos += 1;
            self.factor()?;
            self.instrs.push(instr);
        }
        Ok(())
    }

    fn factor(&mut self) -> Result<(), ExprError> {
        if matches!(self.peek(), Some(TokenKind::Minus)) {
            self.pos += 1;
            self.factor()?;
            self.instrs.push(Instr::Neg);
            return Ok(());
        }
        self.power()
    }

    fn power(&mut self) -> Result<(), ExprError> {
        self.atom()?;
        if matches!(self.peek(), Some(TokenKind::Caret)) {
            self.pos += 1;
            // Right-associative; the exponent may carry a unary minus.
            self.factor()?;
            self.instrs.push(Instr::Pow);
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<(), ExprError> {
        let offset = self.offset();
        match self.peek() {
            Some(TokenKind::Number(v)) => {
                self.instrs.push(Instr::Const(*v));
                self.pos += 1;
                Ok(())
            }
            Some(TokenKind::LParen) => {
                self.pos += 1;
                self.expr()?;
                self.expect_rparen()
            }
            Some(TokenKind::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                if matches!(self.peek(), Some(TokenKind::LParen)) {
                    self.pos += 1;
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownIdentifier {
                        name: name.clone(),
                        offset,
                    })?;
                    let mut args = 1usize;
                    self.expr()?;
                    while matches!(self.peek(), Some(TokenKind::Comma)) {
                        self.pos += 1;
                        self.expr()?;
                        args += 1;
                    }
                    self.expect_rparen()?;
                    if args != 1 {
                        return Err(ExprError::Arity { name, expected: 1, got: args, offset });
                    }
                    self.instrs.push(Instr::Call(func));
                    Ok(())
                } else {
                    let var = parse_variable(&name).ok_or(ExprError::UnknownIdentifier {
                        name: name.clone(),
                        offset,
                    })?;
                    if var == 0 || var > self.dim {
                        return Err(ExprError::UnknownIdentifier { name, offset });
                    }
                    self.instrs.push(Instr::Var(var - 1));
                    Ok(())
                }
            }
            Some(other) => Err(ExprError::Syntax {
                offset,
                message: format!("expected a value, found `{}`", other.describe()),
            }),
            None => Err(ExprError::Syntax { offset, message: "unexpected end of input".into() }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if matches!(self.peek(), Some(TokenKind::RParen)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Syntax { offset: self.offset(), message: "expected `)`".into() })
        }
    }
}

/// `x<digits>` (1-based) or None.
fn parse_variable(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}
