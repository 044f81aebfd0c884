//! Recursive-descent parser for the cost language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-'? atom
//! atom   := number | identifier | fn '(' args ')' | '(' expr ')'
//!         | 'if' '(' cond ',' expr ',' expr ')'
//! cond   := expr ('<' | '<=' | '>' | '>=' | '==') expr
//! ```
//!
//! A `-` immediately followed by a numeric literal folds into a negative
//! constant, so `-0.5` is `Constant(-0.5)` while `-(0.5)` is `Neg(0.5)`.

use super::ast::{BinaryOp, CmpOp, CostExpr, Limits, UnaryOp};
use super::{DslError, ParseError};

/// Parser recursion bound. Deeper input is rejected before the tree-level
/// limits are even checked.
const MAX_NESTING: usize = 256;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Cmp(CmpOp),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::End => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Returns the next token and the byte offset where it starts.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::End, start));
        };
        let single = |tok, lx: &mut Lexer| {
            lx.pos += 1;
            Ok((tok, start))
        };
        match c {
            '(' => single(Tok::LParen, self),
            ')' => single(Tok::RParen, self),
            ',' => single(Tok::Comma, self),
            '+' => single(Tok::Plus, self),
            '-' => single(Tok::Minus, self),
            '*' => single(Tok::Star, self),
            '/' => single(Tok::Slash, self),
            '<' | '>' | '=' => {
                let two = rest.starts_with("<=") || rest.starts_with(">=") || rest.starts_with("==");
                let op = match (c, two) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    ('>', true) => CmpOp::Ge,
                    ('=', true) => CmpOp::Eq,
                    _ => return Err(ParseError::new(self.src, start, "`==`")),
                };
                self.pos += if two { 2 } else { 1 };
                Ok((Tok::Cmp(op), start))
            }
            c if c.is_ascii_digit() || c == '.' => self.number(start),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = rest
                    .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                    .unwrap_or(rest.len());
                self.pos += len;
                Ok((Tok::Ident(rest[..len].to_string()), start))
            }
            _ => Err(ParseError::new(self.src, start, "a number, identifier, `(` or operator")),
        }
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        let mut i = start;
        let digits = |i: &mut usize| {
            let from = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i - from
        };
        let int_digits = digits(&mut i);
        let mut frac_digits = 0;
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            frac_digits = digits(&mut i);
        }
        if int_digits + frac_digits == 0 {
            return Err(ParseError::new(self.src, start, "a digit"));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if digits(&mut j) == 0 {
                return Err(ParseError::new(self.src, j, "exponent digits"));
            }
            i = j;
        }
        let text = &self.src[start..i];
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(self.src, start, "a numeric literal"))?;
        if !value.is_finite() {
            return Err(ParseError::new(self.src, start, "a finite numeric literal"));
        }
        self.pos = i;
        Ok((Tok::Num(value), start))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
    nesting: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer { src, pos: 0 };
        let (tok, at) = lexer.next()?;
        Ok(Parser {
            lexer,
            tok,
            at,
            nesting: 0,
        })
    }

    fn advance(&mut self) -> Result<Tok, ParseError> {
        let (next, at) = self.lexer.next()?;
        self.at = at;
        Ok(std::mem::replace(&mut self.tok, next))
    }

    fn error(&self, expected: &str) -> DslError {
        DslError::Parse(ParseError::new(
            self.lexer.src,
            self.at,
            &format!("{expected}, found {}", self.tok.describe()),
        ))
    }

    fn expect(&mut self, want: Tok, label: &str) -> Result<(), DslError> {
        if self.tok == want {
            self.advance()?;
            Ok(())
        } else {
            Err(self.error(label))
        }
    }

    fn enter(&mut self) -> Result<(), DslError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(DslError::LimitExceeded {
                what: "nesting",
                limit: MAX_NESTING,
                actual: self.nesting,
            });
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<CostExpr, DslError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = CostExpr::binary(op, lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<CostExpr, DslError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.advance()?;
            let rhs = self.factor()?;
            lhs = CostExpr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<CostExpr, DslError> {
        // A leading `+` is accepted and dropped.
        if self.tok == Tok::Plus {
            self.advance()?;
            return self.atom();
        }
        if self.tok != Tok::Minus {
            return self.atom();
        }
        self.advance()?;
        if let Tok::Num(n) = self.tok {
            self.advance()?;
            return Ok(CostExpr::Constant(-n));
        }
        Ok(CostExpr::unary(UnaryOp::Neg, self.atom()?))
    }

    fn atom(&mut self) -> Result<CostExpr, DslError> {
        match self.tok.clone() {
            Tok::Num(n) => {
                self.advance()?;
                Ok(CostExpr::Constant(n))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let name_at = self.at;
                self.advance()?;
                if self.tok != Tok::LParen {
                    if name == "if" {
                        return Err(self.error("`(` after `if`"));
                    }
                    return Ok(CostExpr::Feature(name));
                }
                self.advance()?;
                self.enter()?;
                let out = self.call(&name, name_at)?;
                self.nesting -= 1;
                Ok(out)
            }
            _ => Err(self.error("an expression")),
        }
    }

    /// Parses the arguments and closing paren of `name(`.
    fn call(&mut self, name: &str, name_at: usize) -> Result<CostExpr, DslError> {
        if name == "if" {
            let lhs = self.expr()?;
            let op = match self.tok {
                Tok::Cmp(op) => op,
                _ => return Err(self.error("a comparison operator")),
            };
            self.advance()?;
            let rhs = self.expr()?;
            self.expect(Tok::Comma, "`,`")?;
            let then = self.expr()?;
            self.expect(Tok::Comma, "`,`")?;
            let otherwise = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(CostExpr::if_then_else(op, lhs, rhs, then, otherwise));
        }
        let arity = match name {
            "min" | "max" => 2,
            "clip" => 3,
            other if UnaryOp::from_name(other).is_some() => 1,
            _ => {
                return Err(DslError::Parse(ParseError::new(
                    self.lexer.src,
                    name_at,
                    &format!("a known function, found `{name}`"),
                )))
            }
        };
        let mut args = Vec::with_capacity(arity);
        for i in 0..arity {
            if i > 0 {
                self.expect(Tok::Comma, "`,`")?;
            }
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "`)`")?;
        let mut args = args.into_iter();
        let mut next = || args.next().expect("arity checked");
        Ok(match name {
            "min" => CostExpr::binary(BinaryOp::Min, next(), next()),
            "max" => CostExpr::binary(BinaryOp::Max, next(), next()),
            "clip" => CostExpr::clip(next(), next(), next()),
            other => CostExpr::unary(UnaryOp::from_name(other).expect("checked"), next()),
        })
    }
}

/// Parses `text` and enforces the default tree limits.
pub fn parse(text: &str) -> Result<CostExpr, DslError> {
    parse_with_limits(text, Limits::default())
}

pub fn parse_with_limits(text: &str, limits: Limits) -> Result<CostExpr, DslError> {
    let mut p = Parser::new(text)?;
    let expr = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.error("an operator or end of input"));
    }
    expr.check_limits(limits)?;
    Ok(expr)
}
