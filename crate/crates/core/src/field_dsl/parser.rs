//! Recursive-descent parser with standard precedence
//! (power > unary minus > mul/div > add/sub), left-associative binaries.
//! Errors carry byte spans because expressions live in user-edited config.

use super::{Expr, Span, UnaryFn};

#[derive(Debug, Clone, thiserror::Error)]
#[error("{message} at {start}..{end}", start = span.start, end = span.end)]
pub struct ParseError {
    pub message: String,
    pub span: Span,
}

fn err(message: impl Into<String>, start: usize, end: usize) -> ParseError {
    ParseError { message: message.into(), span: Span { start, end } }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, Span)>, ParseError> {
        let mut lx = Lexer { src: src.as_bytes(), pos: 0 };
        let mut out = Vec::new();
        loop {
            lx.skip_ws();
            if lx.pos >= lx.src.len() {
                break;
            }
            let start = lx.pos;
            let c = lx.src[lx.pos];
            let tok = match c {
                b'+' => {
                    lx.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    lx.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    lx.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    lx.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    lx.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    lx.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    lx.pos += 1;
                    Tok::RParen
                }
                b'0'..=b'9' | b'.' => lx.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    while lx.pos < lx.src.len()
                        && (lx.src[lx.pos].is_ascii_alphanumeric() || lx.src[lx.pos] == b'_')
                    {
                        lx.pos += 1;
                    }
                    let s = std::str::from_utf8(&lx.src[start..lx.pos]).unwrap();
                    Tok::Ident(s.to_string())
                }
                other => {
                    return Err(err(
                        format!("unexpected character `{}`", other as char),
                        start,
                        start + 1,
                    ))
                }
            };
            out.push((tok, Span { start, end: lx.pos }));
        }
        Ok(out)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // optional exponent
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E')
        {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| err(format!("invalid number `{text}`"), start, self.pos))
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    dim: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, Span)> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<(Tok, Span)> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> Span {
        self.peek()
            .map(|(_, s)| *s)
            .unwrap_or(Span { start: self.src_len, end: self.src_len })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some((tok, _)) = self.peek() {
            let tok = tok.clone();
            match tok {
                Tok::Plus => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((tok, span)) = self.peek() {
            let (tok, span) = (tok.clone(), *span);
            match tok {
                Tok::Star => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Tok::Slash => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs), span);
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some((Tok::Minus, _)) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.pos += 1;
            let exp = self.integer_exponent()?;
            return Ok(Expr::Pow(Box::new(base), exp));
        }
        Ok(base)
    }

    fn integer_exponent(&mut self) -> Result<i32, ParseError> {
        let span = self.here();
        match self.next() {
            Some((Tok::Num(v), s)) => {
                if v.fract() != 0.0 || v.abs() > f64::from(i32::MAX) {
                    Err(err(format!("exponent must be an integer, got {v}"), s.start, s.end))
                } else {
                    Ok(v as i32)
                }
            }
            Some((Tok::Minus, _)) => Ok(-self.integer_exponent()?),
            Some((Tok::LParen, _)) => {
                let k = self.integer_exponent()?;
                match self.next() {
                    Some((Tok::RParen, _)) => Ok(k),
                    _ => Err(err("expected `)` after exponent", span.start, span.end)),
                }
            }
            _ => Err(err("expected integer exponent after `^`", span.start, span.end)),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let span = self.here();
        match self.next() {
            Some((Tok::Num(v), _)) => Ok(Expr::Const(v)),
            Some((Tok::Ident(name), s)) => {
                if let Some(func) = UnaryFn::from_name(&name) {
                    match self.next() {
                        Some((Tok::LParen, _)) => {
                            let arg = self.expr()?;
                            match self.next() {
                                Some((Tok::RParen, close)) => Ok(Expr::Unary(
                                    func,
                                    Box::new(arg),
                                    Span { start: s.start, end: close.end },
                                )),
                                _ => Err(err(
                                    format!("missing `)` for call to {name}"),
                                    s.start,
                                    s.end,
                                )),
                            }
                        }
                        _ => Err(err(
                            format!("{name} takes exactly one parenthesized argument"),
                            s.start,
                            s.end,
                        )),
                    }
                } else if let Some(rest) = name.strip_prefix('x') {
                    let idx: usize = rest.parse().map_err(|_| {
                        err(format!("unknown identifier `{name}`"), s.start, s.end)
                    })?;
                    if idx == 0 {
                        return Err(err("variables are numbered from x1", s.start, s.end));
                    }
                    if idx > self.dim {
                        return Err(err(
                            format!(
                                "unknown identifier `{name}`: dimension is {}, variables are x1..x{}",
                                self.dim, self.dim
                            ),
                            s.start,
                            s.end,
                        ));
                    }
                    Ok(Expr::Var(idx - 1))
                } else {
                    Err(err(format!("unknown identifier `{name}`"), s.start, s.end))
                }
            }
            Some((Tok::LParen, open)) => {
                let inner = self.expr()?;
                match self.next() {
                    Some((Tok::RParen, _)) => Ok(inner),
                    _ => Err(err("unbalanced `(`", open.start, open.end)),
                }
            }
            Some((tok, s)) => Err(err(format!("unexpected token {tok:?}"), s.start, s.end)),
            None => Err(err("unexpected end of expression", span.start, span.end)),
        }
    }
}

/// Parse `source` as an expression over variables `x1..x{dimension}`.
pub fn parse(source: &str, dimension: usize) -> Result<Expr, ParseError> {
    if source.trim().is_empty() {
        return Err(err("empty expression", 0, source.len()));
    }
    let toks = Lexer::tokens(source)?;
    let mut p = Parser { toks, pos: 0, dim: dimension, src_len: source.len() };
    let e = p.expr()?;
    if let Some((tok, s)) = p.peek() {
        return Err(err(format!("trailing input {tok:?}"), s.start, s.end));
    }
    Ok(e)
}
