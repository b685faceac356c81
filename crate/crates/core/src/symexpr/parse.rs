//! Recursive-descent parser for the scalar expression grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' integer)?
//! base   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' base
//! ```
//!
//! Identifiers must be coordinates of the governing chart or one of the
//! function names `sin`, `cos`, `exp`, `sqrt`. The parser returns the literal
//! AST; it does not simplify.

use super::{ExprError, ScalarExpr, UnaryFn};
use crate::extcalc::Chart;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational),
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
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its starting byte offset, or `None` at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>, ExprError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => self.lex_number(start)?,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
            }
            other => {
                return Err(ExprError::Syntax {
                    position: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(Some((tok, start)))
    }

    fn lex_number(&mut self, start: usize) -> Result<Tok, ExprError> {
        let mut int_digits = Vec::new();
        let mut frac_digits = Vec::new();
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            int_digits.push(self.src[self.pos]);
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                frac_digits.push(self.src[self.pos]);
                self.pos += 1;
            }
        }
        if int_digits.is_empty() && frac_digits.is_empty() {
            return Err(ExprError::Syntax {
                position: start,
                message: "malformed number literal".into(),
            });
        }
        let mut all = int_digits;
        let frac_len = frac_digits.len();
        all.extend(frac_digits);
        let digits = String::from_utf8(all).expect("ascii digits");
        let numer: BigInt = if digits.is_empty() {
            BigInt::zero()
        } else {
            digits.parse().expect("digit string")
        };
        let denom = BigInt::from(10u32).pow(frac_len as u32);
        Ok(Tok::Num(BigRational::new(numer, denom)))
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end: usize,
    chart: &'a Chart,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.idx)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut terms = vec![self.term()?];
        let mut any_op = false;
        loop {
            match self.peek() {
                Some((Tok::Plus, _)) => {
                    self.bump();
                    terms.push(self.term()?);
                    any_op = true;
                }
                Some((Tok::Minus, _)) => {
                    self.bump();
                    terms.push(negate(self.term()?));
                    any_op = true;
                }
                _ => break,
            }
        }
        if !any_op {
            Ok(terms.pop().unwrap())
        } else {
            Ok(ScalarExpr::Sum(terms))
        }
    }

    fn term(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some((Tok::Star, _)) => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = match acc {
                        ScalarExpr::Prod(mut xs) => {
                            xs.push(rhs);
                            ScalarExpr::Prod(xs)
                        }
                        other => ScalarExpr::Prod(vec![other, rhs]),
                    };
                }
                Some((Tok::Slash, _)) => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = ScalarExpr::quot(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<ScalarExpr, ExprError> {
        let base = self.base()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            let exp = self.integer_exponent()?;
            return Ok(ScalarExpr::Pow(Box::new(base), exp));
        }
        Ok(base)
    }

    fn integer_exponent(&mut self) -> Result<i32, ExprError> {
        let mut neg = false;
        if let Some((Tok::Minus, _)) = self.peek() {
            self.bump();
            neg = true;
        }
        let pos = self.here();
        match self.bump() {
            Some((Tok::Num(n), _)) if n.is_integer() => {
                let v: i32 = n.numer().try_into().map_err(|_| ExprError::Syntax {
                    position: pos,
                    message: "exponent out of range".into(),
                })?;
                Ok(if neg { -v } else { v })
            }
            _ => Err(ExprError::Syntax {
                position: pos,
                message: "expected integer exponent after `^`".into(),
            }),
        }
    }

    fn base(&mut self) -> Result<ScalarExpr, ExprError> {
        let pos = self.here();
        match self.bump() {
            Some((Tok::Num(n), _)) => Ok(ScalarExpr::Const(n)),
            Some((Tok::Ident(name), _)) => {
                if let Some((Tok::LParen, _)) = self.peek() {
                    let func = UnaryFn::from_name(&name)
                        .ok_or_else(|| ExprError::UnknownIdentifier(name.clone()))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(ScalarExpr::Func(func, Box::new(arg)))
                } else {
                    if self.chart.coord_index(&name).is_none() {
                        return Err(ExprError::UnknownIdentifier(name));
                    }
                    Ok(ScalarExpr::Coord(name))
                }
            }
            Some((Tok::LParen, _)) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some((Tok::Minus, _)) => {
                let inner = self.base()?;
                Ok(negate(inner))
            }
            Some((tok, p)) => Err(ExprError::Syntax {
                position: p,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(ExprError::Syntax {
                position: pos,
                message: "unexpected end of input".into(),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        let pos = self.here();
        match self.bump() {
            Some((Tok::RParen, _)) => Ok(()),
            _ => Err(ExprError::Syntax {
                position: pos,
                message: "expected `)`".into(),
            }),
        }
    }
}

/// Negation at parse time: constants fold, everything else becomes `-1 * e`.
fn negate(e: ScalarExpr) -> ScalarExpr {
    match e {
        ScalarExpr::Const(c) => ScalarExpr::Const(-c),
        other => ScalarExpr::Prod(vec![ScalarExpr::int(-1), other]),
    }
}

/// Parse `source` against the coordinates of `chart`. Returns the literal
/// AST; round-trips with [`ScalarExpr`]'s `Display` up to simplification.
pub fn parse_expr(source: &str, chart: &Chart) -> Result<ScalarExpr, ExprError> {
    let mut lexer = Lexer::new(source);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut parser = Parser {
        toks,
        idx: 0,
        end: source.len(),
        chart,
    };
    let e = parser.expr()?;
    if let Some((tok, pos)) = parser.peek() {
        return Err(ExprError::Syntax {
            position: *pos,
            message: format!("trailing input starting at {tok:?}"),
        });
    }
    Ok(e)
}
