//! Recursive-descent parser for the expression text grammar.
//!
//! Infix notation with `+ - * / ^`, functions `sin cos exp sqrt`, decimal
//! literals, and identifiers resolved against a variable context. `^` binds
//! tightest and requires a non-negative integer exponent; whitespace is
//! ignored everywhere.

use super::{Expr, VarContext};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("unexpected character '{0}' at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("malformed number '{0}'")]
    BadNumber(String),
    #[error("exponent must be a non-negative integer, got '{0}'")]
    BadExponent(String),
    #[error("expected '{0}'")]
    Expected(char),
    #[error("trailing input starting at byte {0}")]
    TrailingInput(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
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

fn tokenize(input: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '^' => {
                tokens.push(Token::Caret);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Exponent part: 1e-3, 2.5E+10.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &input[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ParseError::BadNumber(text.to_string()))?;
                tokens.push(Token::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                tokens.push(Token::Ident(input[start..i].to_string()));
            }
            _ => return Err(ParseError::UnexpectedChar(c, i)),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    ctx: &'a VarContext,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Token, c: char) -> Result<(), ParseError> {
        if self.next().as_ref() == Some(&t) {
            Ok(())
        } else {
            Err(ParseError::Expected(c))
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Arc<Expr>, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = Expr::add(acc, rhs);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = Expr::sub(acc, rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Arc<Expr>, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::mul(acc, rhs);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::div(acc, rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Arc<Expr>, ParseError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::neg(inner));
        }
        self.power()
    }

    // power := atom ('^' exponent)?
    fn power(&mut self) -> Result<Arc<Expr>, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            let n = self.exponent()?;
            return Ok(Expr::pow(base, n));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<u32, ParseError> {
        // Allow a parenthesized integer for readability: x^(3).
        let parenthesized = self.peek() == Some(&Token::LParen);
        if parenthesized {
            self.pos += 1;
        }
        let t = self.next().ok_or(ParseError::UnexpectedEnd)?;
        let n = match t {
            Token::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => v as u32,
            Token::Num(v) => return Err(ParseError::BadExponent(v.to_string())),
            other => return Err(ParseError::BadExponent(format!("{other:?}"))),
        };
        if parenthesized {
            self.expect(Token::RParen, ')')?;
        }
        Ok(n)
    }

    // atom := number | ident | func '(' expr ')' | '(' expr ')'
    fn atom(&mut self) -> Result<Arc<Expr>, ParseError> {
        match self.next().ok_or(ParseError::UnexpectedEnd)? {
            Token::Num(v) => Ok(Expr::constant(v)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect(Token::RParen, ')')?;
                Ok(e)
            }
            Token::Ident(name) => {
                let func: Option<fn(Arc<Expr>) -> Arc<Expr>> = match name.as_str() {
                    "sin" => Some(Expr::sin),
                    "cos" => Some(Expr::cos),
                    "exp" => Some(Expr::exp),
                    "sqrt" => Some(Expr::sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    if self.peek() == Some(&Token::LParen) {
                        self.pos += 1;
                        let arg = self.expr()?;
                        self.expect(Token::RParen, ')')?;
                        return Ok(f(arg));
                    }
                }
                match self.ctx.index_of(&name) {
                    Some(i) => Ok(Expr::var(i)),
                    None => Err(ParseError::UnknownIdentifier(name)),
                }
            }
            t => Err(ParseError::UnexpectedChar(token_char(&t), 0)),
        }
    }
}

fn token_char(t: &Token) -> char {
    match t {
        Token::Plus => '+',
        Token::Minus => '-',
        Token::Star => '*',
        Token::Slash => '/',
        Token::Caret => '^',
        Token::LParen => '(',
        Token::RParen => ')',
        _ => '?',
    }
}

/// Parse an expression string against a variable context.
pub fn parse_expr(input: &str, ctx: &VarContext) -> Result<Arc<Expr>, ParseError> {
    let tokens = tokenize(input)?;
    let mut p = Parser { tokens, pos: 0, ctx };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(ParseError::TrailingInput(p.pos));
    }
    Ok(e)
}
