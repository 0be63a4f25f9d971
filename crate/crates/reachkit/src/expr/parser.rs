//! Recursive-descent parser for the expression language.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! comparison := additive ('<' | '<=' | '>' | '>=') additive     (guards only)
//! additive   := term (('+' | '-') term)*
//! term       := unary (('*' | '/') unary)*
//! unary      := '-' unary | power
//! power      := primary ('^' unary)?                            (right assoc)
//! primary    := number | ident | ident '(' args ')' | '(' additive ')'
//! ```
//!
//! Functions: `sin cos tan exp log sqrt abs` (one argument), `min max` (two),
//! and `if(comparison, then, else)`. Number literals accept decimal and
//! scientific notation. Comparisons may appear only as the first argument of
//! `if`; every identifier must be declared in the [`VarSet`].

use super::{BinaryOp, CmpOp, Expr, Guard, MinMaxOp, UnaryOp, VarSet};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character `{ch}` at byte {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("malformed number literal at byte {pos}")]
    BadNumber { pos: usize },
    #[error("unexpected end of input (expected {expected})")]
    UnexpectedEnd { expected: &'static str },
    #[error("expected {expected} at byte {pos}, found `{found}`")]
    Unexpected {
        expected: &'static str,
        found: String,
        pos: usize,
    },
    #[error("undeclared variable `{name}` at byte {pos}")]
    UndeclaredVariable { name: String, pos: usize },
    #[error("unknown function `{name}` at byte {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("`{name}` takes {expected} argument(s), found {found} (byte {pos})")]
    WrongArity {
        name: String,
        expected: usize,
        found: usize,
        pos: usize,
    },
    #[error("comparison outside an if-guard at byte {pos}")]
    CompareOutsideGuard { pos: usize },
    #[error("trailing input at byte {pos}")]
    TrailingInput { pos: usize },
}

/// Parse `text` against the declared variables.
pub fn parse(text: &str, vars: &VarSet) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
        vars,
    };
    let expr = p.additive()?;
    if let Some(tok) = p.peek() {
        if matches!(tok.kind, TokKind::Cmp(_)) {
            return Err(ParseError::CompareOutsideGuard { pos: tok.pos });
        }
        return Err(ParseError::TrailingInput { pos: tok.pos });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Cmp(CmpOp),
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '(' => out.push(Token { kind: TokKind::LParen, pos }),
            ')' => out.push(Token { kind: TokKind::RParen, pos }),
            ',' => out.push(Token { kind: TokKind::Comma, pos }),
            '+' => out.push(Token { kind: TokKind::Plus, pos }),
            '-' => out.push(Token { kind: TokKind::Minus, pos }),
            '*' => out.push(Token { kind: TokKind::Star, pos }),
            '/' => out.push(Token { kind: TokKind::Slash, pos }),
            '^' => out.push(Token { kind: TokKind::Caret, pos }),
            '<' | '>' => {
                let strict = c == '<';
                let eq = i + 1 < bytes.len() && bytes[i + 1] == b'=';
                let op = match (strict, eq) {
                    (true, true) => CmpOp::Le,
                    (true, false) => CmpOp::Lt,
                    (false, true) => CmpOp::Ge,
                    (false, false) => CmpOp::Gt,
                };
                out.push(Token { kind: TokKind::Cmp(op), pos });
                if eq {
                    i += 1;
                }
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
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
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit
                    .parse()
                    .map_err(|_| ParseError::BadNumber { pos: start })?;
                out.push(Token {
                    kind: TokKind::Num(value),
                    pos: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    kind: TokKind::Ident(text[start..i].to_string()),
                    pos: start,
                });
                continue;
            }
            other => return Err(ParseError::UnexpectedChar { ch: other, pos }),
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a VarSet,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn expect(&mut self, kind: TokKind, expected: &'static str) -> Result<(), ParseError> {
        match self.bump() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(ParseError::Unexpected {
                expected,
                found: describe(&t.kind),
                pos: t.pos,
            }),
            None => Err(ParseError::UnexpectedEnd { expected }),
        }
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(tok) = self.peek() {
            let op = match tok.kind {
                TokKind::Plus => BinaryOp::Add,
                TokKind::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(tok) = self.peek() {
            let op = match tok.kind {
                TokKind::Star => BinaryOp::Mul,
                TokKind::Slash => BinaryOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // `-x^2` is `-(x^2)`; the exponent itself may start with a unary minus.
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(tok) = self.peek() {
            if tok.kind == TokKind::Minus {
                self.bump();
                let child = self.unary()?;
                return Ok(Expr::Unary(UnaryOp::Neg, Box::new(child)));
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(tok) = self.peek() {
            if tok.kind == TokKind::Caret {
                self.bump();
                let exp = self.unary()?;
                return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = match self.bump() {
            Some(t) => t.clone(),
            None => return Err(ParseError::UnexpectedEnd { expected: "an operand" }),
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Const(v)),
            TokKind::LParen => {
                let inner = self.additive()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                let is_call = matches!(self.peek(), Some(t) if t.kind == TokKind::LParen);
                if is_call {
                    self.call(&name, tok.pos)
                } else {
                    match self.vars.index_of(&name) {
                        Some(index) => Ok(Expr::Var { name, index }),
                        None => Err(ParseError::UndeclaredVariable { name, pos: tok.pos }),
                    }
                }
            }
            TokKind::Cmp(_) => Err(ParseError::CompareOutsideGuard { pos: tok.pos }),
            other => Err(ParseError::Unexpected {
                expected: "an operand",
                found: describe(&other),
                pos: tok.pos,
            }),
        }
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        self.expect(TokKind::LParen, "`(`")?;
        if name == "if" {
            let guard = self.guard()?;
            self.expect(TokKind::Comma, "`,`")?;
            let then_branch = self.additive()?;
            self.expect(TokKind::Comma, "`,`")?;
            let else_branch = self.additive()?;
            self.expect(TokKind::RParen, "`)`")?;
            return Ok(Expr::Piecewise {
                guard: Box::new(guard),
                then_branch: Box::new(then_branch),
                else_branch: Box::new(else_branch),
            });
        }

        let mut args = vec![self.additive()?];
        while matches!(self.peek(), Some(t) if t.kind == TokKind::Comma) {
            self.bump();
            args.push(self.additive()?);
        }
        self.expect(TokKind::RParen, "`)`")?;

        let unary = |op: UnaryOp, mut args: Vec<Expr>| -> Result<Expr, ParseError> {
            if args.len() != 1 {
                return Err(ParseError::WrongArity {
                    name: name.to_string(),
                    expected: 1,
                    found: args.len(),
                    pos,
                });
            }
            Ok(Expr::Unary(op, Box::new(args.remove(0))))
        };
        let binary = |op: MinMaxOp, mut args: Vec<Expr>| -> Result<Expr, ParseError> {
            if args.len() != 2 {
                return Err(ParseError::WrongArity {
                    name: name.to_string(),
                    expected: 2,
                    found: args.len(),
                    pos,
                });
            }
            let rhs = args.remove(1);
            let lhs = args.remove(0);
            Ok(Expr::MinMax(op, Box::new(lhs), Box::new(rhs)))
        };

        match name {
            "sin" => unary(UnaryOp::Sin, args),
            "cos" => unary(UnaryOp::Cos, args),
            "tan" => unary(UnaryOp::Tan, args),
            "exp" => unary(UnaryOp::Exp, args),
            "log" => unary(UnaryOp::Log, args),
            "sqrt" => unary(UnaryOp::Sqrt, args),
            "abs" => unary(UnaryOp::Abs, args),
            "min" => binary(MinMaxOp::Min, args),
            "max" => binary(MinMaxOp::Max, args),
            _ => Err(ParseError::UnknownFunction {
                name: name.to_string(),
                pos,
            }),
        }
    }

    fn guard(&mut self) -> Result<Guard, ParseError> {
        let lhs = self.additive()?;
        let tok = match self.bump() {
            Some(t) => t.clone(),
            None => {
                return Err(ParseError::UnexpectedEnd {
                    expected: "a comparison operator",
                })
            }
        };
        let op = match tok.kind {
            TokKind::Cmp(op) => op,
            other => {
                return Err(ParseError::Unexpected {
                    expected: "a comparison operator",
                    found: describe(&other),
                    pos: tok.pos,
                })
            }
        };
        let rhs = self.additive()?;
        Ok(Guard { op, lhs, rhs })
    }
}

fn describe(kind: &TokKind) -> String {
    match kind {
        TokKind::Num(v) => format!("{v}"),
        TokKind::Ident(s) => s.clone(),
        TokKind::LParen => "(".into(),
        TokKind::RParen => ")".into(),
        TokKind::Comma => ",".into(),
        TokKind::Plus => "+".into(),
        TokKind::Minus => "-".into(),
        TokKind::Star => "*".into(),
        TokKind::Slash => "/".into(),
        TokKind::Caret => "^".into(),
        TokKind::Cmp(CmpOp::Lt) => "<".into(),
        TokKind::Cmp(CmpOp::Le) => "<=".into(),
        TokKind::Cmp(CmpOp::Gt) => ">".into(),
        TokKind::Cmp(CmpOp::Ge) => ">=".into(),
    }
}
