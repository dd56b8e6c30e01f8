//! Recursive-descent parser for the expression grammar.

use super::{BinOp, Expr, ExprContext, Func1, Func2, ParseError, Var};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool), // value, is plain unsigned integer literal
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

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src: src.as_bytes(), pos: 0 };
        let mut out = Vec::new();
        loop {
            lx.skip_ws();
            let start = lx.pos;
            let Some(&c) = lx.src.get(lx.pos) else { break };
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
                b',' => {
                    lx.pos += 1;
                    Tok::Comma
                }
                b'0'..=b'9' => lx.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => lx.ident(),
                _ => {
                    return Err(ParseError {
                        pos: start,
                        msg: format!("unexpected character '{}'", c as char),
                    })
                }
            };
            out.push((tok, start));
        }
        Ok(out)
    }

    fn skip_ws(&mut self) {
        while matches!(self.src.get(self.pos), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let mut integral = true;
        while matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if matches!(self.src.get(self.pos), Some(b'.')) {
            integral = false;
            self.pos += 1;
            while matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            integral = false;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                return Err(ParseError { pos: self.pos, msg: "malformed exponent".into() });
            }
            while matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError { pos: start, msg: format!("bad number '{text}'") })?;
        Ok(Tok::Num(value, integral))
    }

    fn ident(&mut self) -> Tok {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    end: usize,
    ctx: ExprContext,
    dims: (usize, usize),
    src_len: usize,
    _marker: std::marker::PhantomData<&'a ()>,
}

/// Parse `source` in the given context with dimension bounds `(m, d)`.
pub fn parse_expr(
    source: &str,
    ctx: ExprContext,
    dims: (usize, usize),
) -> Result<Expr, ParseError> {
    let toks = Lexer::tokenize(source)?;
    let end = toks.len();
    let mut p = Parser {
        toks,
        at: 0,
        end,
        ctx,
        dims,
        src_len: source.len(),
        _marker: std::marker::PhantomData,
    };
    let e = p.expr()?;
    if p.at != p.end {
        return Err(ParseError { pos: p.pos(), msg: "trailing input".into() });
    }
    Ok(e)
}

impl Parser<'_> {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.src_len, |(_, p)| *p)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            Err(ParseError { pos: self.pos(), msg: format!("expected {what}") })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut node = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.at += 1;
            let rhs = self.term()?;
            node = Expr::Bin(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut node = self.power()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            let op_pos = self.pos();
            self.at += 1;
            let rhs = self.power()?;
            if op == BinOp::Div && matches!(rhs, Expr::Lit(v) if v == 0.0) {
                return Err(ParseError { pos: op_pos, msg: "division by literal zero".into() });
            }
            node = Expr::Bin(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut node = self.unary()?;
        while self.peek() == Some(&Tok::Caret) {
            self.at += 1;
            let pos = self.pos();
            match self.bump() {
                Some(Tok::Num(v, true)) if v >= 0.0 && v <= u32::MAX as f64 => {
                    node = Expr::Pow(Box::new(node), v as u32);
                }
                _ => {
                    return Err(ParseError {
                        pos,
                        msg: "exponent must be an unsigned integer literal".into(),
                    })
                }
            }
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.at += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v, _)) => Ok(Expr::Lit(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.at += 1;
                    self.call(&name, pos)
                } else {
                    self.variable(&name, pos)
                }
            }
            Some(_) => Err(ParseError { pos, msg: "expected a value".into() }),
            None => Err(ParseError { pos, msg: "unexpected end of input".into() }),
        }
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        let mut args = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.at += 1;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "')'")?;
        let got = args.len();
        let arity_err = move |want: usize| ParseError {
            pos,
            msg: format!("{name} takes {want} argument(s), got {got}"),
        };
        let f1 = |f: Func1, mut args: Vec<Expr>| {
            if args.len() == 1 {
                Ok(Expr::Call1(f, Box::new(args.remove(0))))
            } else {
                Err(arity_err(1))
            }
        };
        let f2 = |f: Func2, mut args: Vec<Expr>| {
            if args.len() == 2 {
                let b = args.remove(1);
                let a = args.remove(0);
                Ok(Expr::Call2(f, Box::new(a), Box::new(b)))
            } else {
                Err(arity_err(2))
            }
        };
        match name {
            "exp" => f1(Func1::Exp, args),
            "sin" => f1(Func1::Sin, args),
            "cos" => f1(Func1::Cos, args),
            "abs" => f1(Func1::Abs, args),
            "sqrt_abs" => f1(Func1::SqrtAbs, args),
            "max" => f2(Func2::Max, args),
            "min" => f2(Func2::Min, args),
            _ => Err(ParseError { pos, msg: format!("unknown function '{name}'") }),
        }
    }

    fn variable(&mut self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        let var = parse_var(name)
            .ok_or_else(|| ParseError { pos, msg: format!("unknown variable '{name}'") })?;
        let allowed: &[fn(&Var) -> bool] = match self.ctx {
            ExprContext::Terminal => &[
                |v| matches!(v, Var::T),
                |v| matches!(v, Var::X(_)),
            ],
            ExprContext::Generator => &[
                |v| matches!(v, Var::T),
                |v| matches!(v, Var::S),
                |v| matches!(v, Var::Y(_)),
                |v| matches!(v, Var::Z(_, _)),
                |v| matches!(v, Var::Zeta(_, _)),
                |v| matches!(v, Var::W(_)),
            ],
            ExprContext::TimePair => &[
                |v| matches!(v, Var::T),
                |v| matches!(v, Var::S),
            ],
        };
        if !allowed.iter().any(|f| f(&var)) {
            return Err(ParseError {
                pos,
                msg: format!("variable '{name}' not allowed in this context"),
            });
        }
        let (m, d) = self.dims;
        let in_bounds = match var {
            Var::Y(k) => k < m,
            Var::Z(k, l) | Var::Zeta(k, l) => k < m && l < d,
            Var::W(l) | Var::X(l) => l < d,
            _ => true,
        };
        if !in_bounds {
            return Err(ParseError {
                pos,
                msg: format!("variable '{name}' index out of bounds for dimensions ({m}, {d})"),
            });
        }
        Ok(Expr::Var(var))
    }
}

fn parse_var(name: &str) -> Option<Var> {
    match name {
        "t" => return Some(Var::T),
        "s" => return Some(Var::S),
        _ => {}
    }
    let (head, rest) = name.split_once('_')?;
    let idx = |s: &str| s.parse::<usize>().ok();
    match head {
        "y" => Some(Var::Y(idx(rest)?)),
        "w" => Some(Var::W(idx(rest)?)),
        "x" => Some(Var::X(idx(rest)?)),
        "z" | "zeta" => {
            let (a, b) = rest.split_once('_')?;
            let (k, l) = (idx(a)?, idx(b)?);
            if head == "z" {
                Some(Var::Z(k, l))
            } else {
                Some(Var::Zeta(k, l))
            }
        }
        _ => None,
    }
}
