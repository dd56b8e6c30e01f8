//! Arithmetic expression DSL for terminal conditions, generators, and
//! (t,s)-dependent Lipschitz bounds.
//!
//! Grammar (documented verbatim in `docs/grammar.md`):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := power (('*' | '/') power)*
//! power  := unary ('^' uint)*                 -- integer exponents only
//! unary  := '-' unary | atom
//! atom   := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x_0^2` is `(-x_0)^2`. Variables
//! are `t`, `s`, `y_<k>`, `z_<k>_<l>`, `zeta_<k>_<l>`, `w_<l>`, `x_<l>` with
//! 0-based indices; which ones are admissible depends on the parse context.
//! Functions: `exp`, `sin`, `cos`, `abs`, `sqrt_abs` (one argument), `max`,
//! `min` (two arguments). `sqrt_abs(v) = sqrt(|v|)` keeps every expression
//! total on the real line.

mod lipschitz;
mod parser;

pub use lipschitz::{estimate_lipschitz, SampleBox};
pub use parser::parse_expr;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Variables admissible in an expression, fixed by where it appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprContext {
    /// Terminal condition `psi(t, x)` with `x = W(T)`: allows `t`, `x_<l>`.
    Terminal,
    /// Generator `g(t, s, y, z, zeta, w)` with `w = W(s)`: allows `t`, `s`,
    /// `y_<k>`, `z_<k>_<l>`, `zeta_<k>_<l>`, `w_<l>`.
    Generator,
    /// Deterministic kernel in `(t, s)` (expression-valued Lipschitz bounds).
    TimePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    T,
    S,
    Y(usize),
    Z(usize, usize),
    Zeta(usize, usize),
    W(usize),
    X(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::S => write!(f, "s"),
            Var::Y(k) => write!(f, "y_{k}"),
            Var::Z(k, l) => write!(f, "z_{k}_{l}"),
            Var::Zeta(k, l) => write!(f, "zeta_{k}_{l}"),
            Var::W(l) => write!(f, "w_{l}"),
            Var::X(l) => write!(f, "x_{l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Exp,
    Sin,
    Cos,
    Abs,
    SqrtAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Max,
    Min,
}

/// Expression AST. Trees compare structurally; the printer and parser are
/// mutually inverse on parse images.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
}

/// Supplies variable values during evaluation.
pub trait VarResolver {
    fn resolve(&self, var: Var) -> Option<f64>;
}

/// Resolver over an association list; convenient in tests.
pub struct MapBindings<'a>(pub &'a [(Var, f64)]);

impl VarResolver for MapBindings<'_> {
    fn resolve(&self, var: Var) -> Option<f64> {
        self.0.iter().find(|(v, _)| *v == var).map(|(_, x)| *x)
    }
}

/// Terminal-condition arguments: `t` and the terminal Brownian value.
pub struct TerminalArgs<'a> {
    pub t: f64,
    pub x: &'a [f64],
}

impl VarResolver for TerminalArgs<'_> {
    fn resolve(&self, var: Var) -> Option<f64> {
        match var {
            Var::T => Some(self.t),
            Var::X(l) => self.x.get(l).copied(),
            _ => None,
        }
    }
}

/// Generator arguments. `z` and `zeta` are row-major `m x d`; `zeta` is
/// `None` in adapted mode, making any read of it an evaluation error.
pub struct GeneratorArgs<'a> {
    pub t: f64,
    pub s: f64,
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub zeta: Option<&'a [f64]>,
    pub w: &'a [f64],
    pub dim_w: usize,
}

impl VarResolver for GeneratorArgs<'_> {
    fn resolve(&self, var: Var) -> Option<f64> {
        match var {
            Var::T => Some(self.t),
            Var::S => Some(self.s),
            Var::Y(k) => self.y.get(k).copied(),
            Var::Z(k, l) => self.z.get(k * self.dim_w + l).copied(),
            Var::Zeta(k, l) => self.zeta.and_then(|z| z.get(k * self.dim_w + l)).copied(),
            Var::W(l) => self.w.get(l).copied(),
            _ => None,
        }
    }
}

/// Time-pair arguments for deterministic kernels.
pub struct TimePairArgs {
    pub t: f64,
    pub s: f64,
}

impl VarResolver for TimePairArgs {
    fn resolve(&self, var: Var) -> Option<f64> {
        match var {
            Var::T => Some(self.t),
            Var::S => Some(self.s),
            _ => None,
        }
    }
}

impl Expr {
    /// Evaluate against a resolver. Deterministic and side-effect free;
    /// dividing by a zero value is a runtime error.
    pub fn eval<R: VarResolver>(&self, r: &R) -> Result<f64, EvalError> {
        match self {
            Expr::Lit(v) => Ok(*v),
            Expr::Var(var) => r.resolve(*var).ok_or_else(|| EvalError::Unbound(var.to_string())),
            Expr::Neg(e) => Ok(-e.eval(r)?),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(r)?, b.eval(r)?);
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(EvalError::DivisionByZero)
                        } else {
                            Ok(a / b)
                        }
                    }
                }
            }
            Expr::Pow(e, n) => Ok(e.eval(r)?.powi(*n as i32)),
            Expr::Call1(f, e) => {
                let v = e.eval(r)?;
                Ok(match f {
                    Func1::Exp => v.exp(),
                    Func1::Sin => v.sin(),
                    Func1::Cos => v.cos(),
                    Func1::Abs => v.abs(),
                    Func1::SqrtAbs => v.abs().sqrt(),
                })
            }
            Expr::Call2(f, a, b) => {
                let (a, b) = (a.eval(r)?, b.eval(r)?);
                Ok(match f {
                    Func2::Max => a.max(b),
                    Func2::Min => a.min(b),
                })
            }
        }
    }

    /// All variables occurring in the tree.
    pub fn variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call1(_, e) => e.collect_vars(out),
            Expr::Bin(_, a, b) | Expr::Call2(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Whether any `zeta_<k>_<l>` occurs.
    pub fn uses_zeta(&self) -> bool {
        self.variables().iter().any(|v| matches!(v, Var::Zeta(_, _)))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
            Expr::Pow(_, _) => 3,
            Expr::Neg(_) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parens_below: u8) -> fmt::Result {
        let prec = self.precedence();
        let need = prec < parens_below;
        if need {
            write!(f, "(")?;
        }
        match self {
            Expr::Lit(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    // Parser never produces negative literals; keep value
                    // equality for programmatic trees.
                    write!(f, "-{}", -v)?;
                } else {
                    write!(f, "{v}")?;
                }
            }
            Expr::Var(v) => write!(f, "{v}")?,
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 4)?;
            }
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                a.fmt_prec(f, prec)?;
                write!(f, " {sym} ")?;
                // Left-associative grammar: equal precedence on the right
                // re-associates, so parenthesise it.
                b.fmt_prec(f, prec + 1)?;
            }
            Expr::Pow(base, n) => {
                base.fmt_prec(f, 3)?;
                write!(f, "^{n}")?;
            }
            Expr::Call1(func, e) => {
                let name = match func {
                    Func1::Exp => "exp",
                    Func1::Sin => "sin",
                    Func1::Cos => "cos",
                    Func1::Abs => "abs",
                    Func1::SqrtAbs => "sqrt_abs",
                };
                write!(f, "{name}(")?;
                e.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Call2(func, a, b) => {
                let name = match func {
                    Func2::Max => "max",
                    Func2::Min => "min",
                };
                write!(f, "{name}(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                b.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if need {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(src: &str) -> Expr {
        parse_expr(src, ExprContext::Terminal, (1, 1)).unwrap()
    }

    fn gen(src: &str) -> Expr {
        parse_expr(src, ExprContext::Generator, (1, 1)).unwrap()
    }

    #[test]
    fn parses_terminal_product() {
        assert_eq!(
            term("t * x_0"),
            Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Var(Var::T)),
                Box::new(Expr::Var(Var::X(0)))
            )
        );
    }

    #[test]
    fn parses_generator_affine() {
        assert_eq!(
            gen("0.5 * y_0 + z_0_0"),
            Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Lit(0.5)),
                    Box::new(Expr::Var(Var::Y(0)))
                )),
                Box::new(Expr::Var(Var::Z(0, 0)))
            )
        );
    }

    #[test]
    fn zeta_rejected_in_terminal_context() {
        let err = parse_expr("zeta_0_0", ExprContext::Terminal, (1, 1)).unwrap_err();
        assert!(err.msg.contains("not allowed"), "{err}");
    }

    #[test]
    fn index_out_of_bounds_rejected() {
        let err = parse_expr("y_2", ExprContext::Generator, (2, 1)).unwrap_err();
        assert!(err.msg.contains("out of bounds"), "{err}");
        assert!(parse_expr("y_1", ExprContext::Generator, (2, 1)).is_ok());
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_expr("1 + * 2", ExprContext::Terminal, (1, 1)).unwrap_err();
        assert_eq!(err.pos, 4);
    }

    #[test]
    fn division_by_literal_zero_rejected_at_parse() {
        assert!(parse_expr("t / 0", ExprContext::Terminal, (1, 1)).is_err());
        assert!(parse_expr("t / 0.0", ExprContext::Terminal, (1, 1)).is_err());
    }

    #[test]
    fn unary_minus_binds_tighter_than_power() {
        // -t^2 must be (-t)^2, which evaluates to +t^2.
        let e = term("-t^2");
        let v = e.eval(&MapBindings(&[(Var::T, 3.0)])).unwrap();
        assert_eq!(v, 9.0);
    }

    #[test]
    fn eval_examples() {
        let e = term("t * x_0");
        assert_eq!(e.eval(&MapBindings(&[(Var::T, 0.5), (Var::X(0), 2.0)])).unwrap(), 1.0);
        assert_eq!(term("exp(0)").eval(&MapBindings(&[])).unwrap(), 1.0);
        let e = gen("max(y_0, 0) - y_0");
        assert_eq!(e.eval(&MapBindings(&[(Var::Y(0), -3.0)])).unwrap(), 3.0);
    }

    #[test]
    fn eval_errors() {
        let e = term("t * x_0");
        assert!(matches!(
            e.eval(&MapBindings(&[(Var::T, 0.5)])),
            Err(EvalError::Unbound(_))
        ));
        let e = term("t / x_0");
        assert_eq!(
            e.eval(&MapBindings(&[(Var::T, 1.0), (Var::X(0), 0.0)])),
            Err(EvalError::DivisionByZero)
        );
    }

    #[test]
    fn eval_is_reproducible_bitwise() {
        let e = gen("exp(sin(y_0) * cos(z_0_0)) - sqrt_abs(w_0)");
        let b = [(Var::Y(0), 0.3), (Var::Z(0, 0), -1.7), (Var::W(0), 2.5)];
        let first = e.eval(&MapBindings(&b)).unwrap();
        for _ in 0..10 {
            assert_eq!(e.eval(&MapBindings(&b)).unwrap(), first);
        }
    }

    #[test]
    fn print_parse_round_trip_examples() {
        for src in [
            "t * w_0",
            "0.5 * y_0 + z_0_0",
            "-t^2",
            "t - (s - y_0)",
            "t / (s + 1) / 2",
            "max(y_0, min(z_0_0, zeta_0_0)) - sqrt_abs(w_0)",
            "(t + s)^3 * y_0^2",
            "--y_0",
            "exp(-(t^2))",
        ] {
            let ctx = ExprContext::Generator;
            let e = parse_expr(src, ctx, (1, 1)).unwrap();
            let printed = e.to_string();
            let reparsed = parse_expr(&printed, ctx, (1, 1)).unwrap();
            assert_eq!(e, reparsed, "src={src} printed={printed}");
        }
    }
}
