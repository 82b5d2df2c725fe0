//! Symbolic scalar expressions over named real variables.
//!
//! Expressions are immutable trees with structural sharing (`Arc`), built
//! through constructors that fold constants and apply 0/1 identities. They
//! are the common currency for dynamics, set predicates, and certificates:
//! everything downstream differentiates them, evaluates them pointwise, or
//! bounds them over boxes with interval arithmetic.

pub(crate) mod compiled;
mod interval;
mod parser;

pub use compiled::CompiledExpr;
pub use interval::{Interval, IntervalBox};
pub use parser::{parse_expr, ParseError};

use std::fmt;
use std::sync::Arc;

/// Variable context: ordered list of variable names. An expression's `Var`
/// indices refer to positions in one of these.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarContext {
    names: Vec<String>,
}

impl VarContext {
    pub fn new<S: Into<String>>(names: Vec<S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        assert!(!names.is_empty(), "empty variable context");
        VarContext { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Context extended with additional names (used to append coefficient
    /// variables after the state variables).
    pub fn extended<S: Into<String>>(&self, extra: Vec<S>) -> VarContext {
        let mut names = self.names.clone();
        names.extend(extra.into_iter().map(Into::into));
        VarContext { names }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree node. Use the `Expr::...` constructors rather than
/// building variants directly; they apply canonical simplification.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Arc<Expr>),
    Binary(BinaryOp, Arc<Expr>, Arc<Expr>),
    /// Power with a non-negative integer exponent.
    Pow(Arc<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value")]
    SqrtNegative,
    #[error("point dimension {got} does not match context size {want}")]
    DimensionMismatch { got: usize, want: usize },
}

impl Expr {
    pub fn constant(v: f64) -> Arc<Expr> {
        Arc::new(Expr::Const(v))
    }

    pub fn var(i: usize) -> Arc<Expr> {
        Arc::new(Expr::Var(i))
    }

    pub fn zero() -> Arc<Expr> {
        Expr::constant(0.0)
    }

    pub fn one() -> Arc<Expr> {
        Expr::constant(1.0)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(v) if *v == 1.0)
    }

    pub fn add(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x + y);
        }
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        Arc::new(Expr::Binary(BinaryOp::Add, a, b))
    }

    pub fn sub(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x - y);
        }
        if b.is_zero() {
            return a;
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        Arc::new(Expr::Binary(BinaryOp::Sub, a, b))
    }

    pub fn mul(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x * y);
        }
        if a.is_zero() || b.is_zero() {
            return Expr::zero();
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        Arc::new(Expr::Binary(BinaryOp::Mul, a, b))
    }

    pub fn div(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if y != 0.0 {
                return Expr::constant(x / y);
            }
        }
        if b.is_one() {
            return a;
        }
        Arc::new(Expr::Binary(BinaryOp::Div, a, b))
    }

    pub fn neg(a: Arc<Expr>) -> Arc<Expr> {
        if let Some(x) = a.as_const() {
            return Expr::constant(-x);
        }
        if let Expr::Unary(UnaryOp::Neg, inner) = &*a {
            return inner.clone();
        }
        Arc::new(Expr::Unary(UnaryOp::Neg, a))
    }

    pub fn sin(a: Arc<Expr>) -> Arc<Expr> {
        if let Some(x) = a.as_const() {
            return Expr::constant(x.sin());
        }
        Arc::new(Expr::Unary(UnaryOp::Sin, a))
    }

    pub fn cos(a: Arc<Expr>) -> Arc<Expr> {
        if let Some(x) = a.as_const() {
            return Expr::constant(x.cos());
        }
        Arc::new(Expr::Unary(UnaryOp::Cos, a))
    }

    pub fn exp(a: Arc<Expr>) -> Arc<Expr> {
        if let Some(x) = a.as_const() {
            return Expr::constant(x.exp());
        }
        Arc::new(Expr::Unary(UnaryOp::Exp, a))
    }

    pub fn sqrt(a: Arc<Expr>) -> Arc<Expr> {
        if let Some(x) = a.as_const() {
            if x >= 0.0 {
                return Expr::constant(x.sqrt());
            }
        }
        Arc::new(Expr::Unary(UnaryOp::Sqrt, a))
    }

    pub fn pow(a: Arc<Expr>, n: u32) -> Arc<Expr> {
        match n {
            0 => Expr::one(),
            1 => a,
            _ => {
                if let Some(x) = a.as_const() {
                    return Expr::constant(x.powi(n as i32));
                }
                Arc::new(Expr::Pow(a, n))
            }
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
            Expr::Pow(a, _) => a.max_var(),
        }
    }

    pub fn references_var(&self, v: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == v,
            Expr::Unary(_, a) => a.references_var(v),
            Expr::Binary(_, a, b) => a.references_var(v) || b.references_var(v),
            Expr::Pow(a, _) => a.references_var(v),
        }
    }

    /// Exact symbolic partial derivative with respect to variable `var`.
    pub fn differentiate(self: &Arc<Expr>, var: usize) -> Arc<Expr> {
        match &**self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Unary(op, a) => {
                let da = a.differentiate(var);
                match op {
                    UnaryOp::Neg => Expr::neg(da),
                    UnaryOp::Sin => Expr::mul(Expr::cos(a.clone()), da),
                    UnaryOp::Cos => Expr::neg(Expr::mul(Expr::sin(a.clone()), da)),
                    UnaryOp::Exp => Expr::mul(self.clone(), da),
                    UnaryOp::Sqrt => Expr::div(
                        da,
                        Expr::mul(Expr::constant(2.0), Expr::sqrt(a.clone())),
                    ),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                match op {
                    BinaryOp::Add => Expr::add(da, db),
                    BinaryOp::Sub => Expr::sub(da, db),
                    BinaryOp::Mul => Expr::add(
                        Expr::mul(da, b.clone()),
                        Expr::mul(a.clone(), db),
                    ),
                    BinaryOp::Div => Expr::div(
                        Expr::sub(
                            Expr::mul(da, b.clone()),
                            Expr::mul(a.clone(), db),
                        ),
                        Expr::pow(b.clone(), 2),
                    ),
                }
            }
            Expr::Pow(a, n) => {
                let da = a.differentiate(var);
                Expr::mul(
                    Expr::mul(Expr::constant(*n as f64), Expr::pow(a.clone(), n - 1)),
                    da,
                )
            }
        }
    }

    /// Standard floating-point evaluation at a point.
    pub fn eval_point(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(v) => Ok(*v),
            Expr::Var(i) => {
                if *i >= x.len() {
                    return Err(EvalError::DimensionMismatch {
                        got: x.len(),
                        want: *i + 1,
                    });
                }
                Ok(x[*i])
            }
            Expr::Unary(op, a) => {
                let v = a.eval_point(x)?;
                Ok(match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtNegative);
                        }
                        v.sqrt()
                    }
                })
            }
            Expr::Binary(op, a, b) => {
                let va = a.eval_point(x)?;
                let vb = b.eval_point(x)?;
                Ok(match op {
                    BinaryOp::Add => va + vb,
                    BinaryOp::Sub => va - vb,
                    BinaryOp::Mul => va * vb,
                    BinaryOp::Div => {
                        if vb == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        va / vb
                    }
                })
            }
            Expr::Pow(a, n) => Ok(a.eval_point(x)?.powi(*n as i32)),
        }
    }

    /// Rigorous interval enclosure of the expression's range over a box.
    /// Soundness is by outward widening in every primitive operation;
    /// division through zero yields the whole line rather than failing.
    pub fn eval_interval(&self, b: &IntervalBox) -> Interval {
        match self {
            Expr::Const(v) => Interval::point(*v),
            Expr::Var(i) => *b.get(*i),
            Expr::Unary(op, a) => {
                let v = a.eval_interval(b);
                match op {
                    UnaryOp::Neg => v.neg(),
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Sqrt => v.sqrt(),
                }
            }
            Expr::Binary(op, a, bb) => {
                let va = a.eval_interval(b);
                let vb = bb.eval_interval(b);
                match op {
                    BinaryOp::Add => va.add(&vb),
                    BinaryOp::Sub => va.sub(&vb),
                    BinaryOp::Mul => va.mul(&vb),
                    BinaryOp::Div => va.div(&vb),
                }
            }
            Expr::Pow(a, n) => a.eval_interval(b).powi(*n),
        }
    }

    /// Substitute expressions for a suffix of the variable range. Variable
    /// `first + k` is replaced by `subs[k]`; variables below `first` are
    /// kept. Used to instantiate template coefficients.
    pub fn substitute_from(self: &Arc<Expr>, first: usize, subs: &[Arc<Expr>]) -> Arc<Expr> {
        match &**self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => {
                if *i >= first {
                    subs[*i - first].clone()
                } else {
                    self.clone()
                }
            }
            Expr::Unary(op, a) => {
                let sa = a.substitute_from(first, subs);
                match op {
                    UnaryOp::Neg => Expr::neg(sa),
                    UnaryOp::Sin => Expr::sin(sa),
                    UnaryOp::Cos => Expr::cos(sa),
                    UnaryOp::Exp => Expr::exp(sa),
                    UnaryOp::Sqrt => Expr::sqrt(sa),
                }
            }
            Expr::Binary(op, a, b) => {
                let sa = a.substitute_from(first, subs);
                let sb = b.substitute_from(first, subs);
                match op {
                    BinaryOp::Add => Expr::add(sa, sb),
                    BinaryOp::Sub => Expr::sub(sa, sb),
                    BinaryOp::Mul => Expr::mul(sa, sb),
                    BinaryOp::Div => Expr::div(sa, sb),
                }
            }
            Expr::Pow(a, n) => Expr::pow(a.substitute_from(first, subs), *n),
        }
    }

    /// Render with variable names from `ctx`, parseable by `parse_expr`.
    pub fn display<'a>(&'a self, ctx: &'a VarContext) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, ctx }
    }
}

/// Lie derivative of `p` along the vector field `f`: the sum of
/// `dp/dx_i * f_i` over all state variables.
pub fn lie_derivative(p: &Arc<Expr>, field: &[Arc<Expr>]) -> Arc<Expr> {
    let mut acc = Expr::zero();
    for (i, fi) in field.iter().enumerate() {
        acc = Expr::add(acc, Expr::mul(p.differentiate(i), fi.clone()));
    }
    acc
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    ctx: &'a VarContext,
}

// Precedence levels: add/sub 1, mul/div 2, unary neg 3, pow 4, atoms 5.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(v) => {
            if *v < 0.0 {
                3
            } else {
                5
            }
        }
        Expr::Var(_) => 5,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        Expr::Unary(..) => 5,
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Expr::Binary(..) => 2,
        Expr::Pow(..) => 4,
    }
}

fn fmt_expr(e: &Expr, ctx: &VarContext, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
    let p = prec(e);
    let parens = p < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match e {
        Expr::Const(v) => write!(f, "{v}")?,
        Expr::Var(i) => write!(f, "{}", ctx.name(*i))?,
        Expr::Unary(UnaryOp::Neg, a) => {
            write!(f, "-")?;
            fmt_expr(a, ctx, f, 4)?;
        }
        Expr::Unary(op, a) => {
            let name = match op {
                UnaryOp::Sin => "sin",
                UnaryOp::Cos => "cos",
                UnaryOp::Exp => "exp",
                UnaryOp::Sqrt => "sqrt",
                UnaryOp::Neg => unreachable!(),
            };
            write!(f, "{name}(")?;
            fmt_expr(a, ctx, f, 0)?;
            write!(f, ")")?;
        }
        Expr::Binary(op, a, b) => {
            let (sym, lp, rp) = match op {
                BinaryOp::Add => (" + ", 1, 1),
                BinaryOp::Sub => (" - ", 1, 2),
                BinaryOp::Mul => ("*", 2, 2),
                BinaryOp::Div => ("/", 2, 3),
            };
            fmt_expr(a, ctx, f, lp)?;
            write!(f, "{sym}")?;
            fmt_expr(b, ctx, f, rp)?;
        }
        Expr::Pow(a, n) => {
            fmt_expr(a, ctx, f, 5)?;
            write!(f, "^{n}")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_expr(self.expr, self.ctx, f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx2() -> VarContext {
        VarContext::new(vec!["x1", "x2"])
    }

    fn parse(s: &str, ctx: &VarContext) -> Arc<Expr> {
        parse_expr(s, ctx).unwrap()
    }

    #[test]
    fn power_rule() {
        let ctx = ctx2();
        let e = parse("x1^2 * x2", &ctx);
        let d = e.differentiate(0);
        // 2*x1*x2 up to association.
        for (x, y) in [(1.5, 2.0), (-0.3, 0.7), (0.0, 5.0)] {
            assert!((d.eval_point(&[x, y]).unwrap() - 2.0 * x * y).abs() < 1e-12);
        }
    }

    #[test]
    fn table_derivative_sin() {
        let ctx = VarContext::new(vec!["x"]);
        let d = parse("sin(x)", &ctx).differentiate(0);
        assert_eq!(d, Expr::cos(Expr::var(0)));
    }

    #[test]
    fn mode_field_partial_is_constant() {
        // d/dx2 of (-x2 - 1.5*x1 - 0.5*x1^3) is -1.
        let ctx = ctx2();
        let e = parse("-x2 - 1.5*x1 - 0.5*x1^3", &ctx);
        let d = e.differentiate(1);
        assert_eq!(d.as_const(), Some(-1.0));
    }

    #[test]
    fn lie_derivative_coordinate() {
        let ctx = ctx2();
        let p = parse("x1", &ctx);
        let f = vec![parse("x2", &ctx), parse("-x1", &ctx)];
        assert_eq!(lie_derivative(&p, &f), parse("x2", &ctx));
    }

    #[test]
    fn lie_derivative_rotation_invariant() {
        let ctx = ctx2();
        let p = parse("x1^2 + x2^2", &ctx);
        let f = vec![parse("x2", &ctx), parse("-x1", &ctx)];
        let ld = lie_derivative(&p, &f);
        for (x, y) in [(1.0, 0.5), (-2.0, 3.0), (0.1, -0.7)] {
            assert!(ld.eval_point(&[x, y]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn lie_matches_componentwise_sum() {
        let ctx = ctx2();
        let p = parse("(x1+2)*(x1-2)", &ctx);
        let f = vec![
            parse("-x2 - 1.5*x1 - 0.5*x1^3 + 2", &ctx),
            parse("x1 + 10", &ctx),
        ];
        let ld = lie_derivative(&p, &f);
        let manual = Expr::add(
            Expr::mul(p.differentiate(0), f[0].clone()),
            Expr::mul(p.differentiate(1), f[1].clone()),
        );
        assert_eq!(ld, manual);
        // Finite-difference cross-check at scattered points.
        let h = 1e-6;
        for k in 0..100 {
            let x = -2.0 + 0.04 * k as f64;
            let y = 1.0 + 0.01 * k as f64;
            let dir = |t: f64| {
                let fx = f[0].eval_point(&[x, y]).unwrap();
                let fy = f[1].eval_point(&[x, y]).unwrap();
                p.eval_point(&[x + t * fx, y + t * fy]).unwrap()
            };
            let fd = (dir(h) - dir(-h)) / (2.0 * h);
            let v = ld.eval_point(&[x, y]).unwrap();
            assert!((fd - v).abs() <= 1e-4 * (1.0 + v.abs()), "fd={fd} sym={v}");
        }
    }

    #[test]
    fn eval_point_root_and_domain_errors() {
        let ctx = ctx2();
        let e = parse("(x1+2)*(x1-2)", &ctx);
        assert_eq!(e.eval_point(&[2.0, 0.0]).unwrap(), 0.0);
        let d = parse("1/x1", &ctx);
        assert_eq!(d.eval_point(&[0.0, 0.0]), Err(EvalError::DivisionByZero));
        let s = parse("sqrt(x1)", &ctx);
        assert_eq!(s.eval_point(&[-1.0, 0.0]), Err(EvalError::SqrtNegative));
    }

    #[test]
    fn interval_square() {
        let ctx = VarContext::new(vec!["x"]);
        let e = parse("x^2", &ctx);
        let i = e.eval_interval(&IntervalBox::from_bounds(&[(-1.0, 2.0)]));
        assert!(i.lo() <= 0.0 && i.hi() >= 4.0 && i.hi() < 4.0001);
    }

    #[test]
    fn interval_dependency_still_contains() {
        let ctx = VarContext::new(vec!["x"]);
        let e = parse("x - x", &ctx);
        let i = e.eval_interval(&IntervalBox::from_bounds(&[(0.0, 1.0)]));
        assert!(i.contains(0.0));
    }

    #[test]
    fn substitution_instantiates_suffix() {
        let ctx = VarContext::new(vec!["x", "c1", "c2"]);
        let e = parse("c1*x + c2*x^2", &ctx);
        let inst = e.substitute_from(1, &[Expr::constant(2.0), Expr::constant(-1.0)]);
        assert!((inst.eval_point(&[3.0]).unwrap() - (6.0 - 9.0)).abs() < 1e-12);
    }

    #[test]
    fn display_round_trips() {
        let ctx = ctx2();
        for s in [
            "x1^2 + 2*x1*x2 - sin(x2)",
            "(x1+2)*(x1-2)",
            "-x2 - 1.5*x1 - 0.5*x1^3",
            "exp(x1)/(1 + x2^2)",
            "sqrt(x1^2 + 1) - cos(x2)",
        ] {
            let e = parse(s, &ctx);
            let printed = e.display(&ctx).to_string();
            let back = parse(&printed, &ctx);
            assert_eq!(e, back, "round trip failed for {s} -> {printed}");
        }
    }
}
