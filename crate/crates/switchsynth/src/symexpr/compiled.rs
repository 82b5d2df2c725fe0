//! Flat evaluation tape for expressions.
//!
//! The tree walkers in `Expr` are convenient but allocate nothing reusable;
//! the branch-and-prune solver and the simulator evaluate the same
//! expressions millions of times, so they compile each one into a postfix
//! tape once and then run forward (and backward, for contraction) passes
//! over index slices.

use super::interval::{Interval, IntervalBox};
use super::{BinaryOp, EvalError, Expr, UnaryOp};

#[derive(Clone, Copy, Debug)]
pub(crate) enum TapeOp {
    Const(f64),
    Var(usize),
    Un(UnaryOp, usize),
    Bin(BinaryOp, usize, usize),
    Pow(usize, u32),
}

/// An expression compiled to a postfix tape; slot `i` holds the value of
/// instruction `i`, and the final slot is the expression value.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    pub(crate) ops: Vec<TapeOp>,
}

impl CompiledExpr {
    pub fn compile(e: &Expr) -> Self {
        let mut ops = Vec::new();
        fn walk(e: &Expr, ops: &mut Vec<TapeOp>) -> usize {
            let op = match e {
                Expr::Const(v) => TapeOp::Const(*v),
                Expr::Var(i) => TapeOp::Var(*i),
                Expr::Unary(op, a) => {
                    let ia = walk(a, ops);
                    TapeOp::Un(*op, ia)
                }
                Expr::Binary(op, a, b) => {
                    let ia = walk(a, ops);
                    let ib = walk(b, ops);
                    TapeOp::Bin(*op, ia, ib)
                }
                Expr::Pow(a, n) => {
                    let ia = walk(a, ops);
                    TapeOp::Pow(ia, *n)
                }
            };
            ops.push(op);
            ops.len() - 1
        }
        walk(e, &mut ops);
        CompiledExpr { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Pointwise evaluation using a caller-provided scratch buffer (resized
    /// as needed).
    pub fn eval_point_with(&self, x: &[f64], scratch: &mut Vec<f64>) -> Result<f64, EvalError> {
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                TapeOp::Const(c) => c,
                TapeOp::Var(i) => x[i],
                TapeOp::Un(op, a) => {
                    let va = scratch[a];
                    match op {
                        UnaryOp::Neg => -va,
                        UnaryOp::Sin => va.sin(),
                        UnaryOp::Cos => va.cos(),
                        UnaryOp::Exp => va.exp(),
                        UnaryOp::Sqrt => {
                            if va < 0.0 {
                                return Err(EvalError::SqrtNegative);
                            }
                            va.sqrt()
                        }
                    }
                }
                TapeOp::Bin(op, a, b) => {
                    let (va, vb) = (scratch[a], scratch[b]);
                    match op {
                        BinaryOp::Add => va + vb,
                        BinaryOp::Sub => va - vb,
                        BinaryOp::Mul => va * vb,
                        BinaryOp::Div => {
                            if vb == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            va / vb
                        }
                    }
                }
                TapeOp::Pow(a, n) => scratch[a].powi(n as i32),
            };
            scratch.push(v);
        }
        Ok(*scratch.last().expect("empty tape"))
    }

    pub fn eval_point(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut scratch = Vec::new();
        self.eval_point_with(x, &mut scratch)
    }

    /// Forward interval sweep, filling `vals` with one interval per tape
    /// slot. Returns the root enclosure.
    pub fn eval_interval_into(&self, b: &IntervalBox, vals: &mut Vec<Interval>) -> Interval {
        vals.clear();
        vals.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                TapeOp::Const(c) => Interval::point(c),
                TapeOp::Var(i) => *b.get(i),
                TapeOp::Un(op, a) => {
                    let va = vals[a];
                    match op {
                        UnaryOp::Neg => va.neg(),
                        UnaryOp::Sin => va.sin(),
                        UnaryOp::Cos => va.cos(),
                        UnaryOp::Exp => va.exp(),
                        UnaryOp::Sqrt => va.sqrt(),
                    }
                }
                TapeOp::Bin(op, a, bb) => {
                    let (va, vb) = (vals[a], vals[bb]);
                    match op {
                        BinaryOp::Add => va.add(&vb),
                        BinaryOp::Sub => va.sub(&vb),
                        BinaryOp::Mul => va.mul(&vb),
                        BinaryOp::Div => va.div(&vb),
                    }
                }
                TapeOp::Pow(a, n) => vals[a].powi(n),
            };
            vals.push(v);
        }
        *vals.last().expect("empty tape")
    }

    pub fn eval_interval(&self, b: &IntervalBox) -> Interval {
        let mut vals = Vec::new();
        self.eval_interval_into(b, &mut vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{parse_expr, VarContext};

    #[test]
    fn tape_matches_tree_eval() {
        let ctx = VarContext::new(vec!["x", "y"]);
        let exprs = [
            "x^3 - 2*x*y + sin(y)",
            "exp(x)/(1 + y^2)",
            "sqrt(x^2 + y^2) - cos(x*y)",
        ];
        for s in exprs {
            let e = parse_expr(s, &ctx).unwrap();
            let c = CompiledExpr::compile(&e);
            for (x, y) in [(0.3, -1.2), (2.0, 0.5), (-0.7, 3.1)] {
                let a = e.eval_point(&[x, y]).unwrap();
                let b = c.eval_point(&[x, y]).unwrap();
                assert_eq!(a, b);
            }
            let bx = IntervalBox::from_bounds(&[(-1.0, 1.5), (-2.0, 2.0)]);
            assert_eq!(e.eval_interval(&bx), c.eval_interval(&bx));
        }
    }
}
