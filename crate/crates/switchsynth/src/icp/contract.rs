//! HC4-revise: forward interval evaluation followed by backward projection
//! of the constraint range through the expression tape.
//!
//! Contraction never widens a variable domain and never discards a point
//! that satisfies the unweakened constraint; projections that cannot be
//! inverted tightly (trigonometric nodes, division through zero) simply
//! leave the child domain unchanged.

use crate::symexpr::compiled::TapeOp;
use crate::symexpr::{BinaryOp, CompiledExpr, Interval, IntervalBox, UnaryOp};

use super::Relation;

#[derive(Default)]
pub struct ContractScratch {
    fwd: Vec<Interval>,
    bwd: Vec<Interval>,
}

/// Contract `b` in place under `expr rel 0`. Returns false when the box is
/// proved to contain no solution of the unweakened constraint.
pub fn hc4_revise(
    compiled: &CompiledExpr,
    rel: Relation,
    b: &mut IntervalBox,
    scratch: &mut ContractScratch,
) -> bool {
    let root = compiled.eval_interval_into(b, &mut scratch.fwd);

    // Intersect the root with the constraint's admissible range. Pruning is
    // exact with respect to the unweakened relation; a strict constraint is
    // already infeasible when the enclosure cannot go below zero.
    if rel == Relation::Lt && root.lo() >= 0.0 {
        return false;
    }
    let range = match rel {
        Relation::Le | Relation::Lt => Interval::new(f64::NEG_INFINITY, 0.0),
        Relation::Eq => Interval::point(0.0),
    };
    let projected_root = match root.intersect(&range) {
        Some(iv) => iv,
        None => return false,
    };

    let ops = &compiled.ops;
    scratch.bwd.clear();
    scratch.bwd.extend_from_slice(&scratch.fwd);
    let n = ops.len();
    scratch.bwd[n - 1] = projected_root;

    // Backward sweep: children are projected from their parents. The tape
    // is in postfix order, so parents come after children.
    for k in (0..n).rev() {
        let out = scratch.bwd[k];
        match ops[k] {
            TapeOp::Const(v) => {
                if !out.contains(v) {
                    return false;
                }
            }
            TapeOp::Var(_) => {}
            TapeOp::Un(op, a) => {
                let ia = scratch.bwd[a];
                let na = match op {
                    UnaryOp::Neg => ia.intersect(&out.neg()),
                    UnaryOp::Sin | UnaryOp::Cos => {
                        // Periodic inverse not projected; feasibility only.
                        if out.intersect(&Interval::new(-1.0, 1.0)).is_none() {
                            return false;
                        }
                        Some(ia)
                    }
                    UnaryOp::Exp => match out.ln() {
                        Some(l) => ia.intersect(&l),
                        None => return false, // exp range is positive
                    },
                    UnaryOp::Sqrt => {
                        let nn = match out.intersect(&Interval::new(0.0, f64::INFINITY)) {
                            Some(iv) => iv,
                            None => return false,
                        };
                        // a = out^2, and a must be in the domain of sqrt.
                        ia.intersect(&nn.powi(2))
                            .and_then(|iv| iv.intersect(&Interval::new(0.0, f64::INFINITY)))
                    }
                };
                match na {
                    Some(iv) => scratch.bwd[a] = iv,
                    None => return false,
                }
            }
            TapeOp::Bin(op, a, bb) => {
                let ia = scratch.bwd[a];
                let ib = scratch.bwd[bb];
                let (na, nb) = match op {
                    BinaryOp::Add => (ia.intersect(&out.sub(&ib)), ib.intersect(&out.sub(&ia))),
                    BinaryOp::Sub => (ia.intersect(&out.add(&ib)), ib.intersect(&ia.sub(&out))),
                    BinaryOp::Mul => {
                        let na = if ib.contains_zero() {
                            Some(ia)
                        } else {
                            ia.intersect(&out.div(&ib))
                        };
                        let nb = if ia.contains_zero() {
                            Some(ib)
                        } else {
                            ib.intersect(&out.div(&ia))
                        };
                        (na, nb)
                    }
                    BinaryOp::Div => {
                        // out = a / b  =>  a in out*b,  b in a/out.
                        let na = ia.intersect(&out.mul(&ib));
                        let nb = if out.contains_zero() {
                            Some(ib)
                        } else {
                            ib.intersect(&ia.div(&out))
                        };
                        (na, nb)
                    }
                };
                match (na, nb) {
                    (Some(x), Some(y)) => {
                        scratch.bwd[a] = x;
                        scratch.bwd[bb] = y;
                    }
                    _ => return false,
                }
            }
            TapeOp::Pow(a, n_exp) => {
                let ia = scratch.bwd[a];
                let na = match project_pow(&out, &ia, n_exp) {
                    Some(iv) => iv,
                    None => return false,
                };
                scratch.bwd[a] = na;
            }
        }
    }

    // Fold projected variable slots back into the box.
    for (k, op) in ops.iter().enumerate() {
        if let TapeOp::Var(i) = op {
            match b.get(*i).intersect(&scratch.bwd[k]) {
                Some(iv) => b.set(*i, iv),
                None => return false,
            }
        }
    }
    true
}

/// Inverse of `y = x^n`: the admissible x-domain given y in `out` and the
/// current x-domain `ia`. Root endpoints are widened outward to stay sound
/// under `powf` rounding.
fn project_pow(out: &Interval, ia: &Interval, n: u32) -> Option<Interval> {
    if n == 0 {
        return if out.contains(1.0) { Some(*ia) } else { None };
    }
    if n == 1 {
        return ia.intersect(out);
    }
    let root = |v: f64| -> f64 {
        if v == f64::INFINITY || v == f64::NEG_INFINITY {
            return v;
        }
        v.signum() * v.abs().powf(1.0 / n as f64)
    };
    let widen = |iv: Interval| -> Interval {
        let lo = if iv.lo().is_finite() {
            iv.lo().next_down().next_down().next_down()
        } else {
            iv.lo()
        };
        let hi = if iv.hi().is_finite() {
            iv.hi().next_up().next_up().next_up()
        } else {
            iv.hi()
        };
        Interval::new(lo, hi)
    };
    if n % 2 == 1 {
        let inv = widen(Interval::new(root(out.lo()), root(out.hi())));
        ia.intersect(&inv)
    } else {
        // Even power: y must be nonnegative; |x| <= y_hi^(1/n).
        let nn = out.intersect(&Interval::new(0.0, f64::INFINITY))?;
        let r_hi = root(nn.hi());
        let r_lo = root(nn.lo());
        let outer = widen(Interval::new(-r_hi, r_hi));
        let narrowed = ia.intersect(&outer)?;
        // When the x-domain has a definite sign, the inner radius prunes too.
        if nn.lo() > 0.0 {
            if narrowed.lo() >= 0.0 {
                return narrowed.intersect(&widen(Interval::new(r_lo, r_hi)));
            }
            if narrowed.hi() <= 0.0 {
                return narrowed.intersect(&widen(Interval::new(-r_hi, -r_lo)));
            }
        }
        Some(narrowed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{parse_expr, VarContext};

    fn contract(s: &str, rel: Relation, b: &mut IntervalBox, ctx: &VarContext) -> bool {
        let e = parse_expr(s, ctx).unwrap();
        let c = CompiledExpr::compile(&e);
        hc4_revise(&c, rel, b, &mut ContractScratch::default())
    }

    #[test]
    fn linear_projection_tightens() {
        let ctx = VarContext::new(vec!["x", "y"]);
        // x + y <= 0 with y in [2, 3] forces x <= -2.
        let mut b = IntervalBox::from_bounds(&[(-10.0, 10.0), (2.0, 3.0)]);
        assert!(contract("x + y", Relation::Le, &mut b, &ctx));
        assert!(b.get(0).hi() <= -2.0 + 1e-9, "got {:?}", b.get(0));
        assert!(b.get(0).lo() <= -10.0);
    }

    #[test]
    fn square_projection_prunes_radius() {
        let ctx = VarContext::new(vec!["x"]);
        // x^2 - 4 <= 0 => |x| <= 2.
        let mut b = IntervalBox::from_bounds(&[(-10.0, 10.0)]);
        assert!(contract("x^2 - 4", Relation::Le, &mut b, &ctx));
        assert!(b.get(0).hi() <= 2.0 + 1e-9 && b.get(0).lo() >= -2.0 - 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let ctx = VarContext::new(vec!["x"]);
        let mut b = IntervalBox::from_bounds(&[(-3.0, 3.0)]);
        assert!(!contract("x^2 + 1", Relation::Le, &mut b, &ctx));
    }

    #[test]
    fn never_discards_solutions() {
        use rand::{Rng, SeedableRng};
        let ctx = VarContext::new(vec!["x", "y"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cases = [
            ("x^2 + y^2 - 1", Relation::Le),
            ("x*y - 0.5", Relation::Le),
            ("exp(x) - y - 1", Relation::Le),
            ("x^3 - y", Relation::Eq),
        ];
        for (s, rel) in cases {
            let e = parse_expr(s, &ctx).unwrap();
            for _ in 0..200 {
                let x = rng.gen_range(-1.5..1.5);
                let y = rng.gen_range(-1.5..1.5);
                let v = e.eval_point(&[x, y]).unwrap();
                let sat = match rel {
                    Relation::Le => v <= 0.0,
                    Relation::Lt => v < 0.0,
                    Relation::Eq => v.abs() < 1e-12,
                };
                if !sat {
                    continue;
                }
                let mut b = IntervalBox::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]);
                assert!(contract(s, rel, &mut b, &ctx));
                assert!(
                    b.contains(&[x, y]),
                    "solution ({x}, {y}) of {s} discarded: {b:?}"
                );
            }
        }
    }

    #[test]
    fn contracted_box_is_subset() {
        let ctx = VarContext::new(vec!["x", "y"]);
        let orig = IntervalBox::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]);
        for s in ["x^2 + y^2 - 1", "x - y^3", "sqrt(x^2) - 1"] {
            let mut b = orig.clone();
            if contract(s, Relation::Le, &mut b, &ctx) {
                for i in 0..2 {
                    assert!(b.get(i).lo() >= orig.get(i).lo());
                    assert!(b.get(i).hi() <= orig.get(i).hi());
                }
            }
        }
    }
}
