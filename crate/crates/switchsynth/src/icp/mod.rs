//! Delta-complete satisfiability for quantifier-free nonlinear constraints
//! over boxes.
//!
//! `icp_solve` decides conjunctions of (possibly disjunctive) nonlinear
//! constraints by branch-and-prune: each box is contracted per constraint
//! with forward-backward interval propagation, boxes proved empty are
//! discarded, and remaining boxes are bisected along the widest normalized
//! dimension. UNSAT answers are exact; SAT answers come with a witness of
//! the delta-weakened system and are flagged when the witness fails the
//! unweakened constraints pointwise.

mod contract;

use crate::symexpr::{CompiledExpr, Expr, IntervalBox, VarContext};
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// expr <= 0
    Le,
    /// expr < 0
    Lt,
    /// expr = 0, weakened to a two-sided delta band
    Eq,
}

/// A single nonlinear constraint `expr rel 0` over the state variables.
#[derive(Clone, Debug)]
pub struct NonlinearConstraint {
    pub expr: Arc<Expr>,
    pub rel: Relation,
    compiled: CompiledExpr,
}

impl NonlinearConstraint {
    pub fn new(expr: Arc<Expr>, rel: Relation) -> Self {
        let compiled = CompiledExpr::compile(&expr);
        NonlinearConstraint { expr, rel, compiled }
    }

    pub fn le(expr: Arc<Expr>) -> Self {
        Self::new(expr, Relation::Le)
    }

    pub fn lt(expr: Arc<Expr>) -> Self {
        Self::new(expr, Relation::Lt)
    }

    pub fn eq(expr: Arc<Expr>) -> Self {
        Self::new(expr, Relation::Eq)
    }

    /// Pointwise check of the delta-weakened constraint.
    fn weakened_at(&self, x: &[f64], delta: f64, scratch: &mut Vec<f64>) -> bool {
        match self.compiled.eval_point_with(x, scratch) {
            Ok(v) => match self.rel {
                Relation::Le => v <= delta,
                Relation::Lt => v < delta,
                Relation::Eq => v.abs() <= delta,
            },
            Err(_) => false,
        }
    }

    /// Pointwise check of the unweakened constraint.
    fn exact_at(&self, x: &[f64], scratch: &mut Vec<f64>) -> bool {
        match self.compiled.eval_point_with(x, scratch) {
            Ok(v) => match self.rel {
                Relation::Le => v <= 0.0,
                Relation::Lt => v < 0.0,
                Relation::Eq => v == 0.0,
            },
            Err(_) => false,
        }
    }
}

/// A disjunction of atoms; the solver treats a conjunction of these.
/// Singleton clauses are plain constraints; wider clauses carry the
/// per-mode "some condition fails" structure of negated certificate
/// encodings.
#[derive(Clone, Debug)]
pub struct ConstraintClause {
    pub literals: Vec<NonlinearConstraint>,
}

impl ConstraintClause {
    pub fn single(c: NonlinearConstraint) -> Self {
        ConstraintClause { literals: vec![c] }
    }

    pub fn any(literals: Vec<NonlinearConstraint>) -> Self {
        assert!(!literals.is_empty(), "empty constraint clause");
        ConstraintClause { literals }
    }

    fn weakened_at(&self, x: &[f64], delta: f64, scratch: &mut Vec<f64>) -> bool {
        self.literals.iter().any(|l| l.weakened_at(x, delta, scratch))
    }

    fn exact_at(&self, x: &[f64], scratch: &mut Vec<f64>) -> bool {
        self.literals.iter().any(|l| l.exact_at(x, scratch))
    }
}

/// Verdict of a delta-sat query.
#[derive(Clone, Debug)]
pub enum DeltaVerdict {
    /// No real point in the region satisfies the unweakened conjunction.
    Unsat,
    /// `witness` satisfies every constraint weakened by delta; `spurious`
    /// is set when it fails the unweakened system pointwise.
    DeltaSat {
        witness: Vec<f64>,
        residual: IntervalBox,
        spurious: bool,
    },
    /// Node budget exhausted before a decision.
    Unknown { visited: usize },
}

impl DeltaVerdict {
    pub fn is_unsat(&self) -> bool {
        matches!(self, DeltaVerdict::Unsat)
    }

    pub fn is_delta_sat(&self) -> bool {
        matches!(self, DeltaVerdict::DeltaSat { .. })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IcpOptions {
    /// Maximum number of boxes visited per query.
    pub node_budget: usize,
    /// Maximum contraction round-robin sweeps per box.
    pub max_contraction_rounds: usize,
    /// Keep searching for a witness of the unweakened system instead of
    /// returning at the first delta-weakened midpoint; the weakened-only
    /// point is stashed and returned (flagged spurious) when nothing
    /// better is found. Counterexample searches want this: a witness that
    /// sits exactly on a constraint surface refutes nothing pointwise.
    pub prefer_exact_witness: bool,
    /// Normalized width below which a weakened-only box is stashed rather
    /// than split further (only with `prefer_exact_witness`).
    pub stash_cell: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            node_budget: 400_000,
            max_contraction_rounds: 8,
            prefer_exact_witness: false,
            stash_cell: 1e-3,
        }
    }
}

/// Decide a conjunction of constraint clauses over `region` at precision
/// `delta`.
pub fn icp_solve(
    clauses: &[ConstraintClause],
    region: &IntervalBox,
    delta: f64,
    opts: &IcpOptions,
) -> DeltaVerdict {
    assert!(delta > 0.0, "delta must be positive");
    let norm = region.widths();
    let mut stack = vec![region.clone()];
    let mut visited = 0usize;
    let mut undecided = false;
    let mut stashed: Option<(Vec<f64>, IntervalBox)> = None;
    let mut fscratch: Vec<f64> = Vec::new();
    let mut ctx = contract::ContractScratch::default();

    while let Some(mut b) = stack.pop() {
        visited += 1;
        if visited > opts.node_budget {
            return match stashed {
                Some((witness, residual)) => DeltaVerdict::DeltaSat {
                    witness,
                    residual,
                    spurious: true,
                },
                None => DeltaVerdict::Unknown { visited },
            };
        }

        if !contract_box(clauses, &mut b, opts, &mut ctx) {
            continue; // proved empty
        }

        let mid = b.midpoint();
        if clauses.iter().all(|c| c.weakened_at(&mid, delta, &mut fscratch)) {
            let exact = clauses.iter().all(|c| c.exact_at(&mid, &mut fscratch));
            if exact || !opts.prefer_exact_witness {
                return DeltaVerdict::DeltaSat {
                    witness: mid,
                    residual: b,
                    spurious: !exact,
                };
            }
            // Weakened-only point: remember the first one and keep looking
            // for an exact witness, splitting only while the box is wide.
            if stashed.is_none() {
                stashed = Some((mid.clone(), b.clone()));
            }
            let d = b.widest_normalized(&norm);
            let w = if norm[d] > 0.0 { b.get(d).width() / norm[d] } else { 0.0 };
            if w < opts.stash_cell {
                continue;
            }
        }

        let d = b.widest_normalized(&norm);
        let iv = *b.get(d);
        let m = iv.midpoint();
        if !(m > iv.lo() && m < iv.hi()) {
            // Bisection cannot make progress at float resolution.
            undecided = true;
            continue;
        }
        let (left, right) = b.split(d);
        stack.push(right);
        stack.push(left);
    }

    if let Some((witness, residual)) = stashed {
        return DeltaVerdict::DeltaSat {
            witness,
            residual,
            spurious: true,
        };
    }
    if undecided {
        DeltaVerdict::Unknown { visited }
    } else {
        DeltaVerdict::Unsat
    }
}

/// Contract `b` under all clauses until fixpoint or diminishing returns.
/// Returns false when the box is proved empty.
fn contract_box(
    clauses: &[ConstraintClause],
    b: &mut IntervalBox,
    opts: &IcpOptions,
    ctx: &mut contract::ContractScratch,
) -> bool {
    for _ in 0..opts.max_contraction_rounds {
        let before: f64 = b.widths().iter().sum();
        for clause in clauses {
            if !contract_clause(clause, b, ctx) {
                return false;
            }
        }
        let after: f64 = b.widths().iter().sum();
        if after >= before * 0.99 {
            break;
        }
    }
    true
}

/// Constructive disjunction: the clause-feasible part of the box is inside
/// the hull of the per-literal contractions.
fn contract_clause(
    clause: &ConstraintClause,
    b: &mut IntervalBox,
    ctx: &mut contract::ContractScratch,
) -> bool {
    if clause.literals.len() == 1 {
        return contract::hc4_revise(&clause.literals[0].compiled, clause.literals[0].rel, b, ctx);
    }
    let mut hull: Option<IntervalBox> = None;
    for lit in &clause.literals {
        let mut cand = b.clone();
        if contract::hc4_revise(&lit.compiled, lit.rel, &mut cand, ctx) {
            hull = Some(match hull {
                None => cand,
                Some(h) => hull_boxes(&h, &cand),
            });
        }
    }
    match hull {
        None => false,
        Some(h) => {
            *b = h;
            true
        }
    }
}

fn hull_boxes(a: &IntervalBox, b: &IntervalBox) -> IntervalBox {
    IntervalBox::new(
        a.intervals()
            .iter()
            .zip(b.intervals())
            .map(|(x, y)| x.hull(y))
            .collect(),
    )
}

/// Clause-at-a-time DNF solving: test each (clause set, region) in declared
/// order, short-circuiting on the first delta-sat answer.
pub fn icp_solve_dnf(
    problems: &[(Vec<ConstraintClause>, IntervalBox)],
    delta: f64,
    opts: &IcpOptions,
) -> (DeltaVerdict, usize) {
    let mut any_unknown = false;
    let mut last_visited = 0;
    for (idx, (clauses, region)) in problems.iter().enumerate() {
        match icp_solve(clauses, region, delta, opts) {
            DeltaVerdict::Unsat => {}
            v @ DeltaVerdict::DeltaSat { .. } => return (v, idx),
            DeltaVerdict::Unknown { visited } => {
                any_unknown = true;
                last_visited = visited;
            }
        }
    }
    if any_unknown {
        (DeltaVerdict::Unknown { visited: last_visited }, usize::MAX)
    } else {
        (DeltaVerdict::Unsat, usize::MAX)
    }
}

/// Text dump of a query for reproducing solver calls in isolation.
pub fn dump_query(clauses: &[ConstraintClause], region: &IntervalBox, ctx: &VarContext) -> String {
    let mut out = String::new();
    writeln!(out, "(region").unwrap();
    for (i, iv) in region.intervals().iter().enumerate() {
        writeln!(out, "  ({} [{} {}])", ctx.name(i), iv.lo(), iv.hi()).unwrap();
    }
    writeln!(out, ")").unwrap();
    writeln!(out, "(and").unwrap();
    for clause in clauses {
        if clause.literals.len() == 1 {
            writeln!(out, "  {}", dump_atom(&clause.literals[0], ctx)).unwrap();
        } else {
            let inner: Vec<String> = clause.literals.iter().map(|l| dump_atom(l, ctx)).collect();
            writeln!(out, "  (or {})", inner.join(" ")).unwrap();
        }
    }
    writeln!(out, ")").unwrap();
    out
}

fn dump_atom(c: &NonlinearConstraint, ctx: &VarContext) -> String {
    let rel = match c.rel {
        Relation::Le => "<=",
        Relation::Lt => "<",
        Relation::Eq => "=",
    };
    format!("({rel} {} 0)", c.expr.display(ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::parse_expr;

    fn ctx1() -> VarContext {
        VarContext::new(vec!["x"])
    }

    fn c(s: &str, rel: Relation, ctx: &VarContext) -> ConstraintClause {
        ConstraintClause::single(NonlinearConstraint::new(parse_expr(s, ctx).unwrap(), rel))
    }

    #[test]
    fn positive_definite_is_unsat() {
        let ctx = ctx1();
        let clauses = vec![c("x^2 + 1", Relation::Le, &ctx)];
        let region = IntervalBox::from_bounds(&[(-10.0, 10.0)]);
        let v = icp_solve(&clauses, &region, 0.01, &IcpOptions::default());
        assert!(v.is_unsat());
    }

    #[test]
    fn band_intersection_is_delta_sat() {
        let ctx = ctx1();
        let clauses = vec![
            c("x^2 - 1", Relation::Le, &ctx),
            c("-x", Relation::Le, &ctx),
        ];
        let region = IntervalBox::from_bounds(&[(-2.0, 2.0)]);
        match icp_solve(&clauses, &region, 0.001, &IcpOptions::default()) {
            DeltaVerdict::DeltaSat { witness, .. } => {
                assert!(witness[0] >= -0.001 && witness[0] <= 1.001, "w={witness:?}");
            }
            v => panic!("expected delta-sat, got {v:?}"),
        }
    }

    #[test]
    fn dnf_short_circuits_to_second_clause() {
        let ctx = ctx1();
        let region = IntervalBox::from_bounds(&[(0.0, 1.0)]);
        let p1 = (vec![c("x + 1", Relation::Le, &ctx)], region.clone());
        let p2 = (vec![c("x - 0.5", Relation::Le, &ctx)], region.clone());
        let (v, idx) = icp_solve_dnf(&[p1, p2], 1e-3, &IcpOptions::default());
        assert!(v.is_delta_sat());
        assert_eq!(idx, 1);
    }

    #[test]
    fn dnf_all_infeasible_is_unsat() {
        let ctx = ctx1();
        let region = IntervalBox::from_bounds(&[(0.0, 1.0)]);
        let p1 = (vec![c("x + 1", Relation::Le, &ctx)], region.clone());
        let p2 = (vec![c("x - 2", Relation::Eq, &ctx)], region.clone());
        let (v, _) = icp_solve_dnf(&[p1, p2], 1e-3, &IcpOptions::default());
        assert!(v.is_unsat());
    }

    #[test]
    fn disjunctive_clause_needs_only_one_branch() {
        let ctx = ctx1();
        let lits = vec![
            NonlinearConstraint::new(parse_expr("x - 0.25", &ctx).unwrap(), Relation::Le),
            NonlinearConstraint::new(parse_expr("1 - x", &ctx).unwrap(), Relation::Le),
        ];
        let clauses = vec![ConstraintClause::any(lits), c("0.5 - x", Relation::Le, &ctx)];
        let region = IntervalBox::from_bounds(&[(0.0, 2.0)]);
        // First literal conflicts with x >= 0.5, second (x >= 1) is fine.
        match icp_solve(&clauses, &region, 1e-3, &IcpOptions::default()) {
            DeltaVerdict::DeltaSat { witness, .. } => assert!(witness[0] >= 1.0 - 1e-3),
            v => panic!("expected delta-sat, got {v:?}"),
        }
    }

    #[test]
    fn monotone_in_delta() {
        let ctx = ctx1();
        // Feasible only within a thin band around x = 1.
        let clauses = vec![c("(x-1)^2 - 1e-6", Relation::Le, &ctx)];
        let region = IntervalBox::from_bounds(&[(-3.0, 3.0)]);
        let mut sat_deltas = Vec::new();
        for delta in [1e-7, 1e-5, 1e-3, 1e-1] {
            let v = icp_solve(&clauses, &region, delta, &IcpOptions::default());
            sat_deltas.push(v.is_delta_sat());
        }
        // Once delta-sat at some delta, delta-sat at every larger delta.
        for w in sat_deltas.windows(2) {
            assert!(!w[0] || w[1], "monotonicity violated: {sat_deltas:?}");
        }
        assert!(sat_deltas.last().copied().unwrap());
    }

    #[test]
    fn unsat_not_contradicted_by_sampling() {
        use rand::{Rng, SeedableRng};
        let ctx = VarContext::new(vec!["x", "y"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let polys = [
            "x^2 + y^2 + 0.1",
            "x^4 + y^2 - 2*x*y + 1",
            "(x-1)^2 + (y+2)^2 - 0.5",
            "exp(x) - 10*y^2 - 50",
            "sin(x) + y^2 + 1.5",
        ];
        for p in polys {
            let clause = c(p, Relation::Le, &ctx);
            let region = IntervalBox::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]);
            let v = icp_solve(&[clause.clone()], &region, 1e-4, &IcpOptions::default());
            if v.is_unsat() {
                let e = parse_expr(p, &ctx).unwrap();
                for _ in 0..20_000 {
                    let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                    let val = e.eval_point(&x).unwrap();
                    assert!(val > 0.0, "UNSAT contradicted at {x:?}: {val}");
                }
            }
        }
    }

    #[test]
    fn dump_is_readable() {
        let ctx = ctx1();
        let clauses = vec![c("x^2 - 1", Relation::Le, &ctx)];
        let region = IntervalBox::from_bounds(&[(-2.0, 2.0)]);
        let dump = dump_query(&clauses, &region, &ctx);
        assert!(dump.contains("(<= x^2 - 1 0)"));
        assert!(dump.contains("(region"));
    }
}
