//! Data model for switched systems, semialgebraic sets, reach-while-stay
//! specifications, and certificate templates.

use crate::icp::{self, ConstraintClause, DeltaVerdict, IcpOptions, NonlinearConstraint};
use crate::symexpr::{lie_derivative, Expr, IntervalBox, VarContext};
use std::sync::Arc;

/// One controllable mode: an id and a vector field with one component per
/// state variable.
#[derive(Clone, Debug)]
pub struct Mode {
    pub id: String,
    pub field: Vec<Arc<Expr>>,
}

/// A finite-mode switched system over a fixed state variable context.
#[derive(Clone, Debug)]
pub struct SwitchedSystem {
    pub vars: VarContext,
    pub modes: Vec<Mode>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("mode '{0}' has {1} field components, expected {2}")]
    FieldDimension(String, usize, usize),
    #[error("duplicate mode id '{0}'")]
    DuplicateMode(String),
    #[error("system must have at least one mode")]
    NoModes,
    #[error("predicate references variable index {0} outside the context")]
    BadVariable(usize),
    #[error("box dimension {0} does not match variable context size {1}")]
    BadBoxDimension(usize, usize),
}

impl SwitchedSystem {
    pub fn new(vars: VarContext, modes: Vec<Mode>) -> Result<Self, ModelError> {
        if modes.is_empty() {
            return Err(ModelError::NoModes);
        }
        let n = vars.len();
        for m in &modes {
            if m.field.len() != n {
                return Err(ModelError::FieldDimension(m.id.clone(), m.field.len(), n));
            }
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].iter().any(|o| o.id == m.id) {
                return Err(ModelError::DuplicateMode(m.id.clone()));
            }
        }
        Ok(SwitchedSystem { vars, modes })
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn mode_index(&self, id: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetKind {
    /// Candidate for Def.-style nondegeneracy: nonempty boundary pieces and
    /// nonempty interior, checked (not assumed) by `check_nondegeneracy`.
    BasicNondegenerate,
    General,
}

/// Conjunction of polynomial inequalities `p_i(x) <= 0`.
#[derive(Clone, Debug)]
pub struct SemialgebraicSet {
    pub predicates: Vec<Arc<Expr>>,
    pub kind: SetKind,
}

impl SemialgebraicSet {
    pub fn new(predicates: Vec<Arc<Expr>>, kind: SetKind) -> Self {
        SemialgebraicSet { predicates, kind }
    }

    /// Pointwise membership with a per-predicate tolerance.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.predicates
            .iter()
            .all(|p| matches!(p.eval_point(x), Ok(v) if v <= tol))
    }

    /// Index of the first predicate violated beyond `tol`, if any.
    pub fn violated_predicate(&self, x: &[f64], tol: f64) -> Option<usize> {
        self.predicates
            .iter()
            .position(|p| !matches!(p.eval_point(x), Ok(v) if v <= tol))
    }
}

/// Marker for the uninitialized case (initial set = safe set).
#[derive(Clone, Debug)]
pub enum InitialSet {
    Uninitialized,
    Set(SemialgebraicSet),
}

/// Reach-while-stay specification: stay in `safe` until reaching `goal`,
/// starting from `init` (or anywhere in `safe` when uninitialized). The
/// `enclosure` box is the compactness witness for all solver queries.
#[derive(Clone, Debug)]
pub struct RwsSpec {
    pub safe: SemialgebraicSet,
    pub goal: SemialgebraicSet,
    pub init: InitialSet,
    pub enclosure: IntervalBox,
}

impl RwsSpec {
    pub fn is_initialized(&self) -> bool {
        matches!(self.init, InitialSet::Set(_))
    }
}

/// Parametric certificate form: `V(c, x) = sum_i c_i * g_i(x)` with `c`
/// ranging over a compact coefficient box.
#[derive(Clone, Debug)]
pub struct Template {
    pub basis: Vec<Arc<Expr>>,
    pub coeff_box: IntervalBox,
}

impl Template {
    pub fn new(basis: Vec<Arc<Expr>>, coeff_box: IntervalBox) -> Self {
        assert!(!basis.is_empty(), "template needs at least one basis function");
        assert_eq!(basis.len(), coeff_box.dim(), "one coefficient interval per basis function");
        Template { basis, coeff_box }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Instantiate the template at concrete coefficients.
    pub fn instantiate(&self, coeffs: &[f64]) -> Arc<Expr> {
        assert_eq!(coeffs.len(), self.basis.len());
        let mut acc = Expr::zero();
        for (c, g) in coeffs.iter().zip(&self.basis) {
            acc = Expr::add(acc, Expr::mul(Expr::constant(*c), g.clone()));
        }
        acc
    }
}

/// Synthesis parameters shared across the pipeline.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SynthesisParams {
    /// Strictness margin of the decrease conditions.
    pub epsilon: f64,
    /// Switching threshold, 0 < epsilon_s < epsilon.
    pub epsilon_s: f64,
    /// Exponential-condition rate for safe-set predicates.
    pub lambda: f64,
    /// Exponential-condition rate for barrier conditions.
    pub barrier_lambda: f64,
    /// Precision of the delta-sat solver.
    pub delta_sat_precision: f64,
    /// CEGIS iteration cap.
    pub max_iterations: usize,
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0) {
            return Err("epsilon must be > 0".into());
        }
        if !(self.epsilon_s > 0.0 && self.epsilon_s < self.epsilon) {
            return Err("epsilon_s must satisfy 0 < epsilon_s < epsilon".into());
        }
        if !(self.lambda > 0.0) {
            return Err("lambda must be > 0".into());
        }
        if !(self.barrier_lambda > 0.0) {
            return Err("barrier_lambda must be > 0".into());
        }
        if !(self.delta_sat_precision > 0.0) {
            return Err("delta_sat_precision must be > 0".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        Ok(())
    }
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            epsilon: 0.1,
            epsilon_s: 0.05,
            lambda: 1.0,
            barrier_lambda: 1.0,
            delta_sat_precision: 1e-4,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConditionStatus {
    Holds,
    Violated,
    UnknownWithinDelta,
}

/// Per-condition nondegeneracy report: one entry per boundary piece
/// `H_j = {x in K | p_j(x) = 0}` plus one for the interior.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct NondegeneracyReport {
    pub boundary_pieces: Vec<ConditionStatus>,
    pub interior: ConditionStatus,
}

impl NondegeneracyReport {
    pub fn all_hold(&self) -> bool {
        self.interior == ConditionStatus::Holds
            && self
                .boundary_pieces
                .iter()
                .all(|s| *s == ConditionStatus::Holds)
    }
}

fn verdict_to_status(v: &DeltaVerdict) -> ConditionStatus {
    match v {
        DeltaVerdict::DeltaSat { .. } => ConditionStatus::Holds,
        DeltaVerdict::Unsat => ConditionStatus::Violated,
        DeltaVerdict::Unknown { .. } => ConditionStatus::UnknownWithinDelta,
    }
}

/// Decide, delta-approximately, the nondegeneracy conditions of a basic
/// semialgebraic set: every boundary piece nonempty and the interior
/// nonempty. `UnknownWithinDelta` is reported on solver budget exhaustion,
/// never silently mapped to success.
pub fn check_nondegeneracy(
    set: &SemialgebraicSet,
    enclosure: &IntervalBox,
    precision: f64,
    opts: &IcpOptions,
) -> NondegeneracyReport {
    let k = set.predicates.len();
    let mut boundary = Vec::with_capacity(k);
    for j in 0..k {
        let mut clauses: Vec<ConstraintClause> = Vec::with_capacity(k);
        for (i, p) in set.predicates.iter().enumerate() {
            if i == j {
                clauses.push(ConstraintClause::single(NonlinearConstraint::eq(p.clone())));
            } else {
                clauses.push(ConstraintClause::single(NonlinearConstraint::le(p.clone())));
            }
        }
        let v = icp::icp_solve(&clauses, enclosure, precision, opts);
        boundary.push(verdict_to_status(&v));
    }
    // Interior: all predicates strictly negative, encoded with a margin so
    // UNSAT maps to "violated at this precision".
    let interior_clauses: Vec<ConstraintClause> = set
        .predicates
        .iter()
        .map(|p| {
            ConstraintClause::single(NonlinearConstraint::le(Expr::add(
                p.clone(),
                Expr::constant(precision),
            )))
        })
        .collect();
    let v = icp::icp_solve(&interior_clauses, enclosure, precision, opts);
    NondegeneracyReport {
        boundary_pieces: boundary,
        interior: verdict_to_status(&v),
    }
}

/// For each mode q, the set of safe-set predicate indices whose Lie
/// derivative can be positive somewhere in the enclosure. Indices are
/// excluded only when the solver proves the query unsatisfiable;
/// over-approximation is the sound direction.
pub fn compute_jq(
    sys: &SwitchedSystem,
    set: &SemialgebraicSet,
    enclosure: &IntervalBox,
    precision: f64,
    opts: &IcpOptions,
) -> Vec<Vec<usize>> {
    let mut result = Vec::with_capacity(sys.modes.len());
    for mode in &sys.modes {
        let mut included = Vec::new();
        for (j, p) in set.predicates.iter().enumerate() {
            let pdot = lie_derivative(p, &mode.field);
            // exists x: pdot(x) > 0, i.e. -pdot(x) < 0.
            let q = vec![ConstraintClause::single(NonlinearConstraint::lt(
                Expr::neg(pdot),
            ))];
            match icp::icp_solve(&q, enclosure, precision, opts) {
                DeltaVerdict::Unsat => {}
                _ => included.push(j),
            }
        }
        result.push(included);
    }
    result
}

/// Check `init` is contained in the interior of `safe` by asking for a
/// point of `init` on or outside some safe predicate's `-margin` level.
/// Returns Ok(()) when the query is UNSAT; an unknown verdict is an error
/// (proceeding would void the initialized-case guarantees).
pub fn check_init_in_interior(
    spec: &RwsSpec,
    precision: f64,
    opts: &IcpOptions,
) -> Result<(), String> {
    let init = match &spec.init {
        InitialSet::Uninitialized => return Ok(()),
        InitialSet::Set(s) => s,
    };
    let margin = 1e-6;
    for (j, p) in spec.safe.predicates.iter().enumerate() {
        let mut clauses: Vec<ConstraintClause> = init
            .predicates
            .iter()
            .map(|q| ConstraintClause::single(NonlinearConstraint::le(q.clone())))
            .collect();
        // p_j(x) >= -margin  <=>  -(p_j + margin) <= 0.
        clauses.push(ConstraintClause::single(NonlinearConstraint::le(Expr::neg(
            Expr::add(p.clone(), Expr::constant(margin)),
        ))));
        match icp::icp_solve(&clauses, &spec.enclosure, precision, opts) {
            DeltaVerdict::Unsat => {}
            DeltaVerdict::DeltaSat { witness, .. } => {
                return Err(format!(
                    "initial set is not contained in the safe interior: point {witness:?} \
                     reaches within {margin} of safe predicate {j}"
                ));
            }
            DeltaVerdict::Unknown { .. } => {
                return Err(format!(
                    "could not verify initial set containment against safe predicate {j} \
                     (solver budget exhausted)"
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::parse_expr;

    fn ctx2() -> VarContext {
        VarContext::new(vec!["x1", "x2"])
    }

    fn set(preds: &[&str], ctx: &VarContext) -> SemialgebraicSet {
        SemialgebraicSet::new(
            preds.iter().map(|s| parse_expr(s, ctx).unwrap()).collect(),
            SetKind::BasicNondegenerate,
        )
    }

    #[test]
    fn rectangle_is_nondegenerate() {
        let ctx = ctx2();
        let s = set(&["(x1+2)*(x1-2)", "(x2+2)*(x2-3)"], &ctx);
        let enc = IntervalBox::from_bounds(&[(-3.0, 3.0), (-3.0, 3.0)]);
        let r = check_nondegeneracy(&s, &enc, 1e-4, &IcpOptions::default());
        assert!(r.all_hold(), "{r:?}");
    }

    #[test]
    fn degenerate_point_set_interior_violated() {
        let ctx = VarContext::new(vec!["x1"]);
        let s = SemialgebraicSet::new(
            vec![parse_expr("x1^2", &ctx).unwrap()],
            SetKind::BasicNondegenerate,
        );
        let enc = IntervalBox::from_bounds(&[(-1.0, 1.0)]);
        let r = check_nondegeneracy(&s, &enc, 1e-4, &IcpOptions::default());
        assert_eq!(r.interior, ConditionStatus::Violated);
        assert_eq!(r.boundary_pieces[0], ConditionStatus::Holds);
    }

    #[test]
    fn unit_disk_nondegenerate() {
        let ctx = ctx2();
        let s = set(&["x1^2 + x2^2 - 1"], &ctx);
        let enc = IntervalBox::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]);
        let r = check_nondegeneracy(&s, &enc, 1e-4, &IcpOptions::default());
        assert!(r.all_hold());
    }

    #[test]
    fn jq_zero_field_is_empty() {
        let ctx = ctx2();
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode {
                id: "q1".into(),
                field: vec![Expr::zero(), Expr::zero()],
            }],
        )
        .unwrap();
        let s = set(&["(x1+2)*(x1-2)", "(x2+2)*(x2-3)"], &ctx);
        let enc = IntervalBox::from_bounds(&[(-3.0, 3.0), (-3.0, 3.0)]);
        let jq = compute_jq(&sys, &s, &enc, 1e-4, &IcpOptions::default());
        assert_eq!(jq, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn jq_includes_increasing_predicate() {
        // Mode q3 of the 2-D polynomial benchmark: field offset (2, 10).
        let ctx = ctx2();
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode {
                id: "q3".into(),
                field: vec![
                    parse_expr("-x2 - 1.5*x1 - 0.5*x1^3 + 2", &ctx).unwrap(),
                    parse_expr("x1 + 10", &ctx).unwrap(),
                ],
            }],
        )
        .unwrap();
        let s = set(&["(x1+2)*(x1-2)", "(x2+2)*(x2-3)"], &ctx);
        let enc = IntervalBox::from_bounds(&[(-3.0, 3.0), (-3.0, 3.0)]);
        let jq = compute_jq(&sys, &s, &enc, 1e-4, &IcpOptions::default());
        // pdot for (x2+2)(x2-3) at (0, 2): (2*2-1)*(0+10) > 0, so index 1 in.
        assert!(jq[0].contains(&1));
    }

    #[test]
    fn jq_monotone_under_enclosure_growth() {
        let ctx = ctx2();
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode {
                id: "q".into(),
                field: vec![
                    parse_expr("x2", &ctx).unwrap(),
                    parse_expr("-x1", &ctx).unwrap(),
                ],
            }],
        )
        .unwrap();
        let s = set(&["(x1+1)*(x1-1)", "x2 - 1"], &ctx);
        let small = IntervalBox::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]);
        let large = IntervalBox::from_bounds(&[(-5.0, 5.0), (-5.0, 5.0)]);
        let jq_small = compute_jq(&sys, &s, &small, 1e-4, &IcpOptions::default());
        let jq_large = compute_jq(&sys, &s, &large, 1e-4, &IcpOptions::default());
        for (sm, lg) in jq_small.iter().zip(jq_large.iter()) {
            for j in sm {
                assert!(lg.contains(j), "enlarging enclosure removed index {j}");
            }
        }
    }

    #[test]
    fn init_interior_check_rejects_touching_sets() {
        let ctx = ctx2();
        let safe = set(&["(x1+2)*(x1-2)", "(x2+2)*(x2-3)"], &ctx);
        let goal = set(&["x1^2 + x2^2 - 0.01"], &ctx);
        let enc = IntervalBox::from_bounds(&[(-3.0, 3.0), (-3.0, 3.0)]);
        let inside = RwsSpec {
            safe: safe.clone(),
            goal: goal.clone(),
            init: InitialSet::Set(set(&["(x1+1)*(x1-1)", "(x2+1)*(x2-1)"], &ctx)),
            enclosure: enc.clone(),
        };
        assert!(check_init_in_interior(&inside, 1e-4, &IcpOptions::default()).is_ok());
        let touching = RwsSpec {
            safe,
            goal,
            init: InitialSet::Set(set(&["(x1+2)*(x1-2)", "x2*(x2-1)"], &ctx)),
            enclosure: enc,
        };
        assert!(check_init_in_interior(&touching, 1e-4, &IcpOptions::default()).is_err());
    }

    #[test]
    fn system_validation_catches_bad_dimensions() {
        let ctx = ctx2();
        let bad = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode {
                id: "q1".into(),
                field: vec![Expr::zero()],
            }],
        );
        assert!(matches!(bad, Err(ModelError::FieldDimension(..))));
        let dup = SwitchedSystem::new(
            ctx,
            vec![
                Mode { id: "q1".into(), field: vec![Expr::zero(), Expr::zero()] },
                Mode { id: "q1".into(), field: vec![Expr::zero(), Expr::zero()] },
            ],
        );
        assert!(matches!(dup, Err(ModelError::DuplicateMode(_))));
    }
}
