//! Encoding of certificate conditions as implication problems with atoms
//! linear in the unknown coefficients.
//!
//! Every condition becomes `x in R  =>  OR_k AND_l  atom_{k,l}(c, x) > 0`
//! with regions R given by a box plus side constraints over the state
//! variables only. The same encoded problem serves both CEGIS directions:
//! instantiating atoms at a witness state produces linear-arithmetic
//! clauses, instantiating at a candidate coefficient vector produces the
//! nonlinear constraints of the negated condition.

use crate::icp::{ConstraintClause, NonlinearConstraint, Relation};
use crate::lra::{Clause, LinearAtom};
use crate::model::{InitialSet, RwsSpec, SwitchedSystem, SynthesisParams, Template};
use crate::symexpr::{lie_derivative, Expr, IntervalBox};
use std::sync::Arc;

/// How a barrier participates in the synthesis problem.
#[derive(Clone, Debug)]
pub enum BarrierSpec {
    /// The certificate function itself doubles as a barrier (shares its
    /// coefficients).
    AliasV,
    /// A fully determined barrier expression, e.g. built from safe-set
    /// boundaries.
    Fixed(Arc<Expr>),
    /// An independently templated barrier with its own coefficients.
    Templated(Template),
}

/// Which certificate condition an atom or implication came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionGroup {
    /// Mode existence over safe-minus-goal (decrease conditions).
    ModeExistence,
    /// Some barrier positive on each boundary facet band.
    BoundarySign,
    /// All barriers negative on the initial set.
    InitialSign,
}

/// `sum_i c_i * coeff_exprs[i](x) + constant_expr(x) > 0`. Linearity in the
/// coefficients holds by construction; the coefficient expressions only
/// mention state variables.
#[derive(Clone, Debug)]
pub struct ParametricAtom {
    pub coeff_exprs: Vec<Arc<Expr>>,
    pub constant_expr: Arc<Expr>,
}

pub(crate) enum InstantiatedAtom {
    Linear(LinearAtom),
    ConstTrue,
    ConstFalse,
}

impl ParametricAtom {
    fn constant(expr: Arc<Expr>, n_coeffs: usize) -> Self {
        ParametricAtom {
            coeff_exprs: vec![Expr::zero(); n_coeffs],
            constant_expr: expr,
        }
    }

    /// Fix the state to a witness point, producing a linear atom over c.
    pub(crate) fn at_state(&self, x: &[f64]) -> InstantiatedAtom {
        let mut coeffs = Vec::with_capacity(self.coeff_exprs.len());
        for h in &self.coeff_exprs {
            match h.eval_point(x) {
                Ok(v) => coeffs.push(v),
                Err(_) => return InstantiatedAtom::ConstFalse,
            }
        }
        let constant = match self.constant_expr.eval_point(x) {
            Ok(v) => v,
            Err(_) => return InstantiatedAtom::ConstFalse,
        };
        if coeffs.iter().all(|v| *v == 0.0) {
            if constant > 0.0 {
                InstantiatedAtom::ConstTrue
            } else {
                InstantiatedAtom::ConstFalse
            }
        } else {
            InstantiatedAtom::Linear(LinearAtom::strict(coeffs, constant))
        }
    }

    /// Fix the coefficients, producing a concrete expression over x.
    pub fn at_coeffs(&self, c: &[f64]) -> Arc<Expr> {
        let mut acc = self.constant_expr.clone();
        for (ci, h) in c.iter().zip(&self.coeff_exprs) {
            acc = Expr::add(acc, Expr::mul(Expr::constant(*ci), h.clone()));
        }
        acc
    }

    /// The atom as one expression over an extended context
    /// `[x_1..x_n, c_1..c_N]`; used to check linearity symbolically.
    pub fn full_expr(&self, n_state: usize) -> Arc<Expr> {
        let mut acc = self.constant_expr.clone();
        for (i, h) in self.coeff_exprs.iter().enumerate() {
            acc = Expr::add(acc, Expr::mul(Expr::var(n_state + i), h.clone()));
        }
        acc
    }
}

/// A region `R_j`: a box with conjunctive side constraints over the state.
#[derive(Clone, Debug)]
pub struct EncRegion {
    pub bounds: IntervalBox,
    pub constraints: Vec<(Arc<Expr>, Relation)>,
    pub label: String,
}

impl EncRegion {
    /// Pointwise membership, weakened by `tol` to match how delta-sat
    /// witnesses are produced.
    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        if !self.bounds.contains(x) {
            return false;
        }
        self.constraints.iter().all(|(e, rel)| match e.eval_point(x) {
            Ok(v) => match rel {
                Relation::Le => v <= tol,
                Relation::Lt => v < tol,
                Relation::Eq => v.abs() <= tol,
            },
            Err(_) => false,
        })
    }
}

/// One disjunct of an implication body: a conjunction of atoms.
#[derive(Clone, Debug)]
pub struct BodyDisjunct {
    pub atoms: Vec<ParametricAtom>,
}

#[derive(Clone, Debug)]
pub struct Implication {
    pub region: EncRegion,
    pub body: Vec<BodyDisjunct>,
    pub group: ConditionGroup,
}

/// Coefficient layout: the certificate template first, then each templated
/// barrier's block.
#[derive(Clone, Debug)]
pub struct ProblemLayout {
    pub v_template: Template,
    pub barriers: Vec<BarrierSpec>,
    /// Coefficient slice per barrier (aliases share the template's slice;
    /// fixed barriers have none).
    pub barrier_ranges: Vec<Option<(usize, usize)>>,
    pub n_coeffs: usize,
}

#[derive(Clone, Debug)]
pub struct EncodedProblem {
    pub implications: Vec<Implication>,
    pub layout: ProblemLayout,
    pub coeff_box: IntervalBox,
    pub jq: Vec<Vec<usize>>,
    /// Barrier indices subject to decrease constraints, per mode.
    pub bq: Vec<Vec<usize>>,
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("template basis expression {0} references non-state variables")]
    NonStateBasis(usize),
    #[error("goal set must have at least one predicate")]
    EmptyGoal,
    #[error("initialized problem requires at least one barrier")]
    NoBarriers,
    #[error("spec has an initial set; use the initialized encoder")]
    UnexpectedInitialSet,
    #[error("spec has no initial set; use the uninitialized encoder")]
    MissingInitialSet,
    #[error("too many templated barriers per mode ({0}); the branch expansion would blow up")]
    BarrierBlowup(usize),
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

fn check_state_only(exprs: &[Arc<Expr>], n_state: usize) -> Result<(), EncodeError> {
    for (i, e) in exprs.iter().enumerate() {
        if let Some(m) = e.max_var() {
            if m >= n_state {
                return Err(EncodeError::NonStateBasis(i));
            }
        }
    }
    Ok(())
}

/// The decrease atom for mode q: `-Vdot_q(c, x) - epsilon > 0`.
fn lyapunov_atom(
    sys: &SwitchedSystem,
    v_template: &Template,
    v_range: (usize, usize),
    n_coeffs: usize,
    mode: usize,
    epsilon: f64,
) -> ParametricAtom {
    let mut coeff_exprs = vec![Expr::zero(); n_coeffs];
    for (k, g) in v_template.basis.iter().enumerate() {
        coeff_exprs[v_range.0 + k] = Expr::neg(lie_derivative(g, &sys.modes[mode].field));
    }
    ParametricAtom {
        coeff_exprs,
        constant_expr: Expr::constant(-epsilon),
    }
}

/// The exponential safety atom for predicate j under mode q:
/// `-(pdot_{j,q} + lambda p_j) - epsilon > 0` (coefficient-free).
fn safety_atom(
    sys: &SwitchedSystem,
    pred: &Arc<Expr>,
    mode: usize,
    lambda: f64,
    epsilon: f64,
    n_coeffs: usize,
) -> ParametricAtom {
    let pdot = lie_derivative(pred, &sys.modes[mode].field);
    let expr = Expr::sub(
        Expr::neg(Expr::add(
            pdot,
            Expr::mul(Expr::constant(lambda), pred.clone()),
        )),
        Expr::constant(epsilon),
    );
    ParametricAtom::constant(expr, n_coeffs)
}

/// Value of barrier `b_idx` as a parametric atom body (not yet compared to
/// anything): the pair of coefficient expressions and constant expression.
fn barrier_value(
    layout: &ProblemLayout,
    b_idx: usize,
    n_coeffs: usize,
) -> (Vec<Arc<Expr>>, Arc<Expr>) {
    let mut coeff_exprs = vec![Expr::zero(); n_coeffs];
    match &layout.barriers[b_idx] {
        BarrierSpec::Fixed(e) => (coeff_exprs, e.clone()),
        BarrierSpec::AliasV => {
            let (lo, _) = layout.barrier_ranges[b_idx].expect("alias range");
            for (k, g) in layout.v_template.basis.iter().enumerate() {
                coeff_exprs[lo + k] = g.clone();
            }
            (coeff_exprs, Expr::zero())
        }
        BarrierSpec::Templated(t) => {
            let (lo, _) = layout.barrier_ranges[b_idx].expect("template range");
            for (k, g) in t.basis.iter().enumerate() {
                coeff_exprs[lo + k] = g.clone();
            }
            (coeff_exprs, Expr::zero())
        }
    }
}

/// `sign * B(c, x) > 0`.
fn barrier_sign_atom(layout: &ProblemLayout, b_idx: usize, positive: bool, n_coeffs: usize) -> ParametricAtom {
    let (coeffs, constant) = barrier_value(layout, b_idx, n_coeffs);
    if positive {
        ParametricAtom { coeff_exprs: coeffs, constant_expr: constant }
    } else {
        ParametricAtom {
            coeff_exprs: coeffs.into_iter().map(Expr::neg).collect(),
            constant_expr: Expr::neg(constant),
        }
    }
}

/// One branch of the barrier decrease disjunction under mode q:
/// `-(Bdot_q + branch_sign * lambda * B) - epsilon > 0`.
fn barrier_branch_atom(
    sys: &SwitchedSystem,
    layout: &ProblemLayout,
    b_idx: usize,
    mode: usize,
    lambda: f64,
    epsilon: f64,
    branch_sign: f64,
    n_coeffs: usize,
) -> ParametricAtom {
    let (coeffs, constant) = barrier_value(layout, b_idx, n_coeffs);
    let field = &sys.modes[mode].field;
    let coeff_exprs = coeffs
        .iter()
        .map(|h| {
            if h.is_zero() {
                Expr::zero()
            } else {
                Expr::neg(Expr::add(
                    lie_derivative(h, field),
                    Expr::mul(Expr::constant(branch_sign * lambda), h.clone()),
                ))
            }
        })
        .collect();
    let const_part = Expr::sub(
        Expr::neg(Expr::add(
            lie_derivative(&constant, field),
            Expr::mul(Expr::constant(branch_sign * lambda), constant),
        )),
        Expr::constant(epsilon),
    );
    ParametricAtom {
        coeff_exprs,
        constant_expr: const_part,
    }
}

/// Regions covering safe-minus-goal: one per goal predicate, with the goal
/// complement split into `g_i(x) > 0` side constraints.
pub(crate) fn safe_minus_goal_regions(spec: &RwsSpec) -> Result<Vec<EncRegion>, EncodeError> {
    if spec.goal.predicates.is_empty() {
        return Err(EncodeError::EmptyGoal);
    }
    let mut regions = Vec::new();
    for (i, g) in spec.goal.predicates.iter().enumerate() {
        let mut constraints: Vec<(Arc<Expr>, Relation)> = spec
            .safe
            .predicates
            .iter()
            .map(|p| (p.clone(), Relation::Le))
            .collect();
        constraints.push((Expr::neg(g.clone()), Relation::Lt));
        regions.push(EncRegion {
            bounds: spec.enclosure.clone(),
            constraints,
            label: format!("safe-minus-goal[{i}]"),
        });
    }
    Ok(regions)
}

fn simple_layout(v_template: Template) -> ProblemLayout {
    let n = v_template.len();
    ProblemLayout {
        v_template,
        barriers: Vec::new(),
        barrier_ranges: Vec::new(),
        n_coeffs: n,
    }
}

/// Encode the uninitialized reach-while-stay conditions: on safe-minus-goal
/// some mode must decrease the certificate and every increase-capable safe
/// predicate's exponential condition.
pub fn encode_rws(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    template: &Template,
    params: &SynthesisParams,
    jq: &[Vec<usize>],
) -> Result<EncodedProblem, EncodeError> {
    params.validate().map_err(EncodeError::BadParams)?;
    if spec.is_initialized() {
        return Err(EncodeError::UnexpectedInitialSet);
    }
    let n_state = sys.dim();
    check_state_only(&template.basis, n_state)?;
    check_state_only(&spec.safe.predicates, n_state)?;
    check_state_only(&spec.goal.predicates, n_state)?;

    let layout = simple_layout(template.clone());
    let n_coeffs = layout.n_coeffs;
    let v_range = (0, n_coeffs);

    let mut implications = Vec::new();
    for region in safe_minus_goal_regions(spec)? {
        let mut body = Vec::with_capacity(sys.modes.len());
        for q in 0..sys.modes.len() {
            let mut atoms = vec![lyapunov_atom(sys, template, v_range, n_coeffs, q, params.epsilon)];
            for &j in &jq[q] {
                atoms.push(safety_atom(
                    sys,
                    &spec.safe.predicates[j],
                    q,
                    params.lambda,
                    params.epsilon,
                    n_coeffs,
                ));
            }
            body.push(BodyDisjunct { atoms });
        }
        implications.push(Implication {
            region,
            body,
            group: ConditionGroup::ModeExistence,
        });
    }

    Ok(EncodedProblem {
        implications,
        coeff_box: template.coeff_box.clone(),
        layout,
        jq: jq.to_vec(),
        bq: vec![Vec::new(); sys.modes.len()],
    })
}

fn concat_boxes(parts: &[&IntervalBox]) -> IntervalBox {
    let mut dims = Vec::new();
    for p in parts {
        dims.extend_from_slice(p.intervals());
    }
    IntervalBox::new(dims)
}

/// Encode the initialized conditions: boundary facets covered by positive
/// barriers, all barriers negative on the initial set, and mode existence
/// with per-barrier two-branch decrease disjunctions expanded over sign
/// choices.
pub fn encode_irws(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    v_template: &Template,
    barriers: &[BarrierSpec],
    params: &SynthesisParams,
    jq: &[Vec<usize>],
    bq: &[Vec<usize>],
) -> Result<EncodedProblem, EncodeError> {
    params.validate().map_err(EncodeError::BadParams)?;
    let init = match &spec.init {
        InitialSet::Set(s) => s,
        InitialSet::Uninitialized => return Err(EncodeError::MissingInitialSet),
    };
    if barriers.is_empty() {
        return Err(EncodeError::NoBarriers);
    }
    let n_state = sys.dim();
    check_state_only(&v_template.basis, n_state)?;
    for b in barriers {
        match b {
            BarrierSpec::Fixed(e) => check_state_only(std::slice::from_ref(e), n_state)?,
            BarrierSpec::Templated(t) => check_state_only(&t.basis, n_state)?,
            BarrierSpec::AliasV => {}
        }
    }

    // Coefficient layout: V's block, then each templated barrier's block.
    let mut barrier_ranges = Vec::with_capacity(barriers.len());
    let mut n_coeffs = v_template.len();
    let mut box_parts: Vec<&IntervalBox> = vec![&v_template.coeff_box];
    for b in barriers {
        match b {
            BarrierSpec::AliasV => barrier_ranges.push(Some((0, v_template.len()))),
            BarrierSpec::Fixed(_) => barrier_ranges.push(None),
            BarrierSpec::Templated(t) => {
                barrier_ranges.push(Some((n_coeffs, n_coeffs + t.len())));
                n_coeffs += t.len();
                box_parts.push(&t.coeff_box);
            }
        }
    }
    let coeff_box = concat_boxes(&box_parts);
    let layout = ProblemLayout {
        v_template: v_template.clone(),
        barriers: barriers.to_vec(),
        barrier_ranges,
        n_coeffs,
    };
    let v_range = (0, v_template.len());

    let mut implications = Vec::new();

    // Boundary sign: for each safe predicate facet band, some barrier > 0.
    let band = params.delta_sat_precision;
    for (j, p) in spec.safe.predicates.iter().enumerate() {
        let mut constraints: Vec<(Arc<Expr>, Relation)> = spec
            .safe
            .predicates
            .iter()
            .map(|q| (q.clone(), Relation::Le))
            .collect();
        // p_j(x) >= -band  <=>  -(p_j + band) <= 0.
        constraints.push((
            Expr::neg(Expr::add(p.clone(), Expr::constant(band))),
            Relation::Le,
        ));
        let body = (0..barriers.len())
            .map(|b| BodyDisjunct {
                atoms: vec![barrier_sign_atom(&layout, b, true, n_coeffs)],
            })
            .collect();
        implications.push(Implication {
            region: EncRegion {
                bounds: spec.enclosure.clone(),
                constraints,
                label: format!("boundary-facet[{j}]"),
            },
            body,
            group: ConditionGroup::BoundarySign,
        });
    }

    // Initial sign: all barriers negative on the initial set.
    {
        let constraints: Vec<(Arc<Expr>, Relation)> = init
            .predicates
            .iter()
            .map(|q| (q.clone(), Relation::Le))
            .collect();
        let atoms = (0..barriers.len())
            .map(|b| barrier_sign_atom(&layout, b, false, n_coeffs))
            .collect();
        implications.push(Implication {
            region: EncRegion {
                bounds: spec.enclosure.clone(),
                constraints,
                label: "initial".to_string(),
            },
            body: vec![BodyDisjunct { atoms }],
            group: ConditionGroup::InitialSign,
        });
    }

    // Mode existence with barrier decrease branches. Each barrier's
    // two-branch disjunction is expanded across sign choices, so the body
    // stays in or-of-ands form.
    let max_bq = bq.iter().map(|b| b.len()).max().unwrap_or(0);
    if max_bq > 12 {
        return Err(EncodeError::BarrierBlowup(max_bq));
    }
    for region in safe_minus_goal_regions(spec)? {
        let mut body = Vec::new();
        for q in 0..sys.modes.len() {
            let lyap = lyapunov_atom(sys, v_template, v_range, n_coeffs, q, params.epsilon);
            let nb = bq[q].len();
            for choice in 0..(1usize << nb) {
                let mut atoms = vec![lyap.clone()];
                for (pos, &b) in bq[q].iter().enumerate() {
                    let sign = if choice & (1 << pos) == 0 { 1.0 } else { -1.0 };
                    atoms.push(barrier_branch_atom(
                        sys,
                        &layout,
                        b,
                        q,
                        params.barrier_lambda,
                        params.epsilon,
                        sign,
                        n_coeffs,
                    ));
                }
                body.push(BodyDisjunct { atoms });
            }
        }
        implications.push(Implication {
            region,
            body,
            group: ConditionGroup::ModeExistence,
        });
    }

    Ok(EncodedProblem {
        implications,
        coeff_box,
        layout,
        jq: jq.to_vec(),
        bq: bq.to_vec(),
    })
}

impl EncodedProblem {
    pub fn n_coeffs(&self) -> usize {
        self.layout.n_coeffs
    }

    /// Linear-arithmetic clauses constraining c so that the conditions hold
    /// at witness state `x`. Constant-true atoms are dropped, disjuncts
    /// with constant-false atoms are removed, and duplicate disjuncts are
    /// collapsed. An implication whose region does not contain `x` (within
    /// `tol`) contributes nothing.
    pub fn clauses_at_state(&self, x: &[f64], tol: f64) -> Vec<Clause> {
        self.clauses_at_state_boosted(x, tol, 0.0)
    }

    /// As `clauses_at_state`, but requiring every atom to hold with margin
    /// at least `boost`. Used when a witness recurs: the plain clause is
    /// satisfiable arbitrarily close to the constraint surface, and the
    /// boosted one forces the candidate search to clear it.
    pub fn clauses_at_state_boosted(&self, x: &[f64], tol: f64, boost: f64) -> Vec<Clause> {
        let mut clauses = Vec::new();
        for imp in &self.implications {
            if !imp.region.contains_point(x, tol) {
                continue;
            }
            let mut disjuncts: Vec<Vec<LinearAtom>> = Vec::new();
            let mut vacuous = false;
            'disj: for d in &imp.body {
                let mut atoms = Vec::new();
                for a in &d.atoms {
                    match a.at_state(x) {
                        InstantiatedAtom::ConstTrue => {}
                        InstantiatedAtom::ConstFalse => continue 'disj,
                        InstantiatedAtom::Linear(mut l) => {
                            l.constant -= boost;
                            atoms.push(l);
                        }
                    }
                }
                if atoms.is_empty() {
                    // Entire disjunct holds regardless of c: clause vacuous.
                    vacuous = true;
                    break;
                }
                if !disjuncts.iter().any(|d2| *d2 == atoms) {
                    disjuncts.push(atoms);
                }
            }
            if vacuous {
                continue;
            }
            if disjuncts.is_empty() {
                // Every disjunct was constant-false: no coefficient choice
                // satisfies the condition at this witness.
                clauses.push(Clause::new(vec![vec![LinearAtom::strict(
                    vec![0.0; self.n_coeffs()],
                    -1.0,
                )]]));
                continue;
            }
            clauses.push(Clause::new(disjuncts));
        }
        clauses
    }

    /// The negation of the conditions at fixed coefficients: one problem
    /// per implication region, each a conjunction of region constraints and
    /// per-disjunct "some atom fails" clauses.
    pub fn negation_at_coeffs(&self, c: &[f64]) -> Vec<(Vec<ConstraintClause>, IntervalBox)> {
        let mut problems = Vec::with_capacity(self.implications.len());
        for imp in &self.implications {
            let mut clauses: Vec<ConstraintClause> = imp
                .region
                .constraints
                .iter()
                .map(|(e, rel)| {
                    ConstraintClause::single(NonlinearConstraint::new(e.clone(), *rel))
                })
                .collect();
            for d in &imp.body {
                let lits: Vec<NonlinearConstraint> = d
                    .atoms
                    .iter()
                    .map(|a| NonlinearConstraint::le(a.at_coeffs(c)))
                    .collect();
                clauses.push(ConstraintClause::any(lits));
            }
            problems.push((clauses, imp.region.bounds.clone()));
        }
        problems
    }

    /// Pointwise truth of the (unweakened) conditions at coefficients `c`
    /// and state `x`.
    pub fn holds_at(&self, c: &[f64], x: &[f64]) -> bool {
        for imp in &self.implications {
            if !imp.region.contains_point(x, 0.0) {
                continue;
            }
            let sat = imp.body.iter().any(|d| {
                d.atoms.iter().all(|a| match a.at_coeffs(c).eval_point(x) {
                    Ok(v) => v > 0.0,
                    Err(_) => false,
                })
            });
            if !sat {
                return false;
            }
        }
        true
    }

    /// Concrete barrier expressions at a coefficient vector.
    pub fn barrier_exprs_at(&self, c: &[f64]) -> Vec<Arc<Expr>> {
        let mut out = Vec::with_capacity(self.layout.barriers.len());
        for (b, range) in self
            .layout
            .barriers
            .iter()
            .zip(&self.layout.barrier_ranges)
        {
            let expr = match b {
                BarrierSpec::Fixed(e) => e.clone(),
                BarrierSpec::AliasV => {
                    let (lo, hi) = range.expect("alias range");
                    self.layout.v_template.instantiate(&c[lo..hi])
                }
                BarrierSpec::Templated(t) => {
                    let (lo, hi) = range.expect("template range");
                    t.instantiate(&c[lo..hi])
                }
            };
            out.push(expr);
        }
        out
    }
}
