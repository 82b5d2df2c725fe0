//! Non-default diagnostic encoders.
//!
//! Two alternative condition encodings ship for comparison runs only; both
//! scale badly, which is exactly why the default pipeline uses the
//! exponential relaxations instead.
//!
//! * `encode_rws_facet_exact` posits the raw inward-pointing conditions on
//!   every nonempty facet of the safe set. The facet count is exponential
//!   in the number of defining inequalities.
//! * `encode_irws_barrier_equality` uses the equality-form barrier
//!   condition (decrease exactly on the zero level-set). The negated
//!   equality is trivially easy for the candidate search to satisfy, so
//!   CEGIS tends to spin until the iteration budget.

use super::encoding::{
    safe_minus_goal_regions, BarrierSpec, BodyDisjunct, ConditionGroup, EncRegion,
    EncodeError, EncodedProblem, Implication, ParametricAtom, ProblemLayout,
};
use crate::icp::{self, ConstraintClause, DeltaVerdict, IcpOptions, NonlinearConstraint, Relation};
use crate::model::{InitialSet, RwsSpec, SwitchedSystem, SynthesisParams, Template};
use crate::symexpr::{lie_derivative, Expr};
use std::sync::Arc;

/// Facet-exact encoding: for every nonempty active-constraint pattern the
/// certificate and the active predicates must strictly decrease. Gated to
/// small predicate counts; use only for diagnostics.
pub fn encode_rws_facet_exact(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    template: &Template,
    params: &SynthesisParams,
    icp_opts: &IcpOptions,
) -> Result<EncodedProblem, EncodeError> {
    params.validate().map_err(EncodeError::BadParams)?;
    if spec.is_initialized() {
        return Err(EncodeError::UnexpectedInitialSet);
    }
    let k = spec.safe.predicates.len();
    if k > 12 {
        return Err(EncodeError::BarrierBlowup(k));
    }
    let n_coeffs = template.len();
    let band = params.delta_sat_precision;

    let mut implications = Vec::new();

    // Interior: strict inequalities on every predicate, certificate
    // decrease only.
    for mut region in safe_minus_goal_regions(spec)? {
        for c in region.constraints.iter_mut() {
            if c.1 == Relation::Le {
                c.1 = Relation::Lt;
            }
        }
        region.label = format!("interior∖goal[{}]", region.label);
        let body = (0..sys.modes.len())
            .map(|q| BodyDisjunct {
                atoms: vec![lyap_atom(sys, template, q, params.epsilon, n_coeffs)],
            })
            .collect();
        implications.push(Implication {
            region,
            body,
            group: ConditionGroup::ModeExistence,
        });
    }

    // Facets: every nonempty subset of active predicates.
    for pattern in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|j| pattern & (1 << j) != 0).collect();
        let facet_region = |goal_pred: Option<&Arc<Expr>>| -> EncRegion {
            let mut constraints = Vec::new();
            for (j, p) in spec.safe.predicates.iter().enumerate() {
                if active.contains(&j) {
                    constraints.push((p.clone(), Relation::Le));
                    constraints.push((
                        Expr::neg(Expr::add(p.clone(), Expr::constant(band))),
                        Relation::Le,
                    ));
                } else {
                    constraints.push((p.clone(), Relation::Lt));
                }
            }
            if let Some(g) = goal_pred {
                constraints.push((Expr::neg(g.clone()), Relation::Lt));
            }
            EncRegion {
                bounds: spec.enclosure.clone(),
                constraints,
                label: format!("facet{active:?}"),
            }
        };

        // Skip facets the solver can prove empty.
        let probe = facet_region(None);
        let clauses: Vec<ConstraintClause> = probe
            .constraints
            .iter()
            .map(|(e, r)| ConstraintClause::single(NonlinearConstraint::new(e.clone(), *r)))
            .collect();
        if matches!(
            icp::icp_solve(&clauses, &spec.enclosure, params.delta_sat_precision, icp_opts),
            DeltaVerdict::Unsat
        ) {
            continue;
        }

        for g in &spec.goal.predicates {
            let region = facet_region(Some(g));
            let body = (0..sys.modes.len())
                .map(|q| {
                    let mut atoms = vec![lyap_atom(sys, template, q, params.epsilon, n_coeffs)];
                    for &j in &active {
                        let pdot =
                            lie_derivative(&spec.safe.predicates[j], &sys.modes[q].field);
                        atoms.push(ParametricAtom {
                            coeff_exprs: vec![Expr::zero(); n_coeffs],
                            constant_expr: Expr::sub(
                                Expr::neg(pdot),
                                Expr::constant(params.epsilon),
                            ),
                        });
                    }
                    BodyDisjunct { atoms }
                })
                .collect();
            implications.push(Implication {
                region,
                body,
                group: ConditionGroup::ModeExistence,
            });
        }
    }

    Ok(EncodedProblem {
        implications,
        coeff_box: template.coeff_box.clone(),
        layout: ProblemLayout {
            v_template: template.clone(),
            barriers: Vec::new(),
            barrier_ranges: Vec::new(),
            n_coeffs,
        },
        jq: vec![(0..k).collect(); sys.modes.len()],
        bq: vec![Vec::new(); sys.modes.len()],
    })
}

fn lyap_atom(
    sys: &SwitchedSystem,
    template: &Template,
    mode: usize,
    epsilon: f64,
    n_coeffs: usize,
) -> ParametricAtom {
    let mut coeff_exprs = vec![Expr::zero(); n_coeffs];
    for (i, g) in template.basis.iter().enumerate() {
        coeff_exprs[i] = Expr::neg(lie_derivative(g, &sys.modes[mode].field));
    }
    ParametricAtom {
        coeff_exprs,
        constant_expr: Expr::constant(-epsilon),
    }
}

/// Equality-form barrier encoding for a single templated barrier: decrease
/// is only required where the barrier vanishes, expressed as the disjunct
/// `B > 0 or B < 0 or some mode decreases B`. The `B != 0` escape hatches
/// make candidate finding trivial, which is the failure mode this encoder
/// exists to demonstrate.
pub fn encode_irws_barrier_equality(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    v_template: &Template,
    barrier: &Template,
    params: &SynthesisParams,
) -> Result<EncodedProblem, EncodeError> {
    params.validate().map_err(EncodeError::BadParams)?;
    let init = match &spec.init {
        InitialSet::Set(s) => s,
        InitialSet::Uninitialized => return Err(EncodeError::MissingInitialSet),
    };
    let nv = v_template.len();
    let nb = barrier.len();
    let n_coeffs = nv + nb;
    let band = params.delta_sat_precision;

    let mut coeff_dims = v_template.coeff_box.intervals().to_vec();
    coeff_dims.extend_from_slice(barrier.coeff_box.intervals());
    let coeff_box = crate::symexpr::IntervalBox::new(coeff_dims);

    let b_atom = |positive: bool| -> ParametricAtom {
        let mut coeff_exprs = vec![Expr::zero(); n_coeffs];
        for (i, g) in barrier.basis.iter().enumerate() {
            coeff_exprs[nv + i] = if positive { g.clone() } else { Expr::neg(g.clone()) };
        }
        ParametricAtom { coeff_exprs, constant_expr: Expr::zero() }
    };

    let mut implications = Vec::new();

    // Boundary: B > 0 on each facet band.
    for (j, p) in spec.safe.predicates.iter().enumerate() {
        let mut constraints: Vec<(Arc<Expr>, Relation)> = spec
            .safe
            .predicates
            .iter()
            .map(|q| (q.clone(), Relation::Le))
            .collect();
        constraints.push((
            Expr::neg(Expr::add(p.clone(), Expr::constant(band))),
            Relation::Le,
        ));
        implications.push(Implication {
            region: EncRegion {
                bounds: spec.enclosure.clone(),
                constraints,
                label: format!("boundary-facet[{j}]"),
            },
            body: vec![BodyDisjunct { atoms: vec![b_atom(true)] }],
            group: ConditionGroup::BoundarySign,
        });
    }

    // Initial: B < 0.
    implications.push(Implication {
        region: EncRegion {
            bounds: spec.enclosure.clone(),
            constraints: init
                .predicates
                .iter()
                .map(|q| (q.clone(), Relation::Le))
                .collect(),
            label: "initial".into(),
        },
        body: vec![BodyDisjunct { atoms: vec![b_atom(false)] }],
        group: ConditionGroup::InitialSign,
    });

    // Equality-form decrease: on the safe set, B != 0 or some mode makes
    // Bdot < -epsilon; plus the certificate decrease outside the goal.
    {
        let constraints: Vec<(Arc<Expr>, Relation)> = spec
            .safe
            .predicates
            .iter()
            .map(|q| (q.clone(), Relation::Le))
            .collect();
        let mut body = vec![
            BodyDisjunct { atoms: vec![b_atom(true)] },
            BodyDisjunct { atoms: vec![b_atom(false)] },
        ];
        for q in 0..sys.modes.len() {
            let mut coeff_exprs = vec![Expr::zero(); n_coeffs];
            for (i, g) in barrier.basis.iter().enumerate() {
                coeff_exprs[nv + i] = Expr::neg(lie_derivative(g, &sys.modes[q].field));
            }
            body.push(BodyDisjunct {
                atoms: vec![ParametricAtom {
                    coeff_exprs,
                    constant_expr: Expr::constant(-params.epsilon),
                }],
            });
        }
        implications.push(Implication {
            region: EncRegion {
                bounds: spec.enclosure.clone(),
                constraints,
                label: "barrier-zero-set".into(),
            },
            body,
            group: ConditionGroup::ModeExistence,
        });
    }

    // Certificate decrease over safe-minus-goal.
    for region in safe_minus_goal_regions(spec)? {
        let body = (0..sys.modes.len())
            .map(|q| BodyDisjunct {
                atoms: vec![lyap_atom(sys, v_template, q, params.epsilon, n_coeffs)],
            })
            .collect();
        implications.push(Implication {
            region,
            body,
            group: ConditionGroup::ModeExistence,
        });
    }

    Ok(EncodedProblem {
        implications,
        coeff_box,
        layout: ProblemLayout {
            v_template: v_template.clone(),
            barriers: vec![BarrierSpec::Templated(barrier.clone())],
            barrier_ranges: vec![Some((nv, nv + nb))],
            n_coeffs,
        },
        jq: vec![Vec::new(); sys.modes.len()],
        bq: vec![vec![0]; sys.modes.len()],
    })
}
