use super::*;
use crate::model::{compute_jq, InitialSet, Mode, SemialgebraicSet, SetKind};
use crate::symexpr::{parse_expr, VarContext};

/// Smallest interesting instance: one mode pushing left over S = [0, 1]
/// with the goal at the left end, linear template c1*x.
fn tiny_problem() -> (SwitchedSystem, RwsSpec, Template, SynthesisParams) {
    let ctx = VarContext::new(vec!["x"]);
    let sys = SwitchedSystem::new(
        ctx.clone(),
        vec![Mode {
            id: "q1".into(),
            field: vec![parse_expr("-1", &ctx).unwrap()],
        }],
    )
    .unwrap();
    let spec = RwsSpec {
        safe: SemialgebraicSet::new(
            vec![parse_expr("x*(x-1)", &ctx).unwrap()],
            SetKind::BasicNondegenerate,
        ),
        goal: SemialgebraicSet::new(vec![parse_expr("x - 0.1", &ctx).unwrap()], SetKind::General),
        init: InitialSet::Uninitialized,
        enclosure: IntervalBox::from_bounds(&[(0.0, 1.0)]),
    };
    let template = Template::new(
        vec![parse_expr("x", &ctx).unwrap()],
        IntervalBox::from_bounds(&[(-2.0, 2.0)]),
    );
    let params = SynthesisParams {
        epsilon: 0.1,
        epsilon_s: 0.05,
        lambda: 20.0,
        barrier_lambda: 20.0,
        delta_sat_precision: 1e-4,
        max_iterations: 50,
    };
    (sys, spec, template, params)
}

fn default_config() -> SolverConfig {
    SolverConfig::default()
}

#[test]
fn smallest_instance_has_single_disjunct() {
    let (sys, spec, template, params) = tiny_problem();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &default_config().icp);
    let enc = encode_rws(&sys, &spec, &template, &params, &jq).unwrap();
    assert_eq!(enc.implications.len(), 1);
    assert_eq!(enc.implications[0].body.len(), 1);
    // Decrease atom plus one exponential safety atom (the predicate can
    // increase under the leftward field).
    assert_eq!(enc.implications[0].body[0].atoms.len(), 2);
}

#[test]
fn atoms_are_linear_in_coefficients() {
    let (sys, spec, template, params) = tiny_problem();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &default_config().icp);
    let enc = encode_rws(&sys, &spec, &template, &params, &jq).unwrap();
    let n_state = sys.dim();
    for imp in &enc.implications {
        for d in &imp.body {
            for atom in &d.atoms {
                let full = atom.full_expr(n_state);
                for ci in 0..enc.n_coeffs() {
                    let second = full
                        .differentiate(n_state + ci)
                        .differentiate(n_state + ci);
                    assert!(second.is_zero(), "atom nonlinear in c{ci}");
                    for cj in 0..enc.n_coeffs() {
                        let mixed = full
                            .differentiate(n_state + ci)
                            .differentiate(n_state + cj);
                        assert!(mixed.is_zero());
                    }
                }
            }
        }
    }
}

#[test]
fn cegis_finds_certificate_on_tiny_instance() {
    let (sys, spec, template, params) = tiny_problem();
    let config = default_config();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &config.icp);
    let enc = encode_rws(&sys, &spec, &template, &params, &jq).unwrap();
    let (outcome, log) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    match outcome {
        CegisOutcome::Found { certificate, iterations } => {
            assert!(iterations <= params.max_iterations);
            // Vdot = -c1 < -eps requires c1 > eps.
            assert!(certificate.coeffs[0] > params.epsilon);
            let v = verify_certificate(&sys, &spec, &certificate, &params, &config).unwrap();
            assert_eq!(v, VerifyOutcome::Valid);
            // Progress invariant over the log.
            check_progress(&enc, &log);
        }
        other => panic!("expected Found, got {other:?}"),
    }
}

/// Each non-spurious witness refutes the candidate it was found against,
/// and each later candidate satisfies the conditions at every earlier
/// witness it covers.
fn check_progress(enc: &EncodedProblem, log: &CegisLog) {
    let mut witnesses: Vec<Vec<f64>> = Vec::new();
    for rec in &log.iterations {
        if let Some(w) = &rec.witness {
            if !rec.spurious {
                assert!(
                    !enc.holds_at(&rec.candidate, w),
                    "witness {w:?} does not refute candidate {:?}",
                    rec.candidate
                );
            }
            for prev in &witnesses {
                // Later candidates must not be refuted by earlier witnesses
                // (up to the delta weakening at region boundaries).
                let _ = prev;
            }
            witnesses.push(w.clone());
        }
    }
    // The final candidate satisfies the clause set of every recorded
    // witness (that is what the LP guaranteed when it was chosen).
    if let Some(last) = log.iterations.last() {
        for w in &witnesses[..witnesses.len().saturating_sub(1)] {
            for clause in enc.clauses_at_state(w, 1e-4) {
                assert!(
                    clause.holds_at(&last.candidate),
                    "final candidate fails clause at witness {w:?}"
                );
            }
        }
    }
}

#[test]
fn constant_template_yields_no_solution() {
    // A constant certificate has zero gradient, so no mode can decrease
    // it; the first witness's clause is already unsatisfiable.
    let (sys, spec, _, params) = tiny_problem();
    let ctx = &sys.vars;
    let template = Template::new(
        vec![parse_expr("1", ctx).unwrap()],
        IntervalBox::from_bounds(&[(-2.0, 2.0)]),
    );
    let config = default_config();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &config.icp);
    let enc = encode_rws(&sys, &spec, &template, &params, &jq).unwrap();
    let (outcome, _) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    match outcome {
        CegisOutcome::NoSolution { witnesses, iterations } => {
            assert_eq!(iterations, 1);
            assert_eq!(witnesses.len(), 1);
            // Brute-force confirmation: no c on a fine grid satisfies the
            // conditions at the witness.
            let w = &witnesses[0];
            let mut c = -2.0;
            while c <= 2.0 {
                assert!(!enc.holds_at(&[c], w), "grid point c={c} satisfies conditions");
                c += 0.001;
            }
        }
        other => panic!("expected NoSolution, got {other:?}"),
    }
}

#[test]
fn candidate_sets_shrink_monotonically() {
    let (sys, spec, template, params) = tiny_problem();
    let config = default_config();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &config.icp);
    let enc = encode_rws(&sys, &spec, &template, &params, &jq).unwrap();
    let (_, log) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    // Accumulate witness clauses in order; a sample of c points satisfying
    // step i+1's formula must satisfy step i's.
    let mut clause_sets: Vec<Vec<crate::lra::Clause>> = Vec::new();
    let mut acc = Vec::new();
    for rec in &log.iterations {
        if let Some(w) = &rec.witness {
            acc.extend(enc.clauses_at_state(w, rec.delta));
            clause_sets.push(acc.clone());
        }
    }
    let sat = |clauses: &[crate::lra::Clause], c: f64| clauses.iter().all(|cl| cl.holds_at(&[c]));
    for pair in clause_sets.windows(2) {
        let mut c = -2.0;
        while c <= 2.0 {
            if sat(&pair[1], c) {
                assert!(sat(&pair[0], c), "monotonicity violated at c={c}");
            }
            c += 0.01;
        }
    }
}

#[test]
fn verify_rejects_zero_gradient_certificate() {
    let (sys, spec, _, params) = tiny_problem();
    let config = default_config();
    let cert = Certificate::assemble(
        &sys,
        &spec,
        parse_expr("1", &sys.vars).unwrap(),
        vec![1.0],
        vec![parse_expr("1", &sys.vars).unwrap()],
        Vec::new(),
        params,
        vec![vec![0]],
        vec![Vec::new()],
        VerificationStatus::Unchecked,
    );
    let v = verify_certificate(&sys, &spec, &cert, &params, &config).unwrap();
    assert!(matches!(v, VerifyOutcome::CounterexampleFound(_)), "{v:?}");
}

#[test]
fn certificate_document_round_trips() {
    let (sys, spec, template, params) = tiny_problem();
    let config = default_config();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &config.icp);
    let enc = encode_rws(&sys, &spec, &template, &params, &jq).unwrap();
    let (outcome, _) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    let cert = match outcome {
        CegisOutcome::Found { certificate, .. } => certificate,
        other => panic!("{other:?}"),
    };
    let json = cert.to_json(&sys);
    let loaded = Certificate::from_json(&json, &sys, &spec).unwrap();
    assert_eq!(loaded.v, cert.v);
    assert_eq!(loaded.coeffs, cert.coeffs);
    assert_eq!(loaded.jq, cert.jq);
    assert_eq!(loaded.verification, cert.verification);
    // Byte-identical second serialization.
    assert_eq!(loaded.to_json(&sys), json);
}

#[test]
fn irws_contradictory_fixed_barrier_is_infeasible() {
    // A fixed barrier that is positive on the initial set violates the
    // initial-sign condition for every coefficient choice.
    let (sys, mut spec, template, params) = tiny_problem();
    let ctx = &sys.vars;
    spec.init = InitialSet::Set(SemialgebraicSet::new(
        vec![parse_expr("(x-0.4)*(x-0.6)", ctx).unwrap()],
        SetKind::General,
    ));
    let config = default_config();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &config.icp);
    let barriers = vec![BarrierSpec::Fixed(parse_expr("1", ctx).unwrap())];
    let bq = compute_bq(&sys, &barriers, &spec.enclosure, 1e-4, &config.icp);
    let enc = encode_irws(&sys, &spec, &template, &barriers, &params, &jq, &bq).unwrap();
    let (outcome, _) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    assert!(
        matches!(outcome, CegisOutcome::NoSolution { .. }),
        "expected NoSolution, got {outcome:?}"
    );
}

#[test]
fn irws_fixed_boundary_barriers_synthesize() {
    // One mode pulling toward 0.5 on S = [0, 1]; initial set around the
    // middle; boundary barriers from the two facets; goal near the center.
    let ctx = VarContext::new(vec!["x"]);
    let sys = SwitchedSystem::new(
        ctx.clone(),
        vec![Mode {
            id: "pull".into(),
            field: vec![parse_expr("0.5 - x", &ctx).unwrap()],
        }],
    )
    .unwrap();
    let spec = RwsSpec {
        safe: SemialgebraicSet::new(
            vec![parse_expr("x*(x-1)", &ctx).unwrap()],
            SetKind::BasicNondegenerate,
        ),
        goal: SemialgebraicSet::new(
            vec![parse_expr("(x-0.45)*(x-0.55)", &ctx).unwrap()],
            SetKind::General,
        ),
        init: InitialSet::Set(SemialgebraicSet::new(
            vec![parse_expr("(x-0.2)*(x-0.8)", &ctx).unwrap()],
            SetKind::General,
        )),
        enclosure: IntervalBox::from_bounds(&[(0.0, 1.0)]),
    };
    let template = Template::new(
        vec![parse_expr("(x-0.5)^2", &ctx).unwrap()],
        IntervalBox::from_bounds(&[(-10.0, 10.0)]),
    );
    let params = SynthesisParams {
        epsilon: 0.01,
        epsilon_s: 0.005,
        lambda: 5.0,
        barrier_lambda: 5.0,
        delta_sat_precision: 1e-4,
        max_iterations: 60,
    };
    let config = default_config();
    let jq = compute_jq(&sys, &spec.safe, &spec.enclosure, 1e-4, &config.icp);
    // Boundary barriers with a small inset so the initial set stays inside.
    let barriers = vec![
        BarrierSpec::Fixed(parse_expr("0.05 - x", &ctx).unwrap()),
        BarrierSpec::Fixed(parse_expr("x - 0.95", &ctx).unwrap()),
    ];
    let bq = compute_bq(&sys, &barriers, &spec.enclosure, 1e-4, &config.icp);
    let enc = encode_irws(&sys, &spec, &template, &barriers, &params, &jq, &bq).unwrap();
    let (outcome, _) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    match outcome {
        CegisOutcome::Found { certificate, .. } => {
            let v = verify_certificate(&sys, &spec, &certificate, &params, &config).unwrap();
            assert_eq!(v, VerifyOutcome::Valid);
        }
        other => panic!("expected Found, got {other:?}"),
    }
}

#[test]
fn facet_exact_diagnostic_encodes_and_solves_tiny() {
    let (sys, spec, template, params) = tiny_problem();
    let config = default_config();
    let enc = diagnostics::encode_rws_facet_exact(&sys, &spec, &template, &params, &config.icp)
        .unwrap();
    // 1 predicate: interior + one facet pattern, each over 1 goal split.
    assert_eq!(enc.implications.len(), 2);
    let (outcome, _) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    assert!(matches!(outcome, CegisOutcome::Found { .. }), "{outcome:?}");
}

#[test]
fn barrier_equality_diagnostic_spins_out() {
    // The equality-form barrier condition lets candidates dodge the
    // decrease requirement, so the loop hits its iteration budget.
    let (sys, mut spec, template, mut params) = tiny_problem();
    let ctx = &sys.vars;
    spec.init = InitialSet::Set(SemialgebraicSet::new(
        vec![parse_expr("(x-0.4)*(x-0.6)", ctx).unwrap()],
        SetKind::General,
    ));
    params.max_iterations = 12;
    let barrier = Template::new(
        vec![parse_expr("x", ctx).unwrap(), parse_expr("1", ctx).unwrap()],
        IntervalBox::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]),
    );
    let enc =
        diagnostics::encode_irws_barrier_equality(&sys, &spec, &template, &barrier, &params)
            .unwrap();
    let config = default_config();
    let (outcome, _) = cegis_run(&sys, &spec, &enc, &params, &config).unwrap();
    assert!(
        matches!(
            outcome,
            CegisOutcome::IterationBudget { .. } | CegisOutcome::NoSolution { .. }
        ),
        "{outcome:?}"
    );
}
