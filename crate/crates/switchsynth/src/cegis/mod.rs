//! Counterexample-guided inductive synthesis of control certificates.
//!
//! The loop alternates between a linear-arithmetic candidate search over
//! the coefficient box and a delta-sat counterexample search over the
//! state region. Witness states accumulate as linear clauses; the loop
//! terminates with a certificate when the negated conditions are proved
//! unsatisfiable for the current candidate, with an infeasibility verdict
//! when no coefficient satisfies all witness clauses, or when the
//! iteration budget runs out.

pub mod diagnostics;
mod encoding;
mod certificate;

pub use certificate::{
    BarrierKind, Certificate, CertificateDoc, CertificateIoError, ConcreteBarrier,
    VerificationStatus,
};
pub use encoding::{
    encode_irws, encode_rws, BarrierSpec, BodyDisjunct, ConditionGroup, EncRegion, EncodeError,
    EncodedProblem, Implication, ParametricAtom, ProblemLayout,
};

use crate::icp::{self, DeltaVerdict, IcpOptions, NonlinearConstraint, ConstraintClause};
use crate::lra::{LraOptions, LraResult, LraSolver};
use crate::model::{RwsSpec, SwitchedSystem, SynthesisParams, Template};
use crate::symexpr::{lie_derivative, Expr, IntervalBox};

#[derive(Clone, Copy, Debug, Default)]
pub struct SolverConfig {
    pub icp: IcpOptions,
    pub lra: LraOptions,
}

#[derive(Debug, thiserror::Error)]
pub enum CegisError {
    #[error("delta-sat solver exhausted its node budget while testing a candidate")]
    IcpBudget,
    #[error("candidate search exhausted its node budget")]
    LraBudget,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// One CEGIS iteration, for auditing the progress invariants.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub candidate: Vec<f64>,
    /// Witness state refuting the candidate (absent on the final iteration).
    pub witness: Option<Vec<f64>>,
    /// The witness satisfies only the delta-weakened negation.
    pub spurious: bool,
    pub delta: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CegisLog {
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug)]
pub enum CegisOutcome {
    Found {
        certificate: Certificate,
        iterations: usize,
    },
    /// The accumulated witness set admits no coefficients; the witnesses
    /// are an infeasibility explanation.
    NoSolution {
        witnesses: Vec<Vec<f64>>,
        iterations: usize,
    },
    /// Iteration cap reached without a decision.
    IterationBudget { iterations: usize },
}

/// Run the CEGIS loop on an encoded problem. The initial candidate is the
/// centre of the coefficient box; every refuted candidate contributes its
/// witness's clauses to the candidate constraint.
pub fn cegis_run(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    enc: &EncodedProblem,
    params: &SynthesisParams,
    config: &SolverConfig,
) -> Result<(CegisOutcome, CegisLog), CegisError> {
    let mut log = CegisLog::default();
    let mut lra = LraSolver::new(enc.coeff_box.clone(), config.lra);
    let mut candidate = enc.coeff_box.midpoint();
    let mut witnesses: Vec<Vec<f64>> = Vec::new();
    let mut delta = params.delta_sat_precision;

    for iter in 1..=params.max_iterations {
        match test_candidate(enc, &candidate, delta, &config.icp)? {
            None => {
                let certificate = build_certificate(sys, spec, enc, &candidate, *params);
                log.iterations.push(IterationRecord {
                    candidate,
                    witness: None,
                    spurious: false,
                    delta,
                });
                return Ok((CegisOutcome::Found { certificate, iterations: iter }, log));
            }
            Some((witness, mut spurious)) => {
                let mut witness = witness;
                if spurious {
                    // Re-verify at tightened delta before trusting the
                    // weakened-only witness.
                    match test_candidate(enc, &candidate, delta / 2.0, &config.icp)? {
                        None => {
                            let certificate =
                                build_certificate(sys, spec, enc, &candidate, *params);
                            log.iterations.push(IterationRecord {
                                candidate,
                                witness: None,
                                spurious: false,
                                delta: delta / 2.0,
                            });
                            return Ok((
                                CegisOutcome::Found { certificate, iterations: iter },
                                log,
                            ));
                        }
                        Some((w, s)) => {
                            witness = w;
                            spurious = s;
                        }
                    }
                }

                // A recurring witness means the candidate sits within delta
                // of the constraint surface at that point: tighten delta
                // and re-insert the witness's clauses with a margin boost
                // so the candidate search must clear the surface.
                let dup = witnesses.iter().any(|w| linf(w, &witness) < 1e-9);
                let boost = if dup { 2.0 * delta } else { 0.0 };
                if dup {
                    delta /= 2.0;
                } else {
                    witnesses.push(witness.clone());
                }
                log.iterations.push(IterationRecord {
                    candidate: candidate.clone(),
                    witness: Some(witness.clone()),
                    spurious,
                    delta,
                });
                for clause in enc.clauses_at_state_boosted(&witness, delta, boost) {
                    lra.push_clause(clause);
                }

                match lra.solve() {
                    LraResult::Sat(c) => candidate = c,
                    LraResult::Unsat => {
                        return Ok((
                            CegisOutcome::NoSolution { witnesses, iterations: iter },
                            log,
                        ))
                    }
                    LraResult::Budget => return Err(CegisError::LraBudget),
                }
            }
        }
    }
    Ok((
        CegisOutcome::IterationBudget { iterations: params.max_iterations },
        log,
    ))
}

/// Test a candidate: None when the negated conditions are UNSAT (the
/// candidate is a certificate), otherwise the refuting witness and its
/// spuriousness flag.
fn test_candidate(
    enc: &EncodedProblem,
    candidate: &[f64],
    delta: f64,
    icp_opts: &IcpOptions,
) -> Result<Option<(Vec<f64>, bool)>, CegisError> {
    let problems = enc.negation_at_coeffs(candidate);
    let opts = IcpOptions {
        prefer_exact_witness: true,
        ..*icp_opts
    };
    let icp_opts = &opts;
    match icp::icp_solve_dnf(&problems, delta, icp_opts) {
        (DeltaVerdict::Unsat, _) => Ok(None),
        (DeltaVerdict::DeltaSat { witness, spurious, .. }, _) => Ok(Some((witness, spurious))),
        (DeltaVerdict::Unknown { .. }, _) => Err(CegisError::IcpBudget),
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

fn build_certificate(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    enc: &EncodedProblem,
    c: &[f64],
    params: SynthesisParams,
) -> Certificate {
    let nv = enc.layout.v_template.len();
    let v = enc.layout.v_template.instantiate(&c[..nv]);
    let barrier_exprs = enc.barrier_exprs_at(c);
    let barriers = barrier_exprs
        .into_iter()
        .zip(&enc.layout.barriers)
        .map(|(expr, spec_kind)| ConcreteBarrier {
            expr,
            kind: match spec_kind {
                BarrierSpec::AliasV => BarrierKind::AliasV,
                BarrierSpec::Fixed(_) => BarrierKind::Fixed,
                BarrierSpec::Templated(_) => BarrierKind::Templated,
            },
        })
        .collect();
    Certificate::assemble(
        sys,
        spec,
        v,
        c.to_vec(),
        enc.layout.v_template.basis.clone(),
        barriers,
        params,
        enc.jq.clone(),
        enc.bq.clone(),
        VerificationStatus::Valid,
    )
}

/// Barriers whose value can increase somewhere under mode q. Fixed
/// barriers are excluded only on a proved-unsatisfiable increase query;
/// barriers with unknown coefficients are conservatively kept in every
/// mode.
pub fn compute_bq(
    sys: &SwitchedSystem,
    barriers: &[BarrierSpec],
    enclosure: &IntervalBox,
    precision: f64,
    opts: &IcpOptions,
) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sys.modes.len());
    for mode in &sys.modes {
        let mut included = Vec::new();
        for (b_idx, b) in barriers.iter().enumerate() {
            let keep = match b {
                BarrierSpec::Fixed(e) => {
                    let bdot = lie_derivative(e, &mode.field);
                    let q = vec![ConstraintClause::single(NonlinearConstraint::lt(
                        Expr::neg(bdot),
                    ))];
                    !matches!(icp::icp_solve(&q, enclosure, precision, opts), DeltaVerdict::Unsat)
                }
                BarrierSpec::AliasV | BarrierSpec::Templated(_) => true,
            };
            if keep {
                included.push(b_idx);
            }
        }
        out.push(included);
    }
    out
}

/// Outcome of re-checking a certificate against the encoded conditions.
#[derive(Clone, Debug, PartialEq)]
pub enum VerifyOutcome {
    Valid,
    CounterexampleFound(Vec<f64>),
    Unknown,
}

/// Check a concrete certificate independently of any CEGIS run: encode the
/// conditions around the certificate's own expressions and ask for a
/// counterexample at tightened delta. Works on externally supplied
/// certificates.
pub fn verify_certificate(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    cert: &Certificate,
    params: &SynthesisParams,
    config: &SolverConfig,
) -> Result<VerifyOutcome, CegisError> {
    let delta = params.delta_sat_precision / 2.0;
    let pinned = Template::new(
        vec![cert.v.clone()],
        IntervalBox::from_bounds(&[(1.0, 1.0)]),
    );
    let jq = if cert.jq.len() == sys.modes.len() {
        cert.jq.clone()
    } else {
        crate::model::compute_jq(sys, &spec.safe, &spec.enclosure, params.delta_sat_precision, &config.icp)
    };
    let enc = if spec.is_initialized() {
        let barrier_specs: Vec<BarrierSpec> = cert
            .barriers
            .iter()
            .map(|b| BarrierSpec::Fixed(b.expr.clone()))
            .collect();
        let bq = if cert.bq.len() == sys.modes.len() {
            cert.bq.clone()
        } else {
            compute_bq(sys, &barrier_specs, &spec.enclosure, params.delta_sat_precision, &config.icp)
        };
        encode_irws(sys, spec, &pinned, &barrier_specs, params, &jq, &bq)?
    } else {
        encode_rws(sys, spec, &pinned, params, &jq)?
    };
    let problems = enc.negation_at_coeffs(&[1.0]);
    match icp::icp_solve_dnf(&problems, delta, &config.icp) {
        (DeltaVerdict::Unsat, _) => Ok(VerifyOutcome::Valid),
        (DeltaVerdict::DeltaSat { witness, .. }, _) => {
            Ok(VerifyOutcome::CounterexampleFound(witness))
        }
        (DeltaVerdict::Unknown { .. }, _) => Ok(VerifyOutcome::Unknown),
    }
}

#[cfg(test)]
mod tests;
