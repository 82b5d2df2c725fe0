//! Controller extraction, min-dwell bounds, and closed-loop simulation.
//!
//! A certificate induces a switching law through per-mode selector
//! functions `eta_q`: the maximum of the certificate's decrease expression
//! and the active safety (or barrier) pieces. The controller keeps the
//! current mode while `eta_q < -epsilon_s` and otherwise switches to a mode
//! with `eta < -epsilon`; the gap between the two thresholds buys a
//! positive minimum dwell time bounded via interval arithmetic.

mod simulate;

pub use simulate::{
    export_trace_csv, simulate, validate_trace, SimOptions, TerminalStatus, Trace, TracePoint,
    TraceReport,
};

use crate::cegis::Certificate;
use crate::model::{RwsSpec, SwitchedSystem};
use crate::symexpr::{lie_derivative, CompiledExpr, Expr, EvalError, IntervalBox};
use std::sync::Arc;

/// Sentinel magnitude standing in for minus infinity on excluded pieces.
pub const SENTINEL_L: f64 = 1e9;

/// One smooth piece of a mode's selector function.
#[derive(Clone, Debug)]
pub enum EtaPiece {
    /// A single expression: the certificate decrease or an exponential
    /// safety piece.
    Single(Arc<Expr>),
    /// Barrier piece: the two exponential branches combine by minimum.
    MinPair(Arc<Expr>, Arc<Expr>),
}

struct CompiledPiece {
    exprs: Vec<CompiledExpr>,
    min_pair: bool,
}

/// The eta-based switching law extracted from a certificate.
pub struct SwitchingController {
    pub epsilon: f64,
    pub epsilon_s: f64,
    /// Pieces per mode, in a fixed order (decrease piece first).
    pieces: Vec<Vec<EtaPiece>>,
    compiled: Vec<Vec<CompiledPiece>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    #[error("no mode achieves eta < -epsilon at state {state:?} (certificate violation)")]
    StuckNoMode { state: Vec<f64> },
    #[error("expression evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(
        "a dwell-bound interval is unbounded over the enclosure; tighten the enclosure \
         (division-by-zero regions in the dynamics must be excluded)"
    )]
    UnboundedDwell,
}

impl SwitchingController {
    /// Build the controller from a certificate. Uninitialized problems get
    /// the certificate decrease plus exponential safety pieces for the
    /// predicates in each mode's increase-capable table; initialized
    /// problems get the certificate decrease plus min-of-branches barrier
    /// pieces instead.
    pub fn from_certificate(sys: &SwitchedSystem, spec: &RwsSpec, cert: &Certificate) -> Self {
        let lambda = cert.params.lambda;
        let blambda = cert.params.barrier_lambda;
        let initialized = !cert.barriers.is_empty();
        let mut pieces: Vec<Vec<EtaPiece>> = Vec::with_capacity(sys.modes.len());
        for (q, _mode) in sys.modes.iter().enumerate() {
            let mut mode_pieces = vec![EtaPiece::Single(cert.vdot[q].clone())];
            if initialized {
                for &b in &cert.bq[q] {
                    let bexpr = &cert.barriers[b].expr;
                    let bdot = &cert.bdot[q][b];
                    let plus = Expr::add(
                        bdot.clone(),
                        Expr::mul(Expr::constant(blambda), bexpr.clone()),
                    );
                    let minus = Expr::sub(
                        bdot.clone(),
                        Expr::mul(Expr::constant(blambda), bexpr.clone()),
                    );
                    mode_pieces.push(EtaPiece::MinPair(plus, minus));
                }
            } else {
                for &j in &cert.jq[q] {
                    let p = &spec.safe.predicates[j];
                    let piece = Expr::add(
                        cert.pdot[q][j].clone(),
                        Expr::mul(Expr::constant(lambda), p.clone()),
                    );
                    mode_pieces.push(EtaPiece::Single(piece));
                }
            }
            pieces.push(mode_pieces);
        }
        let compiled = pieces
            .iter()
            .map(|mode_pieces| {
                mode_pieces
                    .iter()
                    .map(|p| match p {
                        EtaPiece::Single(e) => CompiledPiece {
                            exprs: vec![CompiledExpr::compile(e)],
                            min_pair: false,
                        },
                        EtaPiece::MinPair(a, b) => CompiledPiece {
                            exprs: vec![CompiledExpr::compile(a), CompiledExpr::compile(b)],
                            min_pair: true,
                        },
                    })
                    .collect()
            })
            .collect();
        SwitchingController {
            epsilon: cert.params.epsilon,
            epsilon_s: cert.params.epsilon_s,
            pieces,
            compiled,
        }
    }

    pub fn num_modes(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self, mode: usize) -> &[EtaPiece] {
        &self.pieces[mode]
    }

    /// `eta_q(x)`: maximum over the mode's pieces; excluded pieces are
    /// absent (equivalently at the -L sentinel).
    pub fn eval_eta(&self, mode: usize, x: &[f64]) -> Result<f64, EvalError> {
        let mut best = -SENTINEL_L;
        for piece in &self.compiled[mode] {
            let v = if piece.min_pair {
                let a = piece.exprs[0].eval_point(x)?;
                let b = piece.exprs[1].eval_point(x)?;
                a.min(b)
            } else {
                piece.exprs[0].eval_point(x)?
            };
            best = best.max(v);
        }
        Ok(best)
    }

    /// The switching rule: keep `q` while `eta_q(x) < -epsilon_s`;
    /// otherwise switch to the mode with minimal eta among those strictly
    /// below `-epsilon` (ties to the lowest index).
    pub fn ctrl_step(&self, q: usize, x: &[f64]) -> Result<usize, ControllerError> {
        if self.eval_eta(q, x)? < -self.epsilon_s {
            return Ok(q);
        }
        let mut best: Option<(usize, f64)> = None;
        for cand in 0..self.num_modes() {
            let eta = self.eval_eta(cand, x)?;
            if eta < -self.epsilon {
                match best {
                    None => best = Some((cand, eta)),
                    Some((_, b)) if eta < b => best = Some((cand, eta)),
                    _ => {}
                }
            }
        }
        match best {
            Some((cand, _)) => Ok(cand),
            None => Err(ControllerError::StuckNoMode { state: x.to_vec() }),
        }
    }
}

/// Upper-bound `Lambda` on the growth rate of every selector piece over the
/// enclosure, and the induced minimum dwell time
/// `(epsilon - epsilon_s) / Lambda`.
pub fn min_dwell_bound(
    ctrl: &SwitchingController,
    sys: &SwitchedSystem,
    enclosure: &IntervalBox,
) -> Result<(f64, f64), ControllerError> {
    let mut lambda_max: f64 = 0.0;
    for (q, mode) in sys.modes.iter().enumerate() {
        for piece in &ctrl.pieces[q] {
            let branches: Vec<&Arc<Expr>> = match piece {
                EtaPiece::Single(e) => vec![e],
                // min(a, b) grows no faster than the faster branch.
                EtaPiece::MinPair(a, b) => vec![a, b],
            };
            for alpha in branches {
                let rate = lie_derivative(alpha, &mode.field);
                let bound = rate.eval_interval(enclosure);
                if !bound.hi().is_finite() {
                    return Err(ControllerError::UnboundedDwell);
                }
                lambda_max = lambda_max.max(bound.hi());
            }
        }
    }
    let lambda_max = lambda_max.max(1e-12);
    let dwell = (ctrl.epsilon - ctrl.epsilon_s) / lambda_max;
    Ok((lambda_max, dwell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cegis::{Certificate, VerificationStatus};
    use crate::model::{InitialSet, Mode, SemialgebraicSet, SetKind, SynthesisParams};
    use crate::symexpr::{parse_expr, VarContext};

    fn one_d_system(field: &str) -> (SwitchedSystem, RwsSpec) {
        let ctx = VarContext::new(vec!["x"]);
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode {
                id: "q1".into(),
                field: vec![parse_expr(field, &ctx).unwrap()],
            }],
        )
        .unwrap();
        let spec = RwsSpec {
            safe: SemialgebraicSet::new(
                vec![parse_expr("x*(x-1)", &ctx).unwrap()],
                SetKind::BasicNondegenerate,
            ),
            goal: SemialgebraicSet::new(
                vec![parse_expr("x - 0.1", &ctx).unwrap()],
                SetKind::General,
            ),
            init: InitialSet::Uninitialized,
            enclosure: IntervalBox::from_bounds(&[(0.0, 1.0)]),
        };
        (sys, spec)
    }

    fn constant_vdot_cert(sys: &SwitchedSystem, spec: &RwsSpec, v: &str) -> Certificate {
        let ctx = &sys.vars;
        let params = SynthesisParams {
            epsilon: 1.0,
            epsilon_s: 0.5,
            lambda: 1.0,
            ..SynthesisParams::default()
        };
        Certificate::assemble(
            sys,
            spec,
            parse_expr(v, ctx).unwrap(),
            vec![1.0],
            vec![parse_expr(v, ctx).unwrap()],
            Vec::new(),
            params,
            vec![Vec::new(); sys.modes.len()],
            vec![Vec::new(); sys.modes.len()],
            VerificationStatus::Unchecked,
        )
    }

    #[test]
    fn eta_single_constant_piece() {
        // V = -2x with field 1: Vdot = -2 everywhere.
        let (sys, spec) = one_d_system("1");
        let cert = constant_vdot_cert(&sys, &spec, "-2*x");
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        assert_eq!(ctrl.eval_eta(0, &[0.3]).unwrap(), -2.0);
    }

    #[test]
    fn eta_takes_max_of_pieces() {
        let (sys, spec) = one_d_system("1");
        let mut cert = constant_vdot_cert(&sys, &spec, "-3*x");
        // Force the safety piece for predicate 0 into the controller.
        cert.jq = vec![vec![0]];
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        // Pieces at x = 0.5: Vdot = -3; pdot + lambda*p = (2x-1) + (x^2-x) = -0.25.
        let eta = ctrl.eval_eta(0, &[0.5]).unwrap();
        assert!((eta - (-0.25)).abs() < 1e-12, "eta = {eta}");
    }

    #[test]
    fn hysteresis_band_keeps_mode() {
        let (sys, spec) = one_d_system("1");
        // Two copies of the same mode with different certificates is
        // overkill; a single mode with eta between thresholds must be kept.
        let cert = constant_vdot_cert(&sys, &spec, "-0.75*x"); // Vdot = -0.75
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        // -epsilon = -1 < -0.75 < -0.5 = -epsilon_s: keep current mode.
        assert_eq!(ctrl.ctrl_step(0, &[0.2]).unwrap(), 0);
    }

    #[test]
    fn switch_to_strictly_better_mode() {
        let ctx = VarContext::new(vec!["x"]);
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![
                Mode { id: "a".into(), field: vec![parse_expr("1", &ctx).unwrap()] },
                Mode { id: "b".into(), field: vec![parse_expr("-2", &ctx).unwrap()] },
            ],
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
        let params = SynthesisParams {
            epsilon: 1.0,
            epsilon_s: 0.5,
            ..SynthesisParams::default()
        };
        // V = x: Vdot_a = 1 (bad), Vdot_b = -2 (good).
        let cert = Certificate::assemble(
            &sys,
            &spec,
            parse_expr("x", &ctx).unwrap(),
            vec![1.0],
            vec![parse_expr("x", &ctx).unwrap()],
            Vec::new(),
            params,
            vec![Vec::new(); 2],
            vec![Vec::new(); 2],
            VerificationStatus::Unchecked,
        );
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        // eta_a = 1 >= -eps_s: must switch to b whose eta = -2 < -eps.
        assert_eq!(ctrl.ctrl_step(0, &[0.4]).unwrap(), 1);
        // From b, eta_b = -2 < -eps_s: stay.
        assert_eq!(ctrl.ctrl_step(1, &[0.4]).unwrap(), 1);
    }

    #[test]
    fn stuck_when_no_mode_decreases() {
        let (sys, spec) = one_d_system("1");
        let cert = constant_vdot_cert(&sys, &spec, "x"); // Vdot = +1
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        assert!(matches!(
            ctrl.ctrl_step(0, &[0.5]),
            Err(ControllerError::StuckNoMode { .. })
        ));
    }

    #[test]
    fn dwell_bound_linear_growth() {
        // Field 1, single piece alpha = Vdot of V = x^2/2... choose V with
        // Vdot = x so alpha-dot = 1 exactly: V = x^2/2, Vdot = x.
        let (sys, spec) = one_d_system("1");
        let cert = constant_vdot_cert(&sys, &spec, "0.5*x^2");
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let (lambda, dwell) = min_dwell_bound(&ctrl, &sys, &spec.enclosure).unwrap();
        assert!((lambda - 1.0).abs() < 1e-9, "Lambda = {lambda}");
        assert!((dwell - 0.5).abs() < 1e-9, "dwell = {dwell}");
    }

    #[test]
    fn dwell_bound_nonincreasing_pieces_floor() {
        // V = -x^2/2 under field 1: Vdot = -x, alpha-dot = -1 <= 0, so
        // Lambda collapses to the positive floor and dwell is huge.
        let (sys, spec) = one_d_system("1");
        let cert = constant_vdot_cert(&sys, &spec, "-0.5*x^2");
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let (lambda, dwell) = min_dwell_bound(&ctrl, &sys, &spec.enclosure).unwrap();
        assert!(lambda <= 1e-9);
        assert!(dwell > 1e6);
    }
}
