//! Fixed-step closed-loop simulation and trace validation.

use super::{ControllerError, SwitchingController};
use crate::cegis::Certificate;
use crate::model::{RwsSpec, SwitchedSystem};
use crate::symexpr::CompiledExpr;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub enum TerminalStatus {
    /// Entered the goal set at the given time.
    ReachedGoal(f64),
    /// Left the safe set: time and the violated predicate index.
    LeftSafe(f64, usize),
    /// Ran until `t_max` without reaching the goal.
    TimeBudget,
    /// The controller found no admissible mode (certificate violation).
    StuckNoMode(f64),
}

#[derive(Clone, Debug)]
pub struct TracePoint {
    pub time: f64,
    pub mode: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub points: Vec<TracePoint>,
    pub switch_times: Vec<f64>,
    pub status: TerminalStatus,
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    pub step: f64,
    pub t_max: f64,
    /// Goal membership tolerance; positive for measure-zero goals such as
    /// facets, zero for full-dimensional goal sets.
    pub tol_goal: f64,
    /// Safe membership tolerance (absorbs floating-point boundary noise).
    pub tol_safe: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            step: 1e-3,
            t_max: 100.0,
            tol_goal: 0.0,
            tol_safe: 1e-9,
        }
    }
}

/// Simulate the closed loop from `x0` in mode `q0` under 4th-order
/// Runge-Kutta integration with the controller consulted every step.
/// The trace terminates on goal entry, safe-set exit, controller
/// starvation, or the time budget. A pure function of its arguments.
pub fn simulate(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    ctrl: &SwitchingController,
    x0: &[f64],
    q0: usize,
    opts: &SimOptions,
) -> Trace {
    let n = sys.dim();
    assert_eq!(x0.len(), n, "initial state dimension");
    let fields: Vec<Vec<CompiledExpr>> = sys
        .modes
        .iter()
        .map(|m| m.field.iter().map(|e| CompiledExpr::compile(e)).collect())
        .collect();
    let goal = spec
        .goal
        .predicates
        .iter()
        .map(|p| CompiledExpr::compile(p))
        .collect::<Vec<_>>();
    let safe = spec
        .safe
        .predicates
        .iter()
        .map(|p| CompiledExpr::compile(p))
        .collect::<Vec<_>>();

    let mut scratch = Vec::new();
    let in_goal = |x: &[f64], scratch: &mut Vec<f64>| -> bool {
        goal.iter().all(|p| {
            matches!(p.eval_point_with(x, scratch), Ok(v) if v <= opts.tol_goal)
        })
    };
    let safe_violation = |x: &[f64], scratch: &mut Vec<f64>| -> Option<usize> {
        safe.iter().position(|p| {
            !matches!(p.eval_point_with(x, scratch), Ok(v) if v <= opts.tol_safe)
        })
    };

    let mut points = Vec::new();
    let mut switch_times = Vec::new();
    let mut x = x0.to_vec();
    let mut q = q0;
    let mut t = 0.0;
    points.push(TracePoint { time: t, mode: q, state: x.clone() });

    let status = loop {
        if in_goal(&x, &mut scratch) {
            break TerminalStatus::ReachedGoal(t);
        }
        if let Some(j) = safe_violation(&x, &mut scratch) {
            break TerminalStatus::LeftSafe(t, j);
        }
        if t >= opts.t_max {
            break TerminalStatus::TimeBudget;
        }
        match ctrl.ctrl_step(q, &x) {
            Ok(next_q) => {
                if next_q != q {
                    switch_times.push(t);
                    q = next_q;
                    points.push(TracePoint { time: t, mode: q, state: x.clone() });
                }
            }
            Err(ControllerError::StuckNoMode { .. }) => {
                break TerminalStatus::StuckNoMode(t);
            }
            Err(_) => break TerminalStatus::StuckNoMode(t),
        }
        match rk4_step(&fields[q], &x, opts.step, &mut scratch) {
            Some(next) => x = next,
            None => break TerminalStatus::StuckNoMode(t),
        }
        t += opts.step;
        points.push(TracePoint { time: t, mode: q, state: x.clone() });
    };

    Trace { points, switch_times, status }
}

fn rk4_step(
    field: &[CompiledExpr],
    x: &[f64],
    h: f64,
    scratch: &mut Vec<f64>,
) -> Option<Vec<f64>> {
    let n = x.len();
    let eval = |y: &[f64], scratch: &mut Vec<f64>| -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for f in field {
            match f.eval_point_with(y, scratch) {
                Ok(v) if v.is_finite() => out.push(v),
                _ => return None,
            }
        }
        Some(out)
    };
    let k1 = eval(x, scratch)?;
    let mid1: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = eval(&mid1, scratch)?;
    let mid2: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = eval(&mid2, scratch)?;
    let end: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = eval(&end, scratch)?;
    Some(
        (0..n)
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect(),
    )
}

/// Post-hoc trace checks: safe membership until goal entry, inter-switch
/// gaps against the dwell bound, and per-step certificate decrease outside
/// the goal.
#[derive(Clone, Debug)]
pub struct TraceReport {
    pub reached_goal: bool,
    pub safe_ok: bool,
    pub violated_predicate: Option<usize>,
    pub dwell_ok: bool,
    pub min_switch_gap: Option<f64>,
    pub decrease_ok: bool,
    pub max_decrease_violation: f64,
}

impl TraceReport {
    pub fn all_ok(&self) -> bool {
        self.reached_goal && self.safe_ok && self.dwell_ok && self.decrease_ok
    }
}

/// `decrease_slack` absorbs integration and sampling error in the
/// per-step decrease check `V(t+h) <= V(t) - epsilon_s * h + slack`.
pub fn validate_trace(
    trace: &Trace,
    spec: &RwsSpec,
    cert: &Certificate,
    delta_dwell: f64,
    step: f64,
    tol_goal: f64,
    decrease_slack: f64,
) -> TraceReport {
    let reached_goal = matches!(trace.status, TerminalStatus::ReachedGoal(_));

    let mut safe_ok = true;
    let mut violated = None;
    for p in &trace.points {
        if let Some(j) = spec.safe.violated_predicate(&p.state, 1e-9) {
            safe_ok = false;
            violated = Some(j);
            break;
        }
    }

    let mut dwell_ok = true;
    let mut min_gap = None;
    for w in trace.switch_times.windows(2) {
        let gap = w[1] - w[0];
        min_gap = Some(min_gap.map_or(gap, |g: f64| g.min(gap)));
        if gap < delta_dwell - step {
            dwell_ok = false;
        }
    }

    let vmap = CompiledExpr::compile(&cert.v);
    let mut scratch = Vec::new();
    let mut decrease_ok = true;
    let mut max_violation = 0.0f64;
    let eps_s = cert.params.epsilon_s;
    for w in trace.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let h = b.time - a.time;
        if h <= 0.0 {
            continue;
        }
        let in_goal = spec.goal.contains(&b.state, tol_goal);
        if in_goal {
            break;
        }
        let va = vmap.eval_point_with(&a.state, &mut scratch).unwrap_or(f64::NAN);
        let vb = vmap.eval_point_with(&b.state, &mut scratch).unwrap_or(f64::NAN);
        let bound = va - eps_s * h + decrease_slack;
        if !(vb <= bound) {
            decrease_ok = false;
            max_violation = max_violation.max(vb - bound);
        }
    }

    TraceReport {
        reached_goal,
        safe_ok,
        violated_predicate: violated,
        dwell_ok,
        min_switch_gap: min_gap,
        decrease_ok,
        max_decrease_violation: max_violation,
    }
}

/// CSV export: `time,mode,x1..xn,V,B0..Bk` with shortest-round-trip float
/// formatting (byte-identical for identical traces).
pub fn export_trace_csv(trace: &Trace, sys: &SwitchedSystem, cert: &Certificate) -> String {
    let mut out = String::new();
    write!(out, "time,mode").unwrap();
    for name in sys.vars.names() {
        write!(out, ",{name}").unwrap();
    }
    write!(out, ",V").unwrap();
    for i in 0..cert.barriers.len() {
        write!(out, ",B{i}").unwrap();
    }
    writeln!(out).unwrap();
    let vmap = CompiledExpr::compile(&cert.v);
    let bmaps: Vec<CompiledExpr> = cert
        .barriers
        .iter()
        .map(|b| CompiledExpr::compile(&b.expr))
        .collect();
    let mut scratch = Vec::new();
    for p in &trace.points {
        write!(out, "{},{}", p.time, sys.modes[p.mode].id).unwrap();
        for v in &p.state {
            write!(out, ",{v}").unwrap();
        }
        match vmap.eval_point_with(&p.state, &mut scratch) {
            Ok(v) => write!(out, ",{v}").unwrap(),
            Err(_) => write!(out, ",nan").unwrap(),
        }
        for b in &bmaps {
            match b.eval_point_with(&p.state, &mut scratch) {
                Ok(v) => write!(out, ",{v}").unwrap(),
                Err(_) => write!(out, ",nan").unwrap(),
            }
        }
        writeln!(out).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cegis::VerificationStatus;
    use crate::model::{InitialSet, Mode, SemialgebraicSet, SetKind, SynthesisParams};
    use crate::symexpr::{parse_expr, IntervalBox, VarContext};

    fn decay_system() -> (SwitchedSystem, RwsSpec, Certificate) {
        // xdot = -x over S = [-1, 1], goal |x| <= 0.1.
        let ctx = VarContext::new(vec!["x"]);
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode { id: "q1".into(), field: vec![parse_expr("-x", &ctx).unwrap()] }],
        )
        .unwrap();
        let spec = RwsSpec {
            safe: SemialgebraicSet::new(
                vec![parse_expr("(x+1)*(x-1)", &ctx).unwrap()],
                SetKind::BasicNondegenerate,
            ),
            goal: SemialgebraicSet::new(
                vec![parse_expr("x^2 - 0.01", &ctx).unwrap()],
                SetKind::General,
            ),
            init: InitialSet::Uninitialized,
            enclosure: IntervalBox::from_bounds(&[(-1.0, 1.0)]),
        };
        let params = SynthesisParams {
            epsilon: 0.01,
            epsilon_s: 0.005,
            ..SynthesisParams::default()
        };
        // V = x^2: Vdot = -2x^2 <= -0.02 outside the goal.
        let cert = Certificate::assemble(
            &sys,
            &spec,
            parse_expr("x^2", &ctx).unwrap(),
            vec![1.0],
            vec![parse_expr("x^2", &ctx).unwrap()],
            Vec::new(),
            params,
            vec![Vec::new()],
            vec![Vec::new()],
            VerificationStatus::Unchecked,
        );
        (sys, spec, cert)
    }

    #[test]
    fn starts_in_goal_is_zero_length() {
        let (sys, spec, cert) = decay_system();
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let trace = simulate(&sys, &spec, &ctrl, &[0.05], 0, &SimOptions::default());
        assert_eq!(trace.status, TerminalStatus::ReachedGoal(0.0));
        assert_eq!(trace.points.len(), 1);
    }

    #[test]
    fn decay_reaches_goal_with_decreasing_v() {
        let (sys, spec, cert) = decay_system();
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let trace = simulate(&sys, &spec, &ctrl, &[0.9], 0, &SimOptions::default());
        assert!(matches!(trace.status, TerminalStatus::ReachedGoal(_)), "{:?}", trace.status);
        let report = validate_trace(&trace, &spec, &cert, 0.0, 1e-3, 0.0, 1e-6);
        assert!(report.all_ok(), "{report:?}");
    }

    #[test]
    fn leaving_safe_is_reported_with_predicate() {
        // xdot = +1 from 0.5 exits through x = 1 (predicate 0).
        let ctx = VarContext::new(vec!["x"]);
        let sys = SwitchedSystem::new(
            ctx.clone(),
            vec![Mode { id: "q1".into(), field: vec![parse_expr("1", &ctx).unwrap()] }],
        )
        .unwrap();
        let spec = RwsSpec {
            safe: SemialgebraicSet::new(
                vec![parse_expr("(x+1)*(x-1)", &ctx).unwrap()],
                SetKind::BasicNondegenerate,
            ),
            goal: SemialgebraicSet::new(
                vec![parse_expr("2 - x", &ctx).unwrap()], // unreachable
                SetKind::General,
            ),
            init: InitialSet::Uninitialized,
            enclosure: IntervalBox::from_bounds(&[(-1.0, 1.0)]),
        };
        let params = SynthesisParams { epsilon: 1.0, epsilon_s: 0.5, ..Default::default() };
        // V = -x decreases along xdot = 1, so the controller never balks.
        let cert = Certificate::assemble(
            &sys, &spec,
            parse_expr("-x", &ctx).unwrap(),
            vec![1.0],
            vec![parse_expr("-x", &ctx).unwrap()],
            Vec::new(),
            params,
            vec![Vec::new()],
            vec![Vec::new()],
            VerificationStatus::Unchecked,
        );
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let trace = simulate(&sys, &spec, &ctrl, &[0.5], 0, &SimOptions::default());
        match trace.status {
            TerminalStatus::LeftSafe(t, j) => {
                assert_eq!(j, 0);
                assert!(t > 0.4);
            }
            s => panic!("expected LeftSafe, got {s:?}"),
        }
        let report = validate_trace(&trace, &spec, &cert, 0.0, 1e-3, 0.0, 1e-6);
        assert!(!report.safe_ok);
        assert_eq!(report.violated_predicate, Some(0));
    }

    #[test]
    fn dwell_check_catches_short_gaps() {
        let (sys, spec, cert) = decay_system();
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let mut trace = simulate(&sys, &spec, &ctrl, &[0.9], 0, &SimOptions::default());
        // Forge a pair of switches closer than the claimed dwell bound.
        trace.switch_times = vec![0.1, 0.1 + 0.05];
        let report = validate_trace(&trace, &spec, &cert, 0.2, 1e-3, 0.0, 1e-6);
        assert!(!report.dwell_ok);
        assert!((report.min_switch_gap.unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn csv_export_shape() {
        let (sys, spec, cert) = decay_system();
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let trace = simulate(&sys, &spec, &ctrl, &[0.5], 0, &SimOptions::default());
        let csv = export_trace_csv(&trace, &sys, &cert);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "time,mode,x,V");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,q1,0.5,"));
    }

    #[test]
    fn simulation_is_deterministic() {
        let (sys, spec, cert) = decay_system();
        let ctrl = SwitchingController::from_certificate(&sys, &spec, &cert);
        let a = export_trace_csv(
            &simulate(&sys, &spec, &ctrl, &[0.7], 0, &SimOptions::default()),
            &sys,
            &cert,
        );
        let b = export_trace_csv(
            &simulate(&sys, &spec, &ctrl, &[0.7], 0, &SimOptions::default()),
            &sys,
            &cert,
        );
        assert_eq!(a, b);
    }
}
