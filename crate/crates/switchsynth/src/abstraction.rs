//! Composition of reach-to-facet subproblems into controllers over
//! decomposed safe sets.
//!
//! The user supplies a decomposition into basic semialgebraic regions with
//! declared facet adjacencies. For every declared (region, facet) pair a
//! reach-to-facet synthesis runs with the region as safe set and the facet
//! (or a fat facet) as goal; successes become abstract edges whose target
//! set is every neighbor across the facet (the abstraction is adversarial
//! about which neighbor is entered). A backward fixpoint solves the
//! resulting reachability game, and the composite controller dispatches
//! each state to the winning sub-controller of the region containing it.

use crate::cegis::{
    cegis_run, encode_rws, CegisError, CegisOutcome, Certificate, SolverConfig,
};
use crate::icp::{self, ConstraintClause, DeltaVerdict, NonlinearConstraint};
use crate::model::{
    compute_jq, InitialSet, RwsSpec, SemialgebraicSet, SetKind, SwitchedSystem, SynthesisParams,
    Template,
};
use crate::runtime::{SwitchingController, TracePoint};
use crate::symexpr::{CompiledExpr, Expr, IntervalBox};
use std::fmt::Write as _;
use std::sync::Arc;

/// One declared facet of a region: the active predicate indices, the
/// regions reachable across it, and an optional full-dimensional goal
/// standing in for the facet.
#[derive(Clone, Debug)]
pub struct FacetDecl {
    pub label: String,
    pub predicate_indices: Vec<usize>,
    pub neighbors: Vec<String>,
    pub fat_goal: Option<SemialgebraicSet>,
    pub template: Option<Template>,
}

/// A basic semialgebraic cell of the decomposition.
#[derive(Clone, Debug)]
pub struct Region {
    pub id: String,
    pub set: SemialgebraicSet,
    pub enclosure: IntervalBox,
    pub facets: Vec<FacetDecl>,
    pub template: Option<Template>,
    /// Marks a region containing the global goal; such regions get a
    /// terminal subproblem toward it instead of facet exits.
    pub is_goal: bool,
}

#[derive(Clone, Debug)]
pub struct AbstractEdge {
    pub source: usize,
    pub action: String,
    pub targets: Vec<usize>,
    pub certificate: Certificate,
    /// The subproblem's goal set; membership signals the facet crossing.
    pub facet_goal: SemialgebraicSet,
    /// The subproblem spec the certificate was proved against.
    pub sub_spec: RwsSpec,
}

#[derive(Clone, Debug)]
pub struct SubproblemFailure {
    pub region: String,
    pub action: String,
    pub reason: String,
}

pub struct AbstractGraph {
    pub regions: Vec<Region>,
    pub edges: Vec<AbstractEdge>,
    /// Terminal (region -> global goal) controllers for goal regions.
    pub terminal: Vec<Option<AbstractEdge>>,
    pub failures: Vec<SubproblemFailure>,
}

#[derive(Debug, thiserror::Error)]
pub enum AbstractionError {
    #[error("region '{0}' referenced as neighbor but not declared")]
    UnknownRegion(String),
    #[error("facet '{1}' of region '{0}' has no template (neither facet nor region level)")]
    NoTemplate(String, String),
    #[error("facet '{1}' of region '{0}' is empty (declared shared facet has no points)")]
    EmptyFacet(String, String),
    #[error("regions '{0}' and '{1}' have overlapping interiors (witness {2:?})")]
    OverlappingInteriors(String, String, Vec<f64>),
    #[error(transparent)]
    Cegis(#[from] CegisError),
}

/// Spot-check the user-asserted decomposition: declared facets are
/// nonempty and region interiors are pairwise disjoint (delta-approximate;
/// an unknown verdict passes with the user's assertion standing).
pub fn validate_regions(
    regions: &[Region],
    precision: f64,
    config: &SolverConfig,
) -> Result<(), AbstractionError> {
    for r in regions {
        for f in &r.facets {
            for n in &f.neighbors {
                if !regions.iter().any(|r2| &r2.id == n) {
                    return Err(AbstractionError::UnknownRegion(n.clone()));
                }
            }
            let mut clauses: Vec<ConstraintClause> = r
                .set
                .predicates
                .iter()
                .map(|p| ConstraintClause::single(NonlinearConstraint::le(p.clone())))
                .collect();
            for &j in &f.predicate_indices {
                clauses.push(ConstraintClause::single(NonlinearConstraint::eq(
                    r.set.predicates[j].clone(),
                )));
            }
            if matches!(
                icp::icp_solve(&clauses, &r.enclosure, precision, &config.icp),
                DeltaVerdict::Unsat
            ) {
                return Err(AbstractionError::EmptyFacet(r.id.clone(), f.label.clone()));
            }
        }
    }
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            let (a, b) = (&regions[i], &regions[j]);
            let enc = match intersect_boxes(&a.enclosure, &b.enclosure) {
                Some(e) => e,
                None => continue,
            };
            let margin = precision;
            let clauses: Vec<ConstraintClause> = a
                .set
                .predicates
                .iter()
                .chain(&b.set.predicates)
                .map(|p| {
                    ConstraintClause::single(NonlinearConstraint::le(Expr::add(
                        p.clone(),
                        Expr::constant(margin),
                    )))
                })
                .collect();
            if let DeltaVerdict::DeltaSat { witness, spurious: false, .. } =
                icp::icp_solve(&clauses, &enc, precision, &config.icp)
            {
                return Err(AbstractionError::OverlappingInteriors(
                    a.id.clone(),
                    b.id.clone(),
                    witness,
                ));
            }
        }
    }
    Ok(())
}

fn intersect_boxes(a: &IntervalBox, b: &IntervalBox) -> Option<IntervalBox> {
    let mut dims = Vec::with_capacity(a.dim());
    for (x, y) in a.intervals().iter().zip(b.intervals()) {
        dims.push(x.intersect(y)?);
    }
    Some(IntervalBox::new(dims))
}

/// The reach-to-facet subproblem for one declared facet: the safe set
/// drops the facet predicates (the exit direction must not be penalized by
/// the decrease conditions), and the goal is the crossing set or the
/// declared fat facet.
pub fn facet_subproblem(region: &Region, facet: &FacetDecl) -> RwsSpec {
    let safe_preds: Vec<Arc<Expr>> = region
        .set
        .predicates
        .iter()
        .enumerate()
        .filter(|(j, _)| !facet.predicate_indices.contains(j))
        .map(|(_, p)| p.clone())
        .collect();
    let goal = facet.fat_goal.clone().unwrap_or_else(|| {
        SemialgebraicSet::new(
            facet
                .predicate_indices
                .iter()
                .map(|&j| Expr::neg(region.set.predicates[j].clone()))
                .collect(),
            SetKind::General,
        )
    });
    RwsSpec {
        safe: SemialgebraicSet::new(safe_preds, SetKind::BasicNondegenerate),
        goal,
        init: InitialSet::Uninitialized,
        enclosure: region.enclosure.clone(),
    }
}

fn synthesize_subproblem(
    sys: &SwitchedSystem,
    spec: &RwsSpec,
    template: &Template,
    params: &SynthesisParams,
    config: &SolverConfig,
) -> Result<Result<Certificate, String>, CegisError> {
    let jq = compute_jq(
        sys,
        &spec.safe,
        &spec.enclosure,
        params.delta_sat_precision,
        &config.icp,
    );
    let enc = encode_rws(sys, spec, template, params, &jq)?;
    let (outcome, _) = cegis_run(sys, spec, &enc, params, config)?;
    Ok(match outcome {
        CegisOutcome::Found { certificate, .. } => Ok(certificate),
        CegisOutcome::NoSolution { iterations, .. } => {
            Err(format!("no solution after {iterations} iterations"))
        }
        CegisOutcome::IterationBudget { iterations } => {
            Err(format!("iteration budget ({iterations}) exhausted"))
        }
    })
}

/// Solve every declared (region, facet) subproblem plus the terminal
/// subproblems of goal regions. Failures are recorded, not fatal. With
/// `parallel`, subproblems run on scoped worker threads.
pub fn build_abstraction(
    sys: &SwitchedSystem,
    regions: &[Region],
    global_goal: &SemialgebraicSet,
    params: &SynthesisParams,
    config: &SolverConfig,
    parallel: bool,
) -> Result<AbstractGraph, AbstractionError> {
    // Collect the subproblem list first so the parallel and sequential
    // paths share it.
    enum Job<'r> {
        Facet { region_idx: usize, region: &'r Region, facet: &'r FacetDecl },
        Terminal { region_idx: usize, region: &'r Region },
    }
    let mut jobs = Vec::new();
    for (ri, r) in regions.iter().enumerate() {
        for f in &r.facets {
            jobs.push(Job::Facet { region_idx: ri, region: r, facet: f });
        }
        if r.is_goal {
            jobs.push(Job::Terminal { region_idx: ri, region: r });
        }
    }

    let run_job = |job: &Job| -> Result<
        (usize, String, Vec<String>, RwsSpec, Result<Certificate, String>),
        AbstractionError,
    > {
        match job {
            Job::Facet { region_idx, region, facet } => {
                let template = facet
                    .template
                    .as_ref()
                    .or(region.template.as_ref())
                    .ok_or_else(|| {
                        AbstractionError::NoTemplate(region.id.clone(), facet.label.clone())
                    })?;
                let spec = facet_subproblem(region, facet);
                let result = synthesize_subproblem(sys, &spec, template, params, config)?;
                Ok((
                    *region_idx,
                    facet.label.clone(),
                    facet.neighbors.clone(),
                    spec,
                    result,
                ))
            }
            Job::Terminal { region_idx, region } => {
                let template = region.template.as_ref().ok_or_else(|| {
                    AbstractionError::NoTemplate(region.id.clone(), "terminal".into())
                })?;
                let spec = RwsSpec {
                    safe: region.set.clone(),
                    goal: global_goal.clone(),
                    init: InitialSet::Uninitialized,
                    enclosure: region.enclosure.clone(),
                };
                let result = synthesize_subproblem(sys, &spec, template, params, config)?;
                Ok((*region_idx, "terminal".into(), Vec::new(), spec, result))
            }
        }
    };

    let results: Vec<_> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|job| scope.spawn(move || run_job(job)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    } else {
        jobs.iter().map(run_job).collect()
    };

    let mut edges = Vec::new();
    let mut terminal: Vec<Option<AbstractEdge>> = vec![None; regions.len()];
    let mut failures = Vec::new();
    for res in results {
        let (region_idx, action, neighbors, spec, outcome) = res?;
        match outcome {
            Ok(certificate) => {
                let mut targets = Vec::new();
                for n in &neighbors {
                    let idx = regions
                        .iter()
                        .position(|r| &r.id == n)
                        .ok_or_else(|| AbstractionError::UnknownRegion(n.clone()))?;
                    targets.push(idx);
                }
                let edge = AbstractEdge {
                    source: region_idx,
                    action: action.clone(),
                    targets,
                    facet_goal: spec.goal.clone(),
                    sub_spec: spec,
                    certificate,
                };
                if action == "terminal" {
                    terminal[region_idx] = Some(edge);
                } else {
                    edges.push(edge);
                }
            }
            Err(reason) => failures.push(SubproblemFailure {
                region: regions[region_idx].id.clone(),
                action,
                reason,
            }),
        }
    }

    Ok(AbstractGraph {
        regions: regions.to_vec(),
        edges,
        terminal,
        failures,
    })
}

/// Winning set and strategy of the abstract reachability game: a region is
/// winning when some action's entire adversarial target set is already
/// winning. Edges whose source appears among their own targets can never
/// fire first, so self-loops are effectively ignored.
pub fn solve_reachability_game(
    n_regions: usize,
    edges: &[(usize, Vec<usize>)],
    goal_regions: &[usize],
) -> (Vec<bool>, Vec<Option<usize>>) {
    let mut winning = vec![false; n_regions];
    for &g in goal_regions {
        winning[g] = true;
    }
    let mut strategy: Vec<Option<usize>> = vec![None; n_regions];
    loop {
        let mut changed = false;
        for r in 0..n_regions {
            if winning[r] {
                continue;
            }
            for (ei, (src, targets)) in edges.iter().enumerate() {
                if *src != r || targets.is_empty() {
                    continue;
                }
                if targets.iter().all(|&t| winning[t]) {
                    winning[r] = true;
                    strategy[r] = Some(ei);
                    changed = true;
                    break; // lowest edge index wins ties
                }
            }
        }
        if !changed {
            return (winning, strategy);
        }
    }
}

pub struct GameSolution {
    pub winning: Vec<bool>,
    /// Edge index per winning non-goal region.
    pub strategy: Vec<Option<usize>>,
}

/// Convenience wrapper running the game on an abstract graph.
pub fn solve_graph_game(graph: &AbstractGraph) -> GameSolution {
    let edge_view: Vec<(usize, Vec<usize>)> = graph
        .edges
        .iter()
        .map(|e| (e.source, e.targets.clone()))
        .collect();
    let goals: Vec<usize> = graph
        .regions
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_goal)
        .map(|(i, _)| i)
        .collect();
    let (winning, strategy) = solve_reachability_game(graph.regions.len(), &edge_view, &goals);
    GameSolution { winning, strategy }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CompositeStatus {
    ReachedGoal(f64),
    /// Left every declared region (obstacle or safe-set exit).
    LeftRegions(f64),
    /// Entered a region outside the winning set.
    LostRegion(f64, usize),
    StuckNoMode(f64),
    TimeBudget,
}

#[derive(Clone, Debug)]
pub struct CompositeTrace {
    pub points: Vec<TracePoint>,
    /// Region index at each visited region change, deduplicated.
    pub region_sequence: Vec<usize>,
    pub superdense_warnings: usize,
    pub status: CompositeStatus,
}

/// Closed-loop simulation of the composite controller. One region-dispatch
/// decision per integration step; membership ties break toward winning
/// regions first, then declaration order. Mode state is re-initialized
/// through the incoming sub-controller whenever the region changes.
pub fn simulate_composite(
    sys: &SwitchedSystem,
    graph: &AbstractGraph,
    game: &GameSolution,
    global_goal: &SemialgebraicSet,
    x0: &[f64],
    q0: usize,
    step: f64,
    t_max: f64,
    tol_goal: f64,
) -> CompositeTrace {
    let controllers: Vec<SwitchingController> = graph
        .edges
        .iter()
        .map(|e| SwitchingController::from_certificate(sys, &e.sub_spec, &e.certificate))
        .collect();
    let terminal_ctrls: Vec<Option<SwitchingController>> = graph
        .terminal
        .iter()
        .map(|opt| {
            opt.as_ref()
                .map(|e| SwitchingController::from_certificate(sys, &e.sub_spec, &e.certificate))
        })
        .collect();
    let fields: Vec<Vec<CompiledExpr>> = sys
        .modes
        .iter()
        .map(|m| m.field.iter().map(|e| CompiledExpr::compile(e)).collect())
        .collect();

    // Region lookup order: winning first, then declaration order.
    let mut order: Vec<usize> = (0..graph.regions.len()).collect();
    order.sort_by_key(|&i| (!game.winning[i], i));
    let locate = |x: &[f64]| -> Option<usize> {
        order
            .iter()
            .copied()
            .find(|&i| graph.regions[i].set.contains(x, 1e-9))
    };

    let mut points = Vec::new();
    let mut region_sequence = Vec::new();
    let mut superdense = 0usize;
    let mut x = x0.to_vec();
    let mut q = q0;
    let mut t = 0.0;
    let mut current_region: Option<usize> = None;
    let mut scratch = Vec::new();

    points.push(TracePoint { time: t, mode: q, state: x.clone() });

    let status = loop {
        if global_goal.contains(&x, tol_goal) {
            break CompositeStatus::ReachedGoal(t);
        }
        if t >= t_max {
            break CompositeStatus::TimeBudget;
        }
        let here = match locate(&x) {
            Some(r) => r,
            None => break CompositeStatus::LeftRegions(t),
        };
        if current_region != Some(here) {
            if let Some(prev) = current_region {
                if region_sequence.last() == Some(&prev) && region_sequence.contains(&here) {
                    // Re-entering an already-visited region within the
                    // same run is the superdense pattern worth flagging.
                    superdense += 1;
                }
            }
            region_sequence.push(here);
            current_region = Some(here);
        }
        if !game.winning[here] {
            break CompositeStatus::LostRegion(t, here);
        }
        let ctrl = if graph.regions[here].is_goal {
            match &terminal_ctrls[here] {
                Some(c) => c,
                None => break CompositeStatus::StuckNoMode(t),
            }
        } else {
            match game.strategy[here] {
                Some(ei) => &controllers[ei],
                None => break CompositeStatus::StuckNoMode(t),
            }
        };
        match ctrl.ctrl_step(q, &x) {
            Ok(nq) => q = nq,
            Err(_) => break CompositeStatus::StuckNoMode(t),
        }
        let next = {
            let field = &fields[q];
            let n = x.len();
            let eval = |y: &[f64], s: &mut Vec<f64>| -> Option<Vec<f64>> {
                let mut out = Vec::with_capacity(n);
                for f in field {
                    match f.eval_point_with(y, s) {
                        Ok(v) if v.is_finite() => out.push(v),
                        _ => return None,
                    }
                }
                Some(out)
            };
            let k1 = eval(&x, &mut scratch);
            match k1 {
                None => break CompositeStatus::StuckNoMode(t),
                Some(k1) => {
                    let mid1: Vec<f64> =
                        x.iter().zip(&k1).map(|(a, k)| a + 0.5 * step * k).collect();
                    let k2 = eval(&mid1, &mut scratch).unwrap_or_else(|| k1.clone());
                    let mid2: Vec<f64> =
                        x.iter().zip(&k2).map(|(a, k)| a + 0.5 * step * k).collect();
                    let k3 = eval(&mid2, &mut scratch).unwrap_or_else(|| k2.clone());
                    let end: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + step * k).collect();
                    let k4 = eval(&end, &mut scratch).unwrap_or_else(|| k3.clone());
                    (0..n)
                        .map(|i| x[i] + step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                        .collect::<Vec<f64>>()
                }
            }
        };
        x = next;
        t += step;
        points.push(TracePoint { time: t, mode: q, state: x.clone() });
    };

    CompositeTrace {
        points,
        region_sequence,
        superdense_warnings: superdense,
        status,
    }
}

/// DOT export of the abstraction with winning-set markers.
pub fn export_graph_dot(graph: &AbstractGraph, game: &GameSolution) -> String {
    let mut out = String::new();
    writeln!(out, "digraph abstraction {{").unwrap();
    for (i, r) in graph.regions.iter().enumerate() {
        let shape = if r.is_goal { "doublecircle" } else { "circle" };
        let color = if game.winning[i] { "green" } else { "gray" };
        writeln!(
            out,
            "  {} [shape={shape} color={color} winning={}];",
            r.id, game.winning[i]
        )
        .unwrap();
    }
    for (ei, e) in graph.edges.iter().enumerate() {
        let chosen = game.strategy[e.source] == Some(ei);
        for &tgt in &e.targets {
            writeln!(
                out,
                "  {} -> {} [label=\"{}\"{}];",
                graph.regions[e.source].id,
                graph.regions[tgt].id,
                e.action,
                if chosen { " style=bold" } else { "" }
            )
            .unwrap();
        }
    }
    writeln!(out, "}}").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_region_chain() {
        // R1 -> R0 (goal).
        let edges = vec![(1usize, vec![0usize])];
        let (winning, strategy) = solve_reachability_game(2, &edges, &[0]);
        assert_eq!(winning, vec![true, true]);
        assert_eq!(strategy[1], Some(0));
    }

    #[test]
    fn unreachable_region_excluded() {
        // R2 has no edges; R1 -> R0.
        let edges = vec![(1usize, vec![0usize])];
        let (winning, _) = solve_reachability_game(3, &edges, &[0]);
        assert_eq!(winning, vec![true, true, false]);
    }

    #[test]
    fn adversarial_targets_require_all_winning() {
        // R2's only action may land in R1 (winning) or R3 (losing).
        let edges = vec![(1usize, vec![0usize]), (2usize, vec![1usize, 3usize])];
        let (winning, _) = solve_reachability_game(4, &edges, &[0]);
        assert!(!winning[2]);
        assert!(!winning[3]);
        // Give R3 an exit and R2 becomes winning through the same action.
        let edges2 = vec![
            (1usize, vec![0usize]),
            (2usize, vec![1usize, 3usize]),
            (3usize, vec![1usize]),
        ];
        let (winning2, strategy2) = solve_reachability_game(4, &edges2, &[0]);
        assert!(winning2.iter().all(|w| *w));
        assert_eq!(strategy2[2], Some(1));
    }

    #[test]
    fn self_loop_is_redundant() {
        let edges = vec![(1usize, vec![1usize]), (1usize, vec![0usize])];
        let (winning, strategy) = solve_reachability_game(2, &edges, &[0]);
        assert!(winning[1]);
        assert_eq!(strategy[1], Some(1), "self-loop must not be selected");
    }

    #[test]
    fn removing_edges_never_grows_winning_set() {
        let edges = vec![
            (1usize, vec![0usize]),
            (2usize, vec![1usize]),
            (3usize, vec![2usize, 1usize]),
            (2usize, vec![3usize]),
        ];
        let (full, _) = solve_reachability_game(4, &edges, &[0]);
        for skip in 0..edges.len() {
            let reduced: Vec<_> = edges
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, e)| e.clone())
                .collect();
            let (w, _) = solve_reachability_game(4, &reduced, &[0]);
            for r in 0..4 {
                assert!(!w[r] || full[r], "edge removal enlarged winning set at {r}");
            }
        }
    }

    #[test]
    fn strategy_paths_reach_goal_without_cycles() {
        let edges = vec![
            (1usize, vec![0usize]),
            (2usize, vec![1usize, 3usize]),
            (3usize, vec![1usize]),
            (3usize, vec![2usize]),
        ];
        let (winning, strategy) = solve_reachability_game(4, &edges, &[0]);
        assert!(winning.iter().all(|w| *w));
        // Follow all adversarial branches of the strategy; every path must
        // hit the goal within n steps.
        fn reaches(
            r: usize,
            edges: &[(usize, Vec<usize>)],
            strategy: &[Option<usize>],
            depth: usize,
        ) -> bool {
            if r == 0 {
                return true;
            }
            if depth == 0 {
                return false;
            }
            match strategy[r] {
                None => false,
                Some(ei) => edges[ei]
                    .1
                    .iter()
                    .all(|&t| reaches(t, edges, strategy, depth - 1)),
            }
        }
        for r in 0..4 {
            assert!(reaches(r, &edges, &strategy, 5), "region {r} strategy diverges");
        }
    }
}
