//! Feasibility solver for boolean combinations of linear inequalities over
//! a compact coefficient box — the CEGIS candidate-finding engine.
//!
//! Formulas are conjunctions of clauses, each clause a disjunction of atom
//! conjunctions (one disjunct per control mode in the certificate
//! encodings). The solver searches over disjunct selections, one per
//! clause, checking each partial selection with a phase-1 simplex LP and
//! pruning selections that contain a previously-learned infeasible core.

mod simplex;

use crate::symexpr::IntervalBox;
use simplex::LpOutcome;
use std::collections::BTreeSet;
use std::fmt::Write as _;

/// `coeffs . c + constant (> | >=) 0`, linear in the unknown coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAtom {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub strict: bool,
}

impl LinearAtom {
    pub fn strict(coeffs: Vec<f64>, constant: f64) -> Self {
        LinearAtom { coeffs, constant, strict: true }
    }

    pub fn nonstrict(coeffs: Vec<f64>, constant: f64) -> Self {
        LinearAtom { coeffs, constant, strict: false }
    }

    pub fn value_at(&self, c: &[f64]) -> f64 {
        self.coeffs.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() + self.constant
    }

    pub fn holds_at(&self, c: &[f64]) -> bool {
        let v = self.value_at(c);
        if self.strict {
            v > 0.0
        } else {
            v >= 0.0
        }
    }

    fn scale(&self) -> f64 {
        self.coeffs
            .iter()
            .fold(self.constant.abs(), |acc, v| acc.max(v.abs()))
            .max(1.0)
    }
}

/// One conjunction of atoms inside a clause's disjunction.
pub type Disjunct = Vec<LinearAtom>;

/// A clause: disjunction over disjuncts. The formula is the conjunction of
/// all pushed clauses.
#[derive(Clone, Debug)]
pub struct Clause {
    pub disjuncts: Vec<Disjunct>,
}

impl Clause {
    pub fn new(disjuncts: Vec<Disjunct>) -> Self {
        assert!(!disjuncts.is_empty(), "clause with no disjuncts");
        Clause { disjuncts }
    }

    pub fn holds_at(&self, c: &[f64]) -> bool {
        self.disjuncts
            .iter()
            .any(|d| d.iter().all(|a| a.holds_at(c)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LraResult {
    Sat(Vec<f64>),
    Unsat,
    /// Search-node budget exceeded; distinct from UNSAT.
    Budget,
}

#[derive(Clone, Copy, Debug)]
pub struct LraOptions {
    /// Margin applied to strict atoms, relative to each atom's coefficient
    /// scale.
    pub strict_slack: f64,
    /// Margin applied to non-strict atoms so returned points survive exact
    /// re-evaluation.
    pub nonstrict_slack: f64,
    /// Desired minimum normalized margin of the returned point. Disjunct
    /// selections achieving it are preferred; a barely-feasible selection
    /// is returned only when no selection reaches the target. Candidates
    /// whose margin is below the counterexample search's delta get refuted
    /// by the same weakened witness forever, so this should sit well above
    /// the delta in use.
    pub margin_target: f64,
    pub node_budget: usize,
}

impl Default for LraOptions {
    fn default() -> Self {
        LraOptions {
            strict_slack: 1e-9,
            nonstrict_slack: 1e-12,
            margin_target: 1e-2,
            node_budget: 200_000,
        }
    }
}

/// Incremental solver: clauses accumulate across CEGIS iterations and
/// learned infeasible cores carry over.
pub struct LraSolver {
    c_box: IntervalBox,
    clauses: Vec<Clause>,
    atoms: Vec<LinearAtom>,
    /// Global atom ids per (clause, disjunct).
    clause_atom_ids: Vec<Vec<Vec<usize>>>,
    cores: Vec<BTreeSet<usize>>,
    /// Best thin-margin feasible point seen during the current solve.
    fallback: Option<(Vec<f64>, f64)>,
    /// Last disjunct choice that worked, tried first on re-solve.
    saved_phase: Vec<usize>,
    opts: LraOptions,
    nodes: usize,
}

impl LraSolver {
    pub fn new(c_box: IntervalBox, opts: LraOptions) -> Self {
        LraSolver {
            c_box,
            clauses: Vec::new(),
            atoms: Vec::new(),
            clause_atom_ids: Vec::new(),
            cores: Vec::new(),
            fallback: None,
            saved_phase: Vec::new(),
            opts,
        nodes: 0,
        }
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn push_clause(&mut self, clause: Clause) {
        let mut ids = Vec::with_capacity(clause.disjuncts.len());
        for d in &clause.disjuncts {
            let mut dids = Vec::with_capacity(d.len());
            for a in d {
                self.atoms.push(a.clone());
                dids.push(self.atoms.len() - 1);
            }
            ids.push(dids);
        }
        self.clause_atom_ids.push(ids);
        self.saved_phase.push(0);
        self.clauses.push(clause);
    }

    /// Decide satisfiability of the accumulated conjunction over the box.
    pub fn solve(&mut self) -> LraResult {
        self.nodes = 0;
        self.fallback = None;
        // Clause processing order: fewest disjuncts first.
        let mut order: Vec<usize> = (0..self.clauses.len()).collect();
        order.sort_by_key(|&i| self.clauses[i].disjuncts.len());

        let mut selection: Vec<usize> = Vec::with_capacity(order.len());
        let mut selected_atoms: Vec<usize> = Vec::new();
        match self.search(&order, 0, &mut selection, &mut selected_atoms) {
            SearchOutcome::Found(c) => {
                // Record phases for incrementality.
                for (pos, &ci) in order.iter().enumerate() {
                    self.saved_phase[ci] = selection.get(pos).copied().unwrap_or(0);
                }
                debug_assert!(self.clauses.iter().all(|cl| cl.holds_at(&c)));
                LraResult::Sat(c)
            }
            SearchOutcome::Exhausted => match self.fallback.take() {
                // No selection reached the margin target; a feasible one
                // still answers SAT.
                Some((c, _)) => LraResult::Sat(c),
                None => LraResult::Unsat,
            },
            SearchOutcome::Budget => match self.fallback.take() {
                Some((c, _)) => LraResult::Sat(c),
                None => LraResult::Budget,
            },
        }
    }

    fn search(
        &mut self,
        order: &[usize],
        level: usize,
        selection: &mut Vec<usize>,
        selected_atoms: &mut Vec<usize>,
    ) -> SearchOutcome {
        self.nodes += 1;
        if self.nodes > self.opts.node_budget {
            return SearchOutcome::Budget;
        }
        if level == order.len() {
            return match self.lp_check(selected_atoms) {
                Some((c, margin)) => {
                    if margin >= self.opts.margin_target {
                        SearchOutcome::Found(c)
                    } else {
                        // Feasible but thin; keep the deepest point seen
                        // and look for a roomier selection.
                        let better = match &self.fallback {
                            None => true,
                            Some((_, m)) => margin > *m,
                        };
                        if better {
                            self.fallback = Some((c, margin));
                        }
                        SearchOutcome::Exhausted
                    }
                }
                None => SearchOutcome::Exhausted,
            };
        }
        let ci = order[level];
        let n_disj = self.clause_atom_ids[ci].len();
        let preferred = self.saved_phase[ci].min(n_disj - 1);
        let mut tried_budget = false;
        for k in 0..n_disj {
            // Preferred disjunct first, then declaration order.
            let di = if k == 0 {
                preferred
            } else if k <= preferred {
                k - 1
            } else {
                k
            };
            let ids = self.clause_atom_ids[ci][di].clone();
            let mark = selected_atoms.len();
            selected_atoms.extend_from_slice(&ids);
            selection.push(di);

            let viable = !self.hits_core(selected_atoms) && {
                match self.lp_check(selected_atoms) {
                    Some(_) => true,
                    None => {
                        let core = self.extract_core(selected_atoms);
                        self.cores.push(core);
                        false
                    }
                }
            };
            if viable {
                match self.search(order, level + 1, selection, selected_atoms) {
                    SearchOutcome::Exhausted => {}
                    out => return out,
                }
                if self.nodes > self.opts.node_budget {
                    tried_budget = true;
                }
            }
            selection.pop();
            selected_atoms.truncate(mark);
            if tried_budget {
                return SearchOutcome::Budget;
            }
        }
        SearchOutcome::Exhausted
    }

    fn hits_core(&self, selected: &[usize]) -> bool {
        let set: BTreeSet<usize> = selected.iter().copied().collect();
        self.cores.iter().any(|core| core.is_subset(&set))
    }

    /// Solve the conjunctive LP of the selected atoms over the box and
    /// re-verify the point exactly. Returns the point and its normalized
    /// margin.
    fn lp_check(&self, selected: &[usize]) -> Option<(Vec<f64>, f64)> {
        let lo: Vec<f64> = self.c_box.intervals().iter().map(|iv| iv.lo()).collect();
        let widths: Vec<f64> = self.c_box.intervals().iter().map(|iv| iv.width()).collect();

        let mut rows = Vec::with_capacity(selected.len());
        let mut rhs = Vec::with_capacity(selected.len());
        for &id in selected {
            let a = &self.atoms[id];
            let scale = a.scale();
            let slack = if a.strict {
                self.opts.strict_slack * scale
            } else {
                self.opts.nonstrict_slack * scale
            };
            // a.coeffs . (lo + x) + constant >= slack
            let base: f64 = a.coeffs.iter().zip(&lo).map(|(p, q)| p * q).sum();
            let inv = 1.0 / scale;
            rows.push(a.coeffs.iter().map(|v| v * inv).collect::<Vec<f64>>());
            rhs.push((slack - a.constant - base) * inv);
        }
        match simplex::feasible_point(&rows, &rhs, &widths) {
            LpOutcome::Feasible(x, margin) => {
                let c: Vec<f64> = lo.iter().zip(&x).map(|(l, v)| l + v).collect();
                if selected.iter().all(|&id| self.atoms[id].holds_at(&c)) {
                    Some((c, margin))
                } else {
                    None
                }
            }
            LpOutcome::Infeasible | LpOutcome::Stalled => None,
        }
    }

    /// Deletion-filter core: drop atoms one at a time while the rest stays
    /// infeasible. Capped; falling back to the full set is still a valid
    /// core.
    fn extract_core(&mut self, selected: &[usize]) -> BTreeSet<usize> {
        let mut core: Vec<usize> = selected.to_vec();
        if core.len() <= 40 {
            let mut i = 0;
            while i < core.len() && core.len() > 1 {
                let mut reduced = core.clone();
                reduced.remove(i);
                self.nodes += 1;
                if self.lp_check(&reduced).is_none() {
                    core = reduced;
                } else {
                    i += 1;
                }
            }
        }
        core.into_iter().collect()
    }
}

enum SearchOutcome {
    Found(Vec<f64>),
    Exhausted,
    Budget,
}

/// One-shot entry point matching the documented contract.
pub fn lra_feasible(clauses: &[Clause], c_box: &IntervalBox, opts: &LraOptions) -> LraResult {
    let mut solver = LraSolver::new(c_box.clone(), *opts);
    for c in clauses {
        solver.push_clause(c.clone());
    }
    solver.solve()
}

/// Human-readable s-expression dump for test fixtures.
pub fn dump_formula(clauses: &[Clause]) -> String {
    let mut out = String::new();
    writeln!(out, "(and").unwrap();
    for clause in clauses {
        writeln!(out, "  (or").unwrap();
        for d in &clause.disjuncts {
            let atoms: Vec<String> = d
                .iter()
                .map(|a| {
                    let rel = if a.strict { ">" } else { ">=" };
                    let terms: Vec<String> = a
                        .coeffs
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(i, v)| format!("{v}*c{}", i + 1))
                        .collect();
                    format!("({rel} (+ {} {}) 0)", terms.join(" "), a.constant)
                })
                .collect();
            writeln!(out, "    (and {})", atoms.join(" ")).unwrap();
        }
        writeln!(out, "  )").unwrap();
    }
    writeln!(out, ")").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxx(bounds: &[(f64, f64)]) -> IntervalBox {
        IntervalBox::from_bounds(bounds)
    }

    #[test]
    fn single_strict_atom_sat() {
        // c1 > 0 over [-1, 1].
        let clause = Clause::new(vec![vec![LinearAtom::strict(vec![1.0], 0.0)]]);
        match lra_feasible(&[clause], &boxx(&[(-1.0, 1.0)]), &LraOptions::default()) {
            LraResult::Sat(c) => assert!(c[0] > 0.0 && c[0] <= 1.0),
            r => panic!("expected SAT, got {r:?}"),
        }
    }

    #[test]
    fn contradiction_unsat() {
        let c1 = Clause::new(vec![vec![LinearAtom::strict(vec![1.0], 0.0)]]);
        let c2 = Clause::new(vec![vec![LinearAtom::strict(vec![-1.0], 0.0)]]);
        assert_eq!(
            lra_feasible(&[c1, c2], &boxx(&[(-1.0, 1.0)]), &LraOptions::default()),
            LraResult::Unsat
        );
    }

    #[test]
    fn disjunctive_selection() {
        // (c1 > 1 or c1 < -1) and (c1 > 0) over [-2, 2]: must land in (1, 2].
        let c1 = Clause::new(vec![
            vec![LinearAtom::strict(vec![1.0], -1.0)],
            vec![LinearAtom::strict(vec![-1.0], -1.0)],
        ]);
        let c2 = Clause::new(vec![vec![LinearAtom::strict(vec![1.0], 0.0)]]);
        match lra_feasible(&[c1, c2], &boxx(&[(-2.0, 2.0)]), &LraOptions::default()) {
            LraResult::Sat(c) => assert!(c[0] > 1.0 && c[0] <= 2.0, "c = {c:?}"),
            r => panic!("expected SAT, got {r:?}"),
        }
    }

    #[test]
    fn incremental_clauses_narrow_solution() {
        let mut solver = LraSolver::new(boxx(&[(-2.0, 2.0), (-2.0, 2.0)]), LraOptions::default());
        solver.push_clause(Clause::new(vec![vec![LinearAtom::strict(vec![1.0, 0.0], 0.0)]]));
        let first = match solver.solve() {
            LraResult::Sat(c) => c,
            r => panic!("{r:?}"),
        };
        assert!(first[0] > 0.0);
        solver.push_clause(Clause::new(vec![vec![LinearAtom::strict(
            vec![0.0, 1.0],
            -1.0,
        )]]));
        match solver.solve() {
            LraResult::Sat(c) => {
                assert!(c[0] > 0.0 && c[1] > 1.0);
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn deterministic_verdict_and_point() {
        let mk = || {
            vec![
                Clause::new(vec![
                    vec![LinearAtom::strict(vec![1.0, 1.0], -0.5)],
                    vec![LinearAtom::strict(vec![-1.0, 0.5], 0.3)],
                ]),
                Clause::new(vec![vec![LinearAtom::nonstrict(vec![0.5, -1.0], 0.2)]]),
            ]
        };
        let a = lra_feasible(&mk(), &boxx(&[(-1.0, 1.0), (-1.0, 1.0)]), &LraOptions::default());
        let b = lra_feasible(&mk(), &boxx(&[(-1.0, 1.0), (-1.0, 1.0)]), &LraOptions::default());
        assert_eq!(a, b);
    }

    #[test]
    fn sat_points_survive_exact_recheck() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _case in 0..200 {
            let n = rng.gen_range(1..=3usize);
            let n_clauses = rng.gen_range(1..=3usize);
            let clauses: Vec<Clause> = (0..n_clauses)
                .map(|_| {
                    let n_disj = rng.gen_range(1..=4usize);
                    Clause::new(
                        (0..n_disj)
                            .map(|_| {
                                let n_atoms = rng.gen_range(1..=2usize);
                                (0..n_atoms)
                                    .map(|_| LinearAtom {
                                        coeffs: (0..n)
                                            .map(|_| rng.gen_range(-4i32..=4) as f64 * 0.5)
                                            .collect(),
                                        constant: rng.gen_range(-4i32..=4) as f64 * 0.25,
                                        strict: rng.gen_bool(0.7),
                                    })
                                    .collect()
                            })
                            .collect(),
                    )
                })
                .collect();
            let cb = boxx(&vec![(-2.0, 2.0); n]);
            if let LraResult::Sat(c) = lra_feasible(&clauses, &cb, &LraOptions::default()) {
                assert!(cb.contains(&c));
                for clause in &clauses {
                    assert!(clause.holds_at(&c), "clause fails at {c:?}");
                }
            }
        }
    }

    #[test]
    fn dump_readable() {
        let clause = Clause::new(vec![vec![LinearAtom::strict(vec![1.0, -2.0], 0.5)]]);
        let s = dump_formula(&[clause]);
        assert!(s.contains("(> (+ 1*c1 -2*c2 0.5) 0)"));
    }
}
