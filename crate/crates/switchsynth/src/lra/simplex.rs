//! Two-phase simplex for systems `A x >= d`, `0 <= x <= w`.
//!
//! Phase 1 establishes feasibility by driving artificial variables to
//! zero; phase 2 maximizes the minimum (normalized) slack of the atom
//! rows, so returned points sit as deep inside the feasible region as the
//! box allows. Barely-feasible points are useless as CEGIS candidates: a
//! candidate within delta of the constraint boundary is refuted by
//! delta-weakened counterexamples indefinitely.
//!
//! Dense tableau with Bland's rule (lowest-index entering and leaving
//! candidates), which rules out cycling and makes every answer a
//! deterministic function of the input. The caller re-verifies returned
//! points in plain double arithmetic.

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-8;
const MARGIN_CAP: f64 = 1e9;

pub(crate) enum LpOutcome {
    /// A feasible point and the achieved minimum normalized margin over
    /// the atom rows.
    Feasible(Vec<f64>, f64),
    Infeasible,
    /// Pivot cap exceeded; neither verdict is trustworthy.
    Stalled,
}

struct Tableau {
    tab: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    n_rows: usize,
    n_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize, obj: &mut [f64], obj_rhs: &mut f64) {
        let p = self.tab[row][col];
        for v in self.tab[row].iter_mut() {
            *v /= p;
        }
        self.rhs[row] /= p;
        for r in 0..self.n_rows {
            if r != row {
                let f = self.tab[r][col];
                if f != 0.0 {
                    for c in 0..self.n_cols {
                        self.tab[r][c] -= f * self.tab[row][c];
                    }
                    self.rhs[r] -= f * self.rhs[row];
                    if self.rhs[r] < 0.0 && self.rhs[r] > -1e-12 {
                        self.rhs[r] = 0.0;
                    }
                }
            }
        }
        let f = obj[col];
        if f != 0.0 {
            for c in 0..self.n_cols {
                obj[c] -= f * self.tab[row][c];
            }
            *obj_rhs -= f * self.rhs[row];
        }
        self.basis[row] = col;
    }

    /// Bland-rule minimization of the reduced-cost row `obj` over the
    /// columns in `[0, allowed_cols)`, skipping `skip_col` if set.
    /// Improving columns are those with `obj[c] > tol` (we drive the
    /// objective value down). Returns false on pivot-cap exhaustion.
    fn minimize(
        &mut self,
        obj: &mut [f64],
        obj_rhs: &mut f64,
        allowed_cols: usize,
        skip_col: Option<usize>,
        pivot_cap: usize,
    ) -> bool {
        for _ in 0..pivot_cap {
            let mut entering = None;
            for c in 0..allowed_cols {
                if Some(c) == skip_col {
                    continue;
                }
                if obj[c] > PIVOT_TOL {
                    entering = Some(c);
                    break;
                }
            }
            let Some(e) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.n_rows {
                let a = self.tab[r][e];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[r] / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12
                                || ((ratio - bratio).abs() <= 1e-12
                                    && self.basis[r] < self.basis[br])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((lr, _)) = leave else {
                // Unbounded improving direction; cannot happen with box
                // bounds and the margin cap unless arithmetic degenerated.
                return false;
            };
            self.pivot(lr, e, obj, obj_rhs);
        }
        false
    }
}

/// Find a deep feasible point of `rows[j] . x >= rhs[j]` for all j, with
/// `0 <= x[i] <= widths[i]`. Rows are assumed pre-normalized so that one
/// unit of margin means the same across rows.
pub(crate) fn feasible_point(rows: &[Vec<f64>], rhs: &[f64], widths: &[f64]) -> LpOutcome {
    let n = widths.len();
    let k = rows.len();
    let m = k + n + 1;
    // Columns: x (n) | margin t | surplus (k) | bound slacks (n + 1 for t)
    // | artificials (appended as needed).
    let t_col = n;
    let base_cols = n + 1 + k + n + 1;

    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut trhs: Vec<f64> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut needs_artificial: Vec<usize> = Vec::new();

    for j in 0..k {
        let mut row = vec![0.0; base_cols];
        let mut d = rhs[j];
        let mut sign = 1.0;
        if d < 0.0 {
            sign = -1.0;
            d = -d;
        }
        for (i, &a) in rows[j].iter().enumerate() {
            row[i] = sign * a;
        }
        row[t_col] = -sign; // a.x - t - s = d
        row[n + 1 + j] = -sign;
        if sign < 0.0 {
            basis.push(n + 1 + j); // surplus column is +1, rhs >= 0
        } else {
            needs_artificial.push(j);
            basis.push(usize::MAX);
        }
        tab.push(row);
        trhs.push(d);
    }
    for i in 0..n {
        let mut row = vec![0.0; base_cols];
        row[i] = 1.0;
        row[n + 1 + k + i] = 1.0;
        tab.push(row);
        trhs.push(widths[i]);
        basis.push(n + 1 + k + i);
    }
    {
        // Margin cap keeps phase 2 bounded: t + slack = MARGIN_CAP.
        let mut row = vec![0.0; base_cols];
        row[t_col] = 1.0;
        row[n + 1 + k + n] = 1.0;
        tab.push(row);
        trhs.push(MARGIN_CAP);
        basis.push(n + 1 + k + n);
    }

    let n_art = needs_artificial.len();
    let total_cols = base_cols + n_art;
    for row in tab.iter_mut() {
        row.resize(total_cols, 0.0);
    }
    for (a_idx, &j) in needs_artificial.iter().enumerate() {
        tab[j][base_cols + a_idx] = 1.0;
        basis[j] = base_cols + a_idx;
    }

    let mut t = Tableau {
        tab,
        rhs: trhs,
        basis,
        n_rows: m,
        n_cols: total_cols,
    };

    // Phase 1: minimize the artificial mass (expressed over nonbasic
    // columns by summing the artificial rows). The margin column is held
    // out of the basis.
    let mut obj = vec![0.0; total_cols];
    let mut obj_rhs = 0.0;
    for &j in &needs_artificial {
        for c in 0..total_cols {
            obj[c] += t.tab[j][c];
        }
        obj_rhs += t.rhs[j];
    }
    for a_idx in 0..n_art {
        obj[base_cols + a_idx] = 0.0;
    }
    let scale = 1.0
        + rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
        + widths.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let pivot_cap = 200 + 40 * (m + total_cols);
    if !t.minimize(&mut obj, &mut obj_rhs, base_cols, Some(t_col), pivot_cap) {
        return LpOutcome::Stalled;
    }
    if obj_rhs > FEAS_TOL * scale {
        return LpOutcome::Infeasible;
    }

    // Drive degenerate basic artificials out of the basis: phase 2 does
    // not penalize them, so a pivot sequence could otherwise push one
    // positive and silently leave the feasible region. Rows with no
    // structural entry are redundant and keep their artificial pinned at
    // zero.
    for r in 0..t.n_rows {
        if t.basis[r] >= base_cols {
            if let Some(c) = (0..base_cols).find(|&c| t.tab[r][c].abs() > PIVOT_TOL) {
                t.pivot(r, c, &mut obj, &mut obj_rhs);
            }
        }
    }

    // Phase 2: maximize the margin t (minimize -t), artificials barred.
    if k > 0 {
        let mut obj2 = vec![0.0; total_cols];
        obj2[t_col] = 1.0; // reduced row for maximizing t
        let mut obj2_rhs = 0.0;
        // Price out basic variables.
        for r in 0..t.n_rows {
            let b = t.basis[r];
            if b < total_cols && obj2[b] != 0.0 {
                let f = obj2[b];
                for c in 0..total_cols {
                    obj2[c] -= f * t.tab[r][c];
                }
                obj2_rhs -= f * t.rhs[r];
            }
        }
        if !t.minimize(&mut obj2, &mut obj2_rhs, base_cols, None, pivot_cap) {
            return LpOutcome::Stalled;
        }
    }

    let mut x = vec![0.0; n];
    let mut margin = 0.0;
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs[r].max(0.0).min(widths[b]);
        } else if b == t_col {
            margin = t.rhs[r].max(0.0);
        }
    }
    LpOutcome::Feasible(x, margin)
}
