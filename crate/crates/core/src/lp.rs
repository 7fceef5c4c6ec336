//! Dense two-phase primal simplex for the small LPs built by the plane
//! relaxations.
//!
//! Problems are `minimize c·v` subject to `≤ / ≥ / =` rows and per-variable
//! bounds. Bounds are folded into the tableau by shifting and splitting
//! variables; rows are scaled by their largest coefficient before pivoting.

use crate::{Error, Result};

/// Absolute feasibility tolerance on scaled rows.
pub const FEASIBILITY_TOL: f64 = 1e-8;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
/// Consecutive degenerate pivots after which entering selection falls back
/// to Bland's smallest-index rule.
const DEGENERATE_STREAK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub row: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `minimize objective·v` subject to constraints and bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    bounds: Vec<(f64, f64)>,
}

impl LpProblem {
    /// `num_vars` free variables with a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn set_objective(&mut self, objective: Vec<f64>) -> Result<()> {
        if objective.len() != self.num_vars() {
            return Err(Error::Dimension {
                expected: self.num_vars(),
                found: objective.len(),
            });
        }
        if objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "objective".into(),
            });
        }
        self.objective = objective;
        Ok(())
    }

    pub fn add_constraint(&mut self, row: Vec<f64>, sense: Sense, rhs: f64) -> Result<()> {
        if row.len() != self.num_vars() {
            return Err(Error::Dimension {
                expected: self.num_vars(),
                found: row.len(),
            });
        }
        if !rhs.is_finite() || row.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite {
                tensor: format!("constraint {}", self.constraints.len()),
            });
        }
        self.constraints.push(Constraint { row, sense, rhs });
        Ok(())
    }

    /// Infinite values mean "unbounded on that side".
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<()> {
        if var >= self.num_vars() {
            return Err(Error::InvalidArgument(format!("no variable {var}")));
        }
        if lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY
        {
            return Err(Error::InvalidArgument(format!(
                "bad bounds [{lower}, {upper}] for variable {var}"
            )));
        }
        self.bounds[var] = (lower, upper);
        Ok(())
    }

    /// Appends a nonnegative variable with the given objective coefficient.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> Result<usize> {
        self.objective.push(cost);
        self.bounds.push((f64::NEG_INFINITY, f64::INFINITY));
        for c in &mut self.constraints {
            c.row.push(0.0);
        }
        let idx = self.objective.len() - 1;
        self.set_bounds(idx, lower, upper)?;
        Ok(idx)
    }

    /// Largest scaled violation of rows and bounds at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let scale = c.row.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1e-300);
            let lhs: f64 = c.row.iter().zip(values).map(|(a, v)| a * v).sum();
            let gap = (lhs - c.rhs) / scale;
            let v = match c.sense {
                Sense::Le => gap.max(0.0),
                Sense::Ge => (-gap).max(0.0),
                Sense::Eq => gap.abs(),
            };
            worst = worst.max(v);
        }
        for ((lo, hi), v) in self.bounds.iter().zip(values) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize) -> Self {
        let objective_value = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        Self {
            status,
            values: vec![f64::NAN; n],
            objective_value,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// A linear expression `coeffs·v + constant` over the problem variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTerm {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

/// Adds `Σ wᵢ·|termᵢ|` to the objective through epigraph variables
/// `tᵢ ≥ termᵢ`, `tᵢ ≥ −termᵢ`. Returns the extended problem and the index of
/// each `tᵢ`.
pub fn encode_abs_terms(
    problem: &LpProblem,
    terms: &[AffineTerm],
    weights: &[f64],
) -> Result<(LpProblem, Vec<usize>)> {
    if terms.len() != weights.len() {
        return Err(Error::Dimension {
            expected: terms.len(),
            found: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "absolute-value weight {w} must be finite and nonnegative"
        )));
    }
    let n = problem.num_vars();
    let mut out = problem.clone();
    let mut aux = Vec::with_capacity(terms.len());
    for (term, &w) in terms.iter().zip(weights) {
        if term.coeffs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: term.coeffs.len(),
            });
        }
        let t = out.add_var(w, 0.0, f64::INFINITY)?;
        // t - expr >= constant  and  t + expr >= -constant
        let mut above: Vec<f64> = term.coeffs.iter().map(|a| -a).collect();
        above.resize(out.num_vars(), 0.0);
        above[t] = 1.0;
        out.add_constraint(above, Sense::Ge, term.constant)?;
        let mut below = term.coeffs.clone();
        below.resize(out.num_vars(), 0.0);
        below[t] = 1.0;
        out.add_constraint(below, Sense::Ge, -term.constant)?;
        aux.push(t);
    }
    Ok((out, aux))
}

/// How an original variable maps onto nonnegative tableau columns:
/// `x = offset + Σ sign·y_col`.
#[derive(Debug, Clone)]
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

struct Tableau {
    rows: usize,
    width: usize, // columns + rhs
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64]) {
        let w = self.width;
        let inv = 1.0 / self.at(pr, pc);
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let factor = self.data[r * w + pc];
            if factor != 0.0 {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                row[pc] = 0.0;
            }
        }
        let factor = cost[pc];
        if factor != 0.0 {
            for (v, p) in cost.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.data.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }

    /// Canonical reduced-cost row (last entry is minus the objective value).
    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut row = costs.to_vec();
        row.push(0.0);
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for (c, v) in row.iter_mut().enumerate() {
                    *v -= cb * self.at(r, c);
                }
            }
        }
        row
    }

    /// Runs simplex iterations on `cost` over columns `< allowed`. Returns
    /// false if the objective is unbounded below.
    fn optimize(&mut self, cost: &mut [f64], allowed: usize) -> bool {
        let mut degenerate = 0usize;
        let max_iters = 50_000usize;
        for _ in 0..max_iters {
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut enter = None;
            let mut best = -COST_TOL;
            for (c, &rc) in cost.iter().enumerate().take(allowed) {
                if rc < -COST_TOL {
                    if bland {
                        enter = Some(c);
                        break;
                    }
                    if rc < best {
                        best = rc;
                        enter = Some(c);
                    }
                }
            }
            let Some(pc) = enter else {
                return true;
            };

            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, ratio)) = leave else {
                return false;
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(pr, pc, cost);
        }
        true
    }
}

/// Solves `problem` with a two-phase dense simplex.
pub fn solve(problem: &LpProblem) -> LpSolution {
    let n = problem.num_vars();

    // Map bounded variables onto nonnegative columns.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut extra_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for &(lo, hi) in problem.bounds() {
        if lo > hi {
            return LpSolution::failed(LpStatus::Infeasible, n);
        }
        let map = if lo.is_finite() {
            let col = ncols;
            ncols += 1;
            if hi.is_finite() {
                extra_rows.push((vec![(col, 1.0)], hi - lo));
            }
            VarMap {
                offset: lo,
                cols: vec![(col, 1.0)],
            }
        } else if hi.is_finite() {
            let col = ncols;
            ncols += 1;
            VarMap {
                offset: hi,
                cols: vec![(col, -1.0)],
            }
        } else {
            let col = ncols;
            ncols += 2;
            VarMap {
                offset: 0.0,
                cols: vec![(col, 1.0), (col + 1, -1.0)],
            }
        };
        maps.push(map);
    }

    // Rows over the structural columns, scaled and with rhs >= 0.
    struct Row {
        coeffs: Vec<f64>,
        sense: Sense,
        rhs: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut push_row = |mut coeffs: Vec<f64>, mut sense: Sense, mut rhs: f64| -> bool {
        let scale = coeffs.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if scale == 0.0 {
            let ok = match sense {
                Sense::Le => 0.0 <= rhs + FEASIBILITY_TOL,
                Sense::Ge => 0.0 >= rhs - FEASIBILITY_TOL,
                Sense::Eq => rhs.abs() <= FEASIBILITY_TOL,
            };
            return ok;
        }
        for a in &mut coeffs {
            *a /= scale;
        }
        rhs /= scale;
        if rhs < 0.0 {
            for a in &mut coeffs {
                *a = -*a;
            }
            rhs = -rhs;
            sense = match sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        rows.push(Row { coeffs, sense, rhs });
        true
    };
    for c in problem.constraints() {
        let mut coeffs = vec![0.0; ncols];
        let mut rhs = c.rhs;
        for (j, &a) in c.row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            rhs -= a * maps[j].offset;
            for &(col, sign) in &maps[j].cols {
                coeffs[col] += a * sign;
            }
        }
        if !push_row(coeffs, c.sense, rhs) {
            return LpSolution::failed(LpStatus::Infeasible, n);
        }
    }
    for (entries, rhs) in extra_rows {
        let mut coeffs = vec![0.0; ncols];
        for (col, a) in entries {
            coeffs[col] = a;
        }
        if !push_row(coeffs, Sense::Le, rhs) {
            return LpSolution::failed(LpStatus::Infeasible, n);
        }
    }

    // Column layout: structural | slack/surplus | artificial | rhs
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.sense != Sense::Le).count();
    let first_art = ncols + n_slack;
    let total = first_art + n_art;
    let width = total + 1;
    let mut tab = Tableau {
        rows: m,
        width,
        data: vec![0.0; m * width],
        basis: vec![0; m],
    };
    let (mut s, mut a) = (ncols, first_art);
    for (r, row) in rows.iter().enumerate() {
        let base = r * width;
        tab.data[base..base + ncols].copy_from_slice(&row.coeffs);
        tab.data[base + total] = row.rhs;
        match row.sense {
            Sense::Le => {
                tab.data[base + s] = 1.0;
                tab.basis[r] = s;
                s += 1;
            }
            Sense::Ge => {
                tab.data[base + s] = -1.0;
                s += 1;
                tab.data[base + a] = 1.0;
                tab.basis[r] = a;
                a += 1;
            }
            Sense::Eq => {
                tab.data[base + a] = 1.0;
                tab.basis[r] = a;
                a += 1;
            }
        }
    }

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        let mut phase1 = vec![0.0; total];
        for c in phase1.iter_mut().skip(first_art) {
            *c = 1.0;
        }
        let mut cost = tab.reduced_costs(&phase1);
        tab.optimize(&mut cost, total);
        let infeasibility = -cost[total];
        if infeasibility > FEASIBILITY_TOL {
            return LpSolution::failed(LpStatus::Infeasible, n);
        }
        // Drive remaining artificials out of the basis.
        let mut r = 0;
        while r < tab.rows {
            if tab.basis[r] >= first_art {
                let pc = (0..first_art)
                    .filter(|&c| tab.at(r, c).abs() > 1e-9)
                    .max_by(|&x, &y| tab.at(r, x).abs().total_cmp(&tab.at(r, y).abs()));
                match pc {
                    Some(pc) => {
                        tab.pivot(r, pc, &mut cost);
                        r += 1;
                    }
                    None => tab.remove_row(r),
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2 on the structural objective.
    let mut phase2 = vec![0.0; total];
    for (j, map) in maps.iter().enumerate() {
        for &(col, sign) in &map.cols {
            phase2[col] += problem.objective()[j] * sign;
        }
    }
    let mut cost = tab.reduced_costs(&phase2);
    if !tab.optimize(&mut cost, first_art) {
        return LpSolution::failed(LpStatus::Unbounded, n);
    }

    let mut y = vec![0.0; total];
    for r in 0..tab.rows {
        y[tab.basis[r]] = tab.rhs(r).max(0.0);
    }
    let values: Vec<f64> = maps
        .iter()
        .map(|map| map.offset + map.cols.iter().map(|&(c, s)| s * y[c]).sum::<f64>())
        .collect();
    let objective_value = problem.evaluate(&values);
    LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
    }
}
