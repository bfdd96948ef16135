//! Two-phase bounded-variable primal simplex on a dense tableau.
//!
//! Every row `aᵢx (rel) bᵢ` gets a slack `sᵢ` with `aᵢx + sᵢ = bᵢ`, whose
//! bounds encode the relation: `[0, ∞)` for ≤, `(−∞, 0]` for ≥, `[0, 0]` for =.
//! Nonbasic columns sit at a finite bound (or at zero when free), so variable
//! bounds never become rows. Rows whose slack would start outside its bounds
//! receive an artificial column that phase one drives to zero.

use crate::problem::{LpProblem, Relation, Sense};
use crate::{LpError, FEAS_TOL, OPT_TOL};

/// Pivot elements smaller than this are never used.
const PIVOT_TOL: f64 = 1e-7;
/// Rows may be violated by at most this much (relative) in a returned point.
const VERIFY_TOL: f64 = 1e-6;
/// Consecutive degenerate pivots before Bland's rule is engaged.
const DEGENERACY_SWITCH: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers `y` for the problem in its own sense: `c − Aᵀy` are
    /// the reduced costs of the structural variables at the final basis.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    Free,
}

struct Tableau {
    rows: usize,
    cols: usize,
    structurals: usize,
    first_artificial: usize,
    tab: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    value: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
    pivots: usize,
    pivot_limit: usize,
    bland: bool,
    degenerate_run: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn build(p: &LpProblem, costs: &[f64], pivot_limit: usize) -> Tableau {
        let n = p.num_vars();
        let m = p.constraints.len();

        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        let mut status = Vec::with_capacity(n + m);
        let mut value = Vec::with_capacity(n + m);
        for j in 0..n {
            if lo[j].is_finite() {
                status.push(Status::AtLower);
                value.push(lo[j]);
            } else if hi[j].is_finite() {
                status.push(Status::AtUpper);
                value.push(hi[j]);
            } else {
                status.push(Status::Free);
                value.push(0.0);
            }
        }

        // Slack columns.
        let mut slack_value = vec![0.0; m];
        let mut needs_artificial = vec![0.0f64; m];
        for (i, row) in p.constraints.iter().enumerate() {
            let (sl, sh) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(sl);
            hi.push(sh);
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * value[j]).sum();
            let s = row.rhs - act;
            if s >= sl && s <= sh {
                slack_value[i] = s;
                status.push(Status::Basic);
            } else {
                let clamped = s.clamp(sl, sh);
                slack_value[i] = clamped;
                status.push(if clamped == sl { Status::AtLower } else { Status::AtUpper });
                needs_artificial[i] = s - clamped;
            }
        }
        value.extend_from_slice(&slack_value);

        let artificial_rows: Vec<usize> = (0..m).filter(|&i| needs_artificial[i] != 0.0).collect();
        let k = artificial_rows.len();
        let cols = n + m + k;
        for _ in 0..k {
            lo.push(0.0);
            hi.push(f64::INFINITY);
            status.push(Status::Basic);
        }

        let mut tab = vec![0.0; m * cols];
        let mut basis = vec![0usize; m];
        for (i, row) in p.constraints.iter().enumerate() {
            let r = &mut tab[i * cols..(i + 1) * cols];
            for &(j, a) in &row.coeffs {
                r[j] += a;
            }
            r[n + i] = 1.0;
            basis[i] = n + i;
        }
        for (idx, &i) in artificial_rows.iter().enumerate() {
            let col = n + m + idx;
            let sign = needs_artificial[i].signum();
            let r = &mut tab[i * cols..(i + 1) * cols];
            r[col] = sign;
            if sign < 0.0 {
                for v in r.iter_mut() {
                    *v = -*v;
                }
            }
            basis[i] = col;
            value.push(needs_artificial[i].abs());
        }

        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(costs);

        Tableau {
            rows: m,
            cols,
            structurals: n,
            first_artificial: n + m,
            tab,
            basis,
            status,
            value,
            lo,
            hi,
            cost,
            reduced: vec![0.0; cols],
            pivots: 0,
            pivot_limit,
            bland: false,
            degenerate_run: 0,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.tab[i * self.cols..(i + 1) * self.cols]
    }

    fn objective(&self) -> f64 {
        self.cost.iter().zip(&self.value).map(|(c, v)| c * v).sum()
    }

    fn recompute_reduced_costs(&mut self) {
        self.reduced.copy_from_slice(&self.cost);
        for i in 0..self.rows {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let r = &self.tab[i * self.cols..(i + 1) * self.cols];
                for (d, &t) in self.reduced.iter_mut().zip(r) {
                    *d -= cb * t;
                }
            }
        }
        for i in 0..self.rows {
            self.reduced[self.basis[i]] = 0.0;
        }
    }

    /// Recomputes basic values from `B⁻¹b` and the nonbasic values.
    ///
    /// The slack block of the tableau holds `B⁻¹` because the original slack
    /// columns form an identity; row flips made at construction cancel out.
    fn refresh_basic_values(&mut self, original_rhs: &[f64]) {
        let n = self.structurals;
        let m = self.rows;
        for i in 0..m {
            let r = self.row(i);
            let mut v: f64 = (0..m).map(|k| r[n + k] * original_rhs[k]).sum();
            for j in 0..self.cols {
                if self.status[j] != Status::Basic && self.value[j] != 0.0 {
                    v -= r[j] * self.value[j];
                }
            }
            let b = self.basis[i];
            self.value[b] = v;
        }
    }

    fn entering(&self, dtol: f64, allow_artificial: bool) -> Option<(usize, f64)> {
        let limit = if allow_artificial { self.cols } else { self.first_artificial };
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..limit {
            if self.lo[j] == self.hi[j] {
                continue;
            }
            let d = self.reduced[j];
            let dir = match self.status[j] {
                Status::Basic => continue,
                Status::AtLower if d < -dtol => 1.0,
                Status::AtUpper if d > dtol => -1.0,
                Status::Free if d.abs() > dtol => -d.signum(),
                _ => continue,
            };
            if self.bland {
                return Some((j, dir));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn iterate(&mut self, dtol: f64, allow_artificial: bool) -> Result<PhaseEnd, LpError> {
        loop {
            let Some((q, dir)) = self.entering(dtol, allow_artificial) else {
                return Ok(PhaseEnd::Optimal);
            };
            if self.pivots >= self.pivot_limit {
                return Err(LpError::PivotLimitExceeded { best_bound: self.objective() });
            }
            self.pivots += 1;

            // Ratio test. Basic xB changes by −dir·θ·α.
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<usize> = None;
            let mut leave_alpha = 0.0f64;
            for i in 0..self.rows {
                let alpha = self.tab[i * self.cols + q];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * alpha;
                let limit = if rate < 0.0 {
                    if self.lo[b].is_finite() {
                        ((self.value[b] - self.lo[b]) / -rate).max(0.0)
                    } else {
                        continue;
                    }
                } else if self.hi[b].is_finite() {
                    ((self.hi[b] - self.value[b]) / rate).max(0.0)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < theta,
                    Some(cur) => {
                        if limit < theta - 1e-12 {
                            true
                        } else if limit <= theta + 1e-12 {
                            if self.bland {
                                b < self.basis[cur]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = theta.min(limit);
                    leave = Some(i);
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(PhaseEnd::Unbounded);
            }

            if theta <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > DEGENERACY_SWITCH {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }

            // Move values.
            if theta > 0.0 {
                self.value[q] += dir * theta;
                for i in 0..self.rows {
                    let alpha = self.tab[i * self.cols + q];
                    if alpha != 0.0 {
                        let b = self.basis[i];
                        self.value[b] -= dir * theta * alpha;
                    }
                }
            }

            match leave {
                None => {
                    // Bound flip.
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                    self.value[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(p) => {
                    let b = self.basis[p];
                    let alpha = self.tab[p * self.cols + q];
                    let rate = -dir * alpha;
                    if rate < 0.0 {
                        self.status[b] = Status::AtLower;
                        self.value[b] = self.lo[b];
                    } else {
                        self.status[b] = Status::AtUpper;
                        self.value[b] = self.hi[b];
                    }
                    self.pivot(p, q);
                }
            }
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let cols = self.cols;
        let piv = self.tab[p * cols + q];
        {
            let prow = &mut self.tab[p * cols..(p + 1) * cols];
            let inv = 1.0 / piv;
            for v in prow.iter_mut() {
                *v *= inv;
            }
            prow[q] = 1.0;
        }
        let (before, rest) = self.tab.split_at_mut(p * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for r in before.chunks_exact_mut(cols).chain(after.chunks_exact_mut(cols)) {
            let f = r[q];
            if f != 0.0 {
                for (v, &pv) in r.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                r[q] = 0.0;
            }
        }
        let f = self.reduced[q];
        if f != 0.0 {
            for (d, &pv) in self.reduced.iter_mut().zip(prow.iter()) {
                *d -= f * pv;
            }
            self.reduced[q] = 0.0;
        }
        self.basis[p] = q;
        self.status[q] = Status::Basic;
    }

    /// Pivots basic artificials out wherever a usable column exists.
    fn expel_artificials(&mut self) {
        for i in 0..self.rows {
            if self.basis[i] < self.first_artificial {
                continue;
            }
            let r = self.row(i);
            let mut best: Option<usize> = None;
            let mut best_abs = 1e-7;
            for j in 0..self.first_artificial {
                if self.status[j] != Status::Basic && r[j].abs() > best_abs {
                    best_abs = r[j].abs();
                    best = Some(j);
                }
            }
            if let Some(q) = best {
                let b = self.basis[i];
                self.status[b] = Status::AtLower;
                self.value[b] = 0.0;
                self.pivot(i, q);
            }
        }
    }
}

/// Solves `problem` with at most `pivot_limit` pivots (bound flips included).
pub fn solve_lp(problem: &LpProblem, pivot_limit: usize) -> Result<LpOutcome, LpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let sign = match problem.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let costs: Vec<f64> = problem.objective.iter().map(|c| sign * c).collect();
    let cmax = costs.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let original_rhs: Vec<f64> = problem.constraints.iter().map(|r| r.rhs).collect();

    let mut t = Tableau::build(problem, &costs, pivot_limit);
    let phase2_cost = std::mem::take(&mut t.cost);

    if t.first_artificial < t.cols {
        let mut c1 = vec![0.0; t.cols];
        for c in &mut c1[t.first_artificial..] {
            *c = 1.0;
        }
        t.cost = c1;
        t.recompute_reduced_costs();
        match t.iterate(OPT_TOL, true) {
            Ok(_) => {}
            Err(LpError::PivotLimitExceeded { .. }) => {
                return Err(LpError::PivotLimitExceeded { best_bound: f64::NAN })
            }
            Err(e) => return Err(e),
        }
        t.refresh_basic_values(&original_rhs);
        let infeasibility: f64 = t.value[t.first_artificial..].iter().sum();
        let scale = original_rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if infeasibility > FEAS_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        for j in t.first_artificial..t.cols {
            t.hi[j] = 0.0;
            if t.status[j] != Status::Basic {
                t.status[j] = Status::AtLower;
            }
            t.value[j] = 0.0;
        }
        t.expel_artificials();
        t.bland = false;
        t.degenerate_run = 0;
    }

    let mut c2 = phase2_cost;
    c2.resize(t.cols, 0.0);
    t.cost = c2;
    t.recompute_reduced_costs();
    match t.iterate(OPT_TOL * cmax, false) {
        Ok(PhaseEnd::Optimal) => {}
        Ok(PhaseEnd::Unbounded) => return Ok(LpOutcome::Unbounded),
        Err(LpError::PivotLimitExceeded { best_bound }) => {
            return Err(LpError::PivotLimitExceeded { best_bound: sign * best_bound })
        }
        Err(e) => return Err(e),
    }
    t.refresh_basic_values(&original_rhs);

    let mut x: Vec<f64> = t.value[..n].to_vec();
    for (j, v) in x.iter_mut().enumerate() {
        // Basic values may overshoot a bound by round-off only.
        *v = v.clamp(problem.lower[j], problem.upper[j]);
    }
    let scale = original_rhs.iter().chain(&x).fold(1.0f64, |a, b| a.max(b.abs()));
    let violation = problem.max_violation(&x);
    if violation > VERIFY_TOL * scale {
        return Err(LpError::Numerical { violation });
    }
    let duals: Vec<f64> = (0..t.rows).map(|i| -sign * t.reduced[n + i]).collect();
    let objective = problem.objective_value(&x);
    Ok(LpOutcome::Optimal(LpSolution { x, objective, duals, pivots: t.pivots }))
}
