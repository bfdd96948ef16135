//! Large-timescale solver: piecewise McCormick envelopes over `u = a·x`.
//!
//! With the small decision fixed, a PT that offloads (`z = 1`) must access
//! exactly one ES and costs
//!
//! ```text
//! Σ_m a_m β_m + α·x + φ(x),   φ(x) = V(c0 − q·x)² − V,
//! ```
//!
//! where `α` is the placement cost per unit of `x`, `β_m` the upload and
//! offload cost through ES `m`, and `φ` the accuracy penalty. A local PT
//! gains nothing from placement and is left without access and `x = 0`.
//!
//! The solver relaxes `a` to `ã ∈ [0, 1]`, linearizes `u_m = ã_m·x` with
//! McCormick envelopes on each of `N` partitions of `x`, models the convex
//! `φ` by tangent cuts, contracts the `ã` bounds of every partition with a
//! pair of LPs (pruning partitions that cannot beat the incumbent), solves
//! the disjunctive hull as a mixed-binary LP and rounds `ã` row-wise.

use crate::bcd::{PlacementCharge, SlotModel};
use crate::cost::{LargeDecision, SmallDecision};
use crate::queues::{QueuePair, SlotBudgets};
use crate::scenario::{PmeMode, Scenario};
use crate::slot::SlotState;
use std::time::{Duration, Instant};
use taco_lp::{solve_lp, solve_mblp, LpError, LpOutcome, LpProblem, MbLpOutcome, MbLpProblem, Relation, Sense};

/// Rows whose largest `ã` falls below this get no access.
pub const ROUNDING_THRESHOLD: f64 = 0.1;

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

/// One envelope inequality `u ≥ ca·a + cx·x + c0` (or `≤` when `upper`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCormickCut {
    pub upper: bool,
    pub ca: f64,
    pub cx: f64,
    pub c0: f64,
}

impl McCormickCut {
    pub fn rhs(&self, a: f64, x: f64) -> f64 {
        self.ca * a + self.cx * x + self.c0
    }

    pub fn holds(&self, a: f64, x: f64, u: f64, tol: f64) -> bool {
        let r = self.rhs(a, x);
        if self.upper {
            u <= r + tol
        } else {
            u >= r - tol
        }
    }
}

/// The four McCormick inequalities of `u = a·x` on `[aL, aU] × [xL, xU]`.
pub fn mccormick_envelope(a_lo: f64, a_hi: f64, x_lo: f64, x_hi: f64) -> [McCormickCut; 4] {
    [
        McCormickCut { upper: false, ca: x_lo, cx: a_lo, c0: -a_lo * x_lo },
        McCormickCut { upper: false, ca: x_hi, cx: a_hi, c0: -a_hi * x_hi },
        McCormickCut { upper: true, ca: x_lo, cx: a_hi, c0: -a_hi * x_lo },
        McCormickCut { upper: true, ca: x_hi, cx: a_lo, c0: -a_lo * x_hi },
    ]
}

/// Range of `u` the envelope allows at `(a, x)`.
pub fn envelope_range(cuts: &[McCormickCut; 4], a: f64, x: f64) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in cuts {
        if c.upper {
            hi = hi.min(c.rhs(a, x));
        } else {
            lo = lo.max(c.rhs(a, x));
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// P4 model
// ---------------------------------------------------------------------------

/// P4 with the small decision fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct P4Model {
    pub num_pts: usize,
    pub num_ess: usize,
    /// Offloading PTs, which must access one ES.
    pub must: Vec<bool>,
    pub alpha: Vec<f64>,
    /// `β[i][m]`; zero for local PTs.
    pub beta: Vec<Vec<f64>>,
    /// `(c0, q)` of the accuracy penalty.
    pub acc: Vec<(f64, f64)>,
    pub v: f64,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub constant: f64,
    /// Objective scale used to condition the LPs.
    pub scale: f64,
}

impl P4Model {
    pub fn phi(&self, i: usize, x: f64) -> f64 {
        let (c0, q) = self.acc[i];
        self.v * (c0 - q * x).powi(2) - self.v
    }

    pub fn phi_slope(&self, i: usize, x: f64) -> f64 {
        let (c0, q) = self.acc[i];
        -2.0 * self.v * q * (c0 - q * x)
    }

    /// Minimizer of `α x + φ(x)` on `[lo, hi]`.
    pub fn best_x(&self, i: usize, lo: f64, hi: f64) -> f64 {
        if !self.must[i] {
            return lo;
        }
        let (c0, q) = self.acc[i];
        if self.v <= 0.0 || q <= 0.0 {
            return if self.alpha[i] > 0.0 { lo } else { hi };
        }
        ((2.0 * self.v * q * c0 - self.alpha[i]) / (2.0 * self.v * q * q)).clamp(lo, hi)
    }

    /// Contribution of PT `i`; infinite when an offloading PT has no access.
    pub fn pt_objective(&self, i: usize, access: Option<usize>, x: f64) -> f64 {
        match (access, self.must[i]) {
            (None, true) => f64::INFINITY,
            (None, false) => 0.0,
            (Some(m), true) => self.beta[i][m] + self.alpha[i] * x + self.phi(i, x),
            (Some(_), false) => self.alpha[i] * x,
        }
    }

    /// P4 objective, equal to the slot drift-plus-penalty at `(a, x)`.
    pub fn objective(&self, access: &[Option<usize>], x: &[f64]) -> f64 {
        self.constant + (0..self.num_pts).map(|i| self.pt_objective(i, access[i], x[i])).sum::<f64>()
    }

    pub fn capacity_ok(&self, access: &[Option<usize>]) -> bool {
        (0..self.num_ess).all(|m| {
            let (mut sb, mut sf) = (0.0, 0.0);
            for i in 0..self.num_pts {
                if access[i] == Some(m) {
                    sb += self.b[i];
                    sf += self.f[i];
                }
            }
            sb <= 1.0 + 1e-9 && sf <= 1.0 + 1e-9
        })
    }
}

/// Builds P4 for the slot, with placement charged as in `charge`.
pub fn build_p4(
    sc: &Scenario,
    slot: &SlotState,
    q: &QueuePair,
    budgets: &SlotBudgets,
    small: &SmallDecision,
    charge: &PlacementCharge,
) -> P4Model {
    let n = sc.num_pts;
    let mm = sc.num_ess;
    let divisor = match charge {
        PlacementCharge::Dynamic { divisor } => Some(*divisor),
        _ => None,
    };
    let ce = sc.cycles_per_bit_es;
    let kf2 = sc.kappa_es * sc.cpu_es.powi(2);
    let all_access = LargeDecision { access: vec![Some(0); n], x: vec![0.0; n] };
    let base = SlotModel::new(sc, slot, q, budgets, &all_access, PlacementCharge::None);
    let mut model = P4Model {
        num_pts: n,
        num_ess: mm,
        must: small.z.clone(),
        alpha: vec![0.0; n],
        beta: vec![vec![0.0; mm]; n],
        acc: vec![(1.0, 0.0); n],
        v: sc.solver.lyapunov_v,
        b: small.b.clone(),
        f: small.f.clone(),
        constant: base.constant,
        scale: 1.0,
    };
    for i in 0..n {
        let p = &base.pts[i];
        let (d, s) = (p.d, p.s);
        if let Some(div) = divisor {
            let t = d / sc.cloud_rate + d * ce / (small.f[i] * sc.cpu_es);
            let e = d / sc.cloud_rate * sc.tx_power_cloud + kf2 * d * ce;
            model.alpha[i] = (p.wt * t + p.we * e) / div;
        }
        if small.z[i] {
            let up = small.y[i] * s + p.lambda;
            for m in 0..mm {
                let snr = slot.channel(sc, i, m).snr;
                let r = crate::mobility::rate_from_snr(sc.bandwidth_per_es, snr, small.b[i]);
                let t = up / r + up * ce / (small.f[i] * sc.cpu_es);
                let e = sc.tx_power_pt * up / r + kf2 * up * ce;
                model.beta[i][m] = p.wt * t + p.we * e;
            }
            model.acc[i] = (1.0 - small.y[i] * s / (d + s), d / (d + s));
        } else {
            model.constant += p.wt * p.local_t + p.we * p.local_e - sc.solver.lyapunov_v * sc.g_local;
        }
    }
    let mut scale: f64 = model.v.abs();
    for i in 0..n {
        if model.must[i] {
            scale = scale.max(model.alpha[i].abs());
            for m in 0..mm {
                scale = scale.max(model.beta[i][m].abs());
            }
        }
    }
    model.scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    model
}

// ---------------------------------------------------------------------------
// LP assembly
// ---------------------------------------------------------------------------

/// Bounds of one partition of PT `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub x_lo: f64,
    pub x_hi: f64,
    pub a_lo: Vec<f64>,
    pub a_hi: Vec<f64>,
    pub alive: bool,
}

/// Partition bounds for every offloading PT.
#[derive(Debug, Clone, PartialEq)]
pub struct PmeInstance {
    pub model: P4Model,
    pub partitions: Vec<Vec<Partition>>,
    pub tangents: Vec<f64>,
    pub coupled: bool,
}

impl PmeInstance {
    pub fn new(model: P4Model, n: usize, coupled: bool) -> Self {
        let n = n.max(1);
        let partitions = (0..model.num_pts)
            .map(|_| {
                (0..n)
                    .map(|k| Partition {
                        x_lo: k as f64 / n as f64,
                        x_hi: (k + 1) as f64 / n as f64,
                        a_lo: vec![0.0; model.num_ess],
                        a_hi: vec![1.0; model.num_ess],
                        alive: true,
                    })
                    .collect()
            })
            .collect();
        let tangents = (0..=2 * n).map(|k| k as f64 / (2 * n) as f64).collect();
        PmeInstance { model, partitions, tangents, coupled }
    }

    /// Hull of the surviving partitions of PT `i`.
    fn union_bounds(&self, i: usize) -> Option<Partition> {
        let alive: Vec<&Partition> = self.partitions[i].iter().filter(|p| p.alive).collect();
        if alive.is_empty() {
            return None;
        }
        let mm = self.model.num_ess;
        Some(Partition {
            x_lo: alive.iter().map(|p| p.x_lo).fold(f64::INFINITY, f64::min),
            x_hi: alive.iter().map(|p| p.x_hi).fold(f64::NEG_INFINITY, f64::max),
            a_lo: (0..mm).map(|m| alive.iter().map(|p| p.a_lo[m]).fold(f64::INFINITY, f64::min)).collect(),
            a_hi: (0..mm).map(|m| alive.iter().map(|p| p.a_hi[m]).fold(f64::NEG_INFINITY, f64::max)).collect(),
            alive: true,
        })
    }

    fn must_pts(&self) -> Vec<usize> {
        (0..self.model.num_pts).filter(|&i| self.model.must[i]).collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    w: usize,
    a: Vec<usize>,
    u: Vec<usize>,
}

/// Adds the P4-1 variables and rows of PT `i` on one box.
fn add_block(lp: &mut LpProblem, inst: &PmeInstance, i: usize, bounds: &Partition) -> Block {
    let md = &inst.model;
    let s = md.scale;
    let x = lp.add_var(0.0, bounds.x_lo, bounds.x_hi);
    let w = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    let a: Vec<usize> = (0..md.num_ess).map(|m| lp.add_var(0.0, bounds.a_lo[m], bounds.a_hi[m])).collect();
    let u: Vec<usize> = (0..md.num_ess).map(|_| lp.add_var(0.0, 0.0, f64::INFINITY)).collect();
    for m in 0..md.num_ess {
        for c in mccormick_envelope(bounds.a_lo[m], bounds.a_hi[m], bounds.x_lo, bounds.x_hi) {
            // u − ca·a − cx·x (≥ or ≤) c0
            let rel = if c.upper { Relation::Le } else { Relation::Ge };
            lp.add_constraint(vec![(u[m], 1.0), (a[m], -c.ca), (x, -c.cx)], rel, c.c0);
        }
    }
    lp.add_constraint(a.iter().map(|&j| (j, 1.0)).collect(), Relation::Eq, 1.0);
    let mut link: Vec<(usize, f64)> = u.iter().map(|&j| (j, 1.0)).collect();
    link.push((x, -1.0));
    lp.add_constraint(link, Relation::Eq, 0.0);
    for &t in &inst.tangents {
        let (val, slope) = (md.phi(i, t), md.phi_slope(i, t));
        lp.add_constraint(vec![(w, 1.0), (x, -slope / s)], Relation::Ge, (val - slope * t) / s);
    }
    Block { w, a, u }
}

/// Scaled objective terms of one block.
fn block_objective(md: &P4Model, i: usize, blk: &Block) -> Vec<(usize, f64)> {
    let s = md.scale;
    let mut terms = vec![(blk.w, 1.0)];
    for m in 0..md.num_ess {
        terms.push((blk.a[m], md.beta[i][m] / s));
        terms.push((blk.u[m], md.alpha[i] / s));
    }
    terms
}

/// Capacity rows. Coupled: exact sums over `pts`. Decomposed: each PT's
/// usage against the room left by the other PTs' lower bounds.
fn add_capacity(lp: &mut LpProblem, inst: &PmeInstance, pts: &[usize], blocks: &[Block]) {
    let md = &inst.model;
    if inst.coupled {
        for m in 0..md.num_ess {
            lp.add_constraint(pts.iter().zip(blocks).map(|(&i, b)| (b.a[m], md.b[i])).collect(), Relation::Le, 1.0);
            lp.add_constraint(pts.iter().zip(blocks).map(|(&i, b)| (b.a[m], md.f[i])).collect(), Relation::Le, 1.0);
        }
        return;
    }
    for (&i, blk) in pts.iter().zip(blocks) {
        for m in 0..md.num_ess {
            let (mut rb, mut rf) = (1.0, 1.0);
            for j in inst.must_pts() {
                if j != i {
                    if let Some(ub) = inst.union_bounds(j) {
                        rb -= md.b[j] * ub.a_lo[m];
                        rf -= md.f[j] * ub.a_lo[m];
                    }
                }
            }
            if rb < 1.0 {
                lp.add_constraint(vec![(blk.a[m], md.b[i])], Relation::Le, rb);
            }
            if rf < 1.0 {
                lp.add_constraint(vec![(blk.a[m], md.f[i])], Relation::Le, rf);
            }
            if md.b[i] > 1.0 || md.f[i] > 1.0 {
                lp.add_constraint(vec![(blk.a[m], md.b[i].max(md.f[i]))], Relation::Le, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PmeError {
    #[error("LP failure: {0}")]
    Lp(#[from] LpError),
    #[error("no feasible access assignment")]
    NoFeasibleAccess,
    #[error("relaxation unexpectedly {0}")]
    Relaxation(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractOutcome {
    Tightened,
    Removed,
}

fn lp_min(lp: &LpProblem, limit: usize, counter: &mut usize) -> Result<Option<(Vec<f64>, f64)>, PmeError> {
    *counter += 1;
    match solve_lp(lp, limit)? {
        LpOutcome::Optimal(s) => Ok(Some((s.x, s.objective))),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(PmeError::Relaxation("unbounded")),
    }
}

/// Per-PT lower bounds of the relaxation, `L_i` (scaled units).
fn relaxed_pt_minima(inst: &PmeInstance, limit: usize, lps: &mut usize) -> Result<Vec<f64>, PmeError> {
    let md = &inst.model;
    let mut out = vec![0.0; md.num_pts];
    for i in inst.must_pts() {
        let Some(ub) = inst.union_bounds(i) else { continue };
        let mut lp = LpProblem::new(Sense::Minimize, 0);
        let blk = add_block(&mut lp, inst, i, &ub);
        add_capacity(&mut lp, inst, &[i], std::slice::from_ref(&blk));
        for (j, c) in block_objective(md, i, &blk) {
            lp.objective[j] += c;
        }
        match lp_min(&lp, limit, lps)? {
            Some((_, v)) => out[i] = v,
            None => return Err(PmeError::NoFeasibleAccess),
        }
    }
    Ok(out)
}

/// Scaled P4-1 optimum over all PTs (coupled rows when the instance is coupled).
fn relaxed_objective(inst: &PmeInstance, limit: usize, lps: &mut usize) -> Result<f64, PmeError> {
    let md = &inst.model;
    if !inst.coupled {
        return Ok(relaxed_pt_minima(inst, limit, lps)?.iter().sum());
    }
    let pts = inst.must_pts();
    if pts.is_empty() {
        return Ok(0.0);
    }
    let mut lp = LpProblem::new(Sense::Minimize, 0);
    let mut blocks = Vec::new();
    for &i in &pts {
        let ub = inst.union_bounds(i).ok_or(PmeError::NoFeasibleAccess)?;
        blocks.push(add_block(&mut lp, inst, i, &ub));
    }
    add_capacity(&mut lp, inst, &pts, &blocks);
    for (&i, blk) in pts.iter().zip(&blocks) {
        for (j, c) in block_objective(md, i, blk) {
            lp.objective[j] += c;
        }
    }
    match lp_min(&lp, limit, lps)? {
        Some((_, v)) => Ok(v),
        None => Err(PmeError::NoFeasibleAccess),
    }
}

/// Tightens `[ã^L, ã^U]` of partition `n` of PT `i` against the cut
/// `objective ≤ cut` (scaled, already net of the constant), or removes the
/// partition when nothing in it can meet the cut.
///
/// In decomposed instances `cut` applies to PT `i`'s own terms; in coupled
/// instances it applies to the sum over all offloading PTs.
pub fn contract_bounds(
    inst: &mut PmeInstance,
    i: usize,
    n: usize,
    cut: f64,
    limit: usize,
    lps: &mut usize,
) -> Result<ContractOutcome, PmeError> {
    let md = inst.model.clone();
    let part = inst.partitions[i][n].clone();
    if !part.alive {
        return Ok(ContractOutcome::Removed);
    }
    let pts: Vec<usize> = if inst.coupled { inst.must_pts() } else { vec![i] };
    let mut lp = LpProblem::new(Sense::Minimize, 0);
    let mut blocks = Vec::new();
    let mut own = 0;
    for &j in &pts {
        let bounds = if j == i {
            own = blocks.len();
            part.clone()
        } else {
            match inst.union_bounds(j) {
                Some(b) => b,
                None => return Err(PmeError::NoFeasibleAccess),
            }
        };
        blocks.push(add_block(&mut lp, inst, j, &bounds));
    }
    add_capacity(&mut lp, inst, &pts, &blocks);
    if cut.is_finite() {
        let mut row = Vec::new();
        for (&j, blk) in pts.iter().zip(&blocks) {
            row.extend(block_objective(&md, j, blk));
        }
        lp.add_constraint(row, Relation::Le, cut + 1e-7 * cut.abs().max(1.0));
    }
    let mut new_lo = part.a_lo.clone();
    let mut new_hi = part.a_hi.clone();
    for m in 0..md.num_ess {
        let var = blocks[own].a[m];
        for dir in [1.0, -1.0] {
            lp.objective.iter_mut().for_each(|c| *c = 0.0);
            lp.objective[var] = dir;
            match lp_min(&lp, limit, lps)? {
                None => {
                    inst.partitions[i][n].alive = false;
                    return Ok(ContractOutcome::Removed);
                }
                Some((_, v)) => {
                    if dir > 0.0 {
                        new_lo[m] = new_lo[m].max((v - 1e-9).max(0.0)).min(part.a_hi[m]);
                    } else {
                        new_hi[m] = new_hi[m].min((-v + 1e-9).min(1.0)).max(new_lo[m]);
                    }
                }
            }
        }
    }
    let p = &mut inst.partitions[i][n];
    p.a_lo = new_lo;
    p.a_hi = new_hi;
    Ok(ContractOutcome::Tightened)
}

/// Hull (disaggregated) formulation of the surviving partitions of `pts`.
///
/// Returns the problem and, per PT, `(x̂_n, â_mn)` variable indices so that
/// `x = Σ x̂_n` and `ã_m = Σ_n â_mn`.
#[allow(clippy::type_complexity)]
fn build_hull(inst: &PmeInstance, pts: &[usize]) -> (MbLpProblem, Vec<(Vec<usize>, Vec<Vec<usize>>)>) {
    let md = &inst.model;
    let s = md.scale;
    let mm = md.num_ess;
    let mut lp = LpProblem::new(Sense::Minimize, 0);
    let mut binaries = Vec::new();
    let mut handles = Vec::new();
    let mut cap_b: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mm];
    let mut cap_f: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mm];
    for &i in pts {
        let parts: Vec<&Partition> = inst.partitions[i].iter().filter(|p| p.alive).collect();
        let w = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        let mut xs = Vec::new();
        let mut a_all: Vec<Vec<usize>> = vec![Vec::new(); mm];
        let mut u_all: Vec<Vec<usize>> = vec![Vec::new(); mm];
        let mut ys = Vec::new();
        for p in &parts {
            let y = lp.add_var(0.0, 0.0, 1.0);
            binaries.push(y);
            ys.push(y);
            let xh = lp.add_var(0.0, 0.0, p.x_hi);
            xs.push(xh);
            lp.add_constraint(vec![(xh, 1.0), (y, -p.x_hi)], Relation::Le, 0.0);
            if p.x_lo > 0.0 {
                lp.add_constraint(vec![(xh, 1.0), (y, -p.x_lo)], Relation::Ge, 0.0);
            }
            for m in 0..mm {
                let ah = lp.add_var(md.beta[i][m] / s, 0.0, p.a_hi[m]);
                let uh = lp.add_var(md.alpha[i] / s, 0.0, f64::INFINITY);
                lp.add_constraint(vec![(ah, 1.0), (y, -p.a_hi[m])], Relation::Le, 0.0);
                if p.a_lo[m] > 0.0 {
                    lp.add_constraint(vec![(ah, 1.0), (y, -p.a_lo[m])], Relation::Ge, 0.0);
                }
                for c in mccormick_envelope(p.a_lo[m], p.a_hi[m], p.x_lo, p.x_hi) {
                    let rel = if c.upper { Relation::Le } else { Relation::Ge };
                    lp.add_constraint(vec![(uh, 1.0), (ah, -c.ca), (xh, -c.cx), (y, -c.c0)], rel, 0.0);
                }
                a_all[m].push(ah);
                u_all[m].push(uh);
                cap_b[m].push((ah, md.b[i]));
                cap_f[m].push((ah, md.f[i]));
            }
        }
        lp.add_constraint(ys.iter().map(|&y| (y, 1.0)).collect(), Relation::Eq, 1.0);
        lp.add_constraint(a_all.iter().flatten().map(|&j| (j, 1.0)).collect(), Relation::Eq, 1.0);
        let mut link: Vec<(usize, f64)> = u_all.iter().flatten().map(|&j| (j, 1.0)).collect();
        link.extend(xs.iter().map(|&j| (j, -1.0)));
        lp.add_constraint(link, Relation::Eq, 0.0);
        for &t in &inst.tangents {
            let (val, slope) = (md.phi(i, t), md.phi_slope(i, t));
            let mut row = vec![(w, 1.0)];
            row.extend(xs.iter().map(|&j| (j, -slope / s)));
            lp.add_constraint(row, Relation::Ge, (val - slope * t) / s);
        }
        // â_mn per partition, reorganized as [partition][es].
        let per_part: Vec<Vec<usize>> = (0..parts.len()).map(|k| (0..mm).map(|m| a_all[m][k]).collect()).collect();
        handles.push((xs, per_part));
    }
    if inst.coupled {
        for m in 0..mm {
            lp.add_constraint(std::mem::take(&mut cap_b[m]), Relation::Le, 1.0);
            lp.add_constraint(std::mem::take(&mut cap_f[m]), Relation::Le, 1.0);
        }
    } else if let [i] = pts {
        // Projected capacity for a single PT.
        for m in 0..mm {
            let (mut rb, mut rf) = (1.0, 1.0);
            for j in inst.must_pts() {
                if j != *i {
                    if let Some(ub) = inst.union_bounds(j) {
                        rb -= md.b[j] * ub.a_lo[m];
                        rf -= md.f[j] * ub.a_lo[m];
                    }
                }
            }
            lp.add_constraint(std::mem::take(&mut cap_b[m]), Relation::Le, rb.min(1.0));
            lp.add_constraint(std::mem::take(&mut cap_f[m]), Relation::Le, rf.min(1.0));
        }
    }
    (MbLpProblem { lp, binaries }, handles)
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LargeSolveReport {
    pub relaxed: f64,
    pub incumbent: f64,
    pub mblp: f64,
    pub mblp_optimal: bool,
    /// P4 objective of the rounded access with the MBLP granularity.
    pub rounded: f64,
    pub final_objective: f64,
    pub partitions_pruned: usize,
    pub lps: usize,
    pub contraction_iterations: usize,
    /// Rows whose relaxed access was fractional.
    pub rounding_changes: usize,
    pub coupled: bool,
    /// The heuristic incumbent beat the rounded solution.
    pub kept_incumbent: bool,
    /// Shares were rescaled to restore the ES budgets.
    pub repaired: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeOutcome {
    pub large: LargeDecision,
    /// The small decision with shares repaired and `z` cleared for PTs left
    /// without access.
    pub small: SmallDecision,
    pub report: LargeSolveReport,
}

/// Optimal `x` for a fixed access pattern.
pub fn polish_x(md: &P4Model, access: &[Option<usize>]) -> Vec<f64> {
    (0..md.num_pts).map(|i| if access[i].is_some() && md.must[i] { md.best_x(i, 0.0, 1.0) } else { 0.0 }).collect()
}

/// Rescales shares on every ES whose budget is exceeded.
pub fn repair_shares(num_ess: usize, access: &[Option<usize>], small: &mut SmallDecision) -> bool {
    let mut changed = false;
    for m in 0..num_ess {
        let members: Vec<usize> = (0..access.len()).filter(|&i| access[i] == Some(m)).collect();
        for shares in [&mut small.b, &mut small.f] {
            let sum: f64 = members.iter().map(|&i| shares[i]).sum();
            if sum > 1.0 {
                for &i in &members {
                    shares[i] /= sum;
                }
                changed = true;
            }
        }
    }
    changed
}

/// Rounds each row of `ã` to its largest entry (lowest ES on ties).
pub fn round_access(a: &[Vec<f64>]) -> Vec<Option<usize>> {
    a.iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            let mut best_v = ROUNDING_THRESHOLD;
            for (m, &v) in row.iter().enumerate() {
                if v >= best_v && best.is_none_or(|_| v > best_v) {
                    best = Some(m);
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Capacity-respecting access: PTs with the most to lose pick first, each
/// taking its cheapest ES that still has room for its shares.
pub fn greedy_access(md: &P4Model) -> Vec<Option<usize>> {
    let mut order: Vec<(f64, usize)> = (0..md.num_pts)
        .filter(|&i| md.must[i])
        .map(|i| {
            let mut c = md.beta[i].clone();
            c.sort_by(f64::total_cmp);
            let regret = if c.len() > 1 { c[1] - c[0] } else { f64::INFINITY };
            (regret, i)
        })
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut used_b = vec![0.0; md.num_ess];
    let mut used_f = vec![0.0; md.num_ess];
    let mut access = vec![None; md.num_pts];
    for (_, i) in order {
        let mut best: Option<usize> = None;
        for m in 0..md.num_ess {
            if used_b[m] + md.b[i] <= 1.0 + 1e-12
                && used_f[m] + md.f[i] <= 1.0 + 1e-12
                && best.is_none_or(|k| md.beta[i][m] < md.beta[i][k])
            {
                best = Some(m);
            }
        }
        if let Some(m) = best {
            used_b[m] += md.b[i];
            used_f[m] += md.f[i];
            access[i] = Some(m);
        }
    }
    access
}

/// Whether the coupled formulation is used for this instance size.
pub fn use_coupled(sc: &Scenario) -> bool {
    match sc.solver.pme_mode {
        PmeMode::Coupled => true,
        PmeMode::Decomposed => false,
        PmeMode::Auto => sc.num_pts * sc.num_ess <= sc.solver.coupled_max_pairs,
    }
}

/// Algorithm 1 with the small decision fixed.
///
/// `previous` is tried as a fallback incumbent when nearest-ES access
/// violates the share budgets.
#[allow(clippy::too_many_arguments)]
pub fn solve_large(
    sc: &Scenario,
    slot: &SlotState,
    q: &QueuePair,
    budgets: &SlotBudgets,
    small: &SmallDecision,
    charge: &PlacementCharge,
    previous: Option<&LargeDecision>,
) -> Result<LargeOutcome, PmeError> {
    let start = Instant::now();
    let md = build_p4(sc, slot, q, budgets, small, charge);
    let coupled = use_coupled(sc);
    let mut inst = PmeInstance::new(md.clone(), sc.solver.partitions, coupled);
    let limit = sc.solver.lp_pivot_limit;
    let mut lps = 0usize;
    let must = inst.must_pts();
    let n_pts = md.num_pts;

    // Incumbent from simple access patterns.
    let mut candidates: Vec<Vec<Option<usize>>> = Vec::new();
    candidates.push((0..n_pts).map(|i| md.must[i].then(|| slot.nearest_es(sc, i))).collect());
    candidates.push(greedy_access(&md));
    if let Some(prev) = previous {
        let acc: Vec<Option<usize>> = (0..n_pts).map(|i| if md.must[i] { prev.access[i] } else { None }).collect();
        candidates.push(acc);
    }
    let mut incumbent: Option<(Vec<Option<usize>>, Vec<f64>, f64)> = None;
    for acc in candidates {
        if !md.capacity_ok(&acc) {
            continue;
        }
        let x: Vec<f64> = (0..n_pts).map(|i| if acc[i].is_some() { 0.5 } else { 0.0 }).collect();
        let obj = md.objective(&acc, &x);
        if obj.is_finite() && incumbent.as_ref().is_none_or(|(_, _, o)| obj < *o) {
            incumbent = Some((acc, x, obj));
        }
    }
    let z_prime = incumbent.as_ref().map_or(f64::INFINITY, |c| c.2);

    let relaxed_scaled = relaxed_objective(&inst, limit, &mut lps)?;
    let relaxed = md.constant + md.scale * relaxed_scaled;

    // Bound contraction.
    let mut pruned = 0;
    let mut iterations = 0;
    let cut_total = (z_prime - md.constant) / md.scale;
    for _ in 0..sc.solver.contraction_sweeps.max(1) {
        iterations += 1;
        let minima = if coupled || !cut_total.is_finite() { Vec::new() } else { relaxed_pt_minima(&inst, limit, &mut lps)? };
        let mut changed = false;
        for &i in &must {
            let cut = if !cut_total.is_finite() {
                f64::INFINITY
            } else if coupled {
                cut_total
            } else {
                cut_total - must.iter().filter(|&&j| j != i).map(|&j| minima[j]).sum::<f64>()
            };
            for n in 0..inst.partitions[i].len() {
                if !inst.partitions[i][n].alive {
                    continue;
                }
                let before = inst.partitions[i][n].clone();
                if contract_bounds(&mut inst, i, n, cut, limit, &mut lps)? == ContractOutcome::Removed {
                    pruned += 1;
                    changed = true;
                } else if inst.partitions[i][n] != before {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    // Mixed-binary hull.
    let mut a_rel = vec![vec![0.0; md.num_ess]; n_pts];
    let mut x_rel = vec![0.0; n_pts];
    let mut mblp_scaled = 0.0;
    let mut mblp_optimal = true;
    let groups: Vec<Vec<usize>> = if coupled { vec![must.clone()] } else { must.iter().map(|&i| vec![i]).collect() };
    let mut hull_ok = true;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        if g.iter().any(|&i| inst.partitions[i].iter().all(|p| !p.alive)) {
            hull_ok = false;
            break;
        }
        let (problem, handles) = build_hull(&inst, g);
        lps += 1;
        let sol = match solve_mblp(&problem, sc.solver.mblp_node_limit)? {
            MbLpOutcome::Optimal(s) => s,
            MbLpOutcome::NodeLimit(Some(s)) => {
                mblp_optimal = false;
                s
            }
            _ => {
                hull_ok = false;
                break;
            }
        };
        lps += sol.lps.saturating_sub(1);
        mblp_scaled += sol.objective;
        for (&i, (xs, per_part)) in g.iter().zip(&handles) {
            x_rel[i] = xs.iter().map(|&j| sol.x[j]).sum::<f64>().clamp(0.0, 1.0);
            for part in per_part {
                for (m, &j) in part.iter().enumerate() {
                    a_rel[i][m] += sol.x[j];
                }
            }
        }
    }
    let mblp = if hull_ok { md.constant + md.scale * mblp_scaled } else { f64::INFINITY };

    // Rounding, polishing and the incumbent guard.
    let (access_r, rounded, rounding_changes) = if hull_ok {
        let acc = round_access(&a_rel);
        let changes = must.iter().filter(|&&i| a_rel[i].iter().cloned().fold(0.0, f64::max) < 1.0 - 1e-6).count();
        (Some(acc.clone()), md.objective(&acc, &x_rel), changes)
    } else {
        (None, f64::INFINITY, 0)
    };

    let mut best: Option<(Vec<Option<usize>>, Vec<f64>, SmallDecision, f64, bool, bool)> = None;
    let mut consider = |acc: Vec<Option<usize>>, from_incumbent: bool| {
        let mut sm = small.clone();
        for i in 0..n_pts {
            if acc[i].is_none() {
                sm.z[i] = false;
            }
        }
        let repaired = repair_shares(md.num_ess, &acc, &mut sm);
        let model = if repaired { build_p4(sc, slot, q, budgets, &sm, charge) } else { md.clone() };
        let x = if sc.solver.placement_enabled { polish_x(&model, &acc) } else { vec![0.0; n_pts] };
        let obj = if sm.z == small.z {
            model.objective(&acc, &x)
        } else {
            // Some offloading PT lost its access; evaluate the full slot.
            let large = LargeDecision { access: acc.clone(), x: x.clone() };
            let sm_model = SlotModel::new(sc, slot, q, budgets, &large, charge.clone());
            sm_model.objective(&sm)
        };
        if best.as_ref().is_none_or(|b| obj < b.3 - 1e-12 * b.3.abs().max(1.0)) {
            best = Some((acc, x, sm, obj, from_incumbent, repaired));
        }
    };
    // The incumbent goes first so that ties keep nearest-ES access.
    if let Some((acc, _, _)) = &incumbent {
        consider(acc.clone(), true);
    }
    if let Some(acc) = access_r {
        consider(acc, false);
    }
    let Some((access, x, small_out, final_objective, kept_incumbent, repaired)) = best else {
        return Err(PmeError::NoFeasibleAccess);
    };
    let report = LargeSolveReport {
        relaxed,
        incumbent: z_prime,
        mblp,
        mblp_optimal,
        rounded,
        final_objective,
        partitions_pruned: pruned,
        lps,
        contraction_iterations: iterations,
        rounding_changes,
        coupled,
        kept_incumbent,
        repaired,
        elapsed: start.elapsed(),
    };
    Ok(LargeOutcome { large: LargeDecision { access, x }, small: small_out, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot::draw_slot;

    #[test]
    fn envelope_tight_on_edges() {
        let cuts = mccormick_envelope(0.0, 1.0, 0.0, 1.0);
        let (lo, hi) = envelope_range(&cuts, 1.0, 0.5);
        assert_eq!((lo, hi), (0.5, 0.5));
        let (lo, hi) = envelope_range(&cuts, 0.5, 0.5);
        assert_eq!((lo, hi), (0.0, 0.5));
        let cuts = mccormick_envelope(0.0, 1.0, 0.3, 0.3);
        for a in [0.0, 0.2, 0.7, 1.0] {
            let (lo, hi) = envelope_range(&cuts, a, 0.3);
            assert!((lo - a * 0.3).abs() < 1e-15 && (hi - a * 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn round_rows() {
        let acc = round_access(&[vec![0.4, 0.6], vec![0.5, 0.5], vec![0.05, 0.02]]);
        assert_eq!(acc, vec![Some(1), Some(0), None]);
    }

    fn tiny(seed: u64, n: usize, m: usize) -> (Scenario, SlotState, QueuePair, SlotBudgets) {
        let mut sc = Scenario::desk().with_seed(seed);
        sc.num_pts = n;
        sc.num_ess = m;
        sc.es_positions = crate::scenario::grid_layout(m, sc.area_side);
        sc.refresh_budgets();
        let slot = draw_slot(&sc, None);
        let q = QueuePair { h: vec![800.0; n], e: 5.0 };
        let b = SlotBudgets::from_scenario(&sc);
        (sc, slot, q, b)
    }

    #[test]
    fn p4_objective_matches_slot_objective() {
        let (sc, slot, q, budgets) = tiny(3, 4, 2);
        let large = LargeDecision { access: vec![Some(0), Some(1), Some(1), None], x: vec![0.3, 0.8, 0.1, 0.0] };
        let mut small = SmallDecision::default_for(&sc, &large);
        small.z[2] = false;
        let charge = PlacementCharge::Dynamic { divisor: 10.0 };
        let md = build_p4(&sc, &slot, &q, &budgets, &small, &charge);
        let direct = SlotModel::new(&sc, &slot, &q, &budgets, &large, charge).objective(&small);
        let p4 = md.objective(&large.access, &large.x);
        assert!((direct - p4).abs() <= 1e-9 * direct.abs(), "{direct} {p4}");
    }

    #[test]
    fn vacuous_cut_keeps_bounds() {
        let (sc, slot, q, budgets) = tiny(1, 1, 1);
        let large = LargeDecision::nearest(&sc, &slot, 0.5);
        let small = SmallDecision::default_for(&sc, &large);
        let md = build_p4(&sc, &slot, &q, &budgets, &small, &PlacementCharge::Dynamic { divisor: 10.0 });
        let mut inst = PmeInstance::new(md, 4, false);
        let mut lps = 0;
        // With one ES and mandatory access, ã is pinned to 1 regardless of the cut.
        assert_eq!(contract_bounds(&mut inst, 0, 2, f64::INFINITY, 10_000, &mut lps).unwrap(), ContractOutcome::Tightened);
        assert_eq!(inst.partitions[0][2].a_lo, vec![1.0 - 1e-9]);
        assert_eq!(contract_bounds(&mut inst, 0, 2, -1e30, 10_000, &mut lps).unwrap(), ContractOutcome::Removed);
    }

    #[test]
    fn single_pt_single_es_matches_grid() {
        for seed in 0..5 {
            let (sc, slot, q, budgets) = tiny(seed, 1, 1);
            let large = LargeDecision::nearest(&sc, &slot, 0.5);
            let small = SmallDecision::default_for(&sc, &large);
            let charge = PlacementCharge::Dynamic { divisor: 10.0 };
            let out = solve_large(&sc, &slot, &q, &budgets, &small, &charge, None).unwrap();
            assert_eq!(out.large.access, vec![Some(0)]);
            let md = build_p4(&sc, &slot, &q, &budgets, &small, &charge);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=1000 {
                let x = k as f64 / 1000.0;
                let v = md.objective(&[Some(0)], &[x]);
                if v < best.0 {
                    best = (v, x);
                }
            }
            assert!((out.large.x[0] - best.1).abs() <= 1e-2, "{} vs {}", out.large.x[0], best.1);
            let r = &out.report;
            assert!(r.relaxed <= r.mblp + 1e-6 * r.mblp.abs().max(1.0));
            assert!(r.mblp <= r.rounded + 1e-6 * r.rounded.abs().max(1.0), "{r:?}");
        }
    }

    #[test]
    fn zero_weights_return_feasible_point() {
        let (mut sc, slot, _, budgets) = tiny(2, 2, 2);
        sc.solver.lyapunov_v = 0.0;
        let q = QueuePair::zero(2);
        let large = LargeDecision::nearest(&sc, &slot, 0.5);
        let small = SmallDecision::default_for(&sc, &large);
        let out = solve_large(&sc, &slot, &q, &budgets, &small, &PlacementCharge::Dynamic { divisor: 10.0 }, None).unwrap();
        assert!(out.report.final_objective.abs() < 1e-9);
        assert!(out.large.access.iter().all(|a| a.is_some()));
    }

    #[test]
    #[ignore]
    fn timing_desk() {
        let sc = Scenario::desk();
        let slot = draw_slot(&sc, None);
        let q = QueuePair { h: vec![800.0; sc.num_pts], e: 5.0 };
        let budgets = SlotBudgets::from_scenario(&sc);
        let large = LargeDecision::nearest(&sc, &slot, 0.5);
        let small = SmallDecision::default_for(&sc, &large);
        let t = std::time::Instant::now();
        let out = solve_large(&sc, &slot, &q, &budgets, &small, &PlacementCharge::Dynamic { divisor: 10.0 }, None).unwrap();
        eprintln!("{:?} {:?}", t.elapsed(), out.report);
    }
}
