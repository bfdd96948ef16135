//! Small-timescale solver: block coordinate descent over `y`, `b`, `f`, `z`.
//!
//! [`SlotModel`] holds every quantity of one slot's drift-plus-penalty that
//! does not change while the small decision moves, so the objective and its
//! derivatives cost `O(I)` per evaluation. Each block is minimized exactly:
//! `y` in closed form, `b` by a KKT multiplier search per ES, `f` by the
//! square-root rule per ES, `z` by the sign of its linear coefficient.

use crate::cost::{g_edge, LargeDecision, PlacementCosts, SmallDecision};
use crate::mobility::rate_from_snr;
use crate::queues::{QueuePair, SlotBudgets};
use crate::rng::{stream_rng, Stream};
use crate::scenario::{Scenario, ZRounding};
use crate::slot::SlotState;
use rand::Rng;
use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

/// How frame placement costs enter the slot objective.
#[derive(Debug, Clone, PartialEq)]
pub enum PlacementCharge {
    /// Nothing is placed.
    None,
    /// Placement is decided in this slot, so its delay depends on this
    /// slot's CPU share; the cost is divided by `divisor`.
    Dynamic { divisor: f64 },
    /// Placement was paid at frame start; this slot carries a fixed part.
    Fixed { costs: Vec<PlacementCosts>, divisor: f64 },
}

/// Per-PT constants of the slot objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PtTerms {
    pub access: Option<usize>,
    /// Full-band SNR to the accessed ES.
    pub snr: f64,
    pub s: f64,
    pub lambda: f64,
    pub d: f64,
    /// `H_i / delay_unit`.
    pub wt: f64,
    /// `E / energy_unit`.
    pub we: f64,
    pub local_t: f64,
    pub local_e: f64,
}

/// One slot's drift-plus-penalty as a function of the small decision (and
/// of `x` for single-timescale policies).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotModel {
    pub pts: Vec<PtTerms>,
    pub x: Vec<f64>,
    pub charge: PlacementCharge,
    pub v: f64,
    pub g_local: f64,
    /// `−Σ H_i b_i − E b_E`.
    pub constant: f64,
    pub num_ess: usize,
    bandwidth: f64,
    cpu_es: f64,
    ce: f64,
    kappa_f2: f64,
    p_pt: f64,
    p_cloud: f64,
    cloud_rate: f64,
    floor: f64,
    idle_floor: f64,
}

impl SlotModel {
    pub fn new(
        sc: &Scenario,
        slot: &SlotState,
        q: &QueuePair,
        budgets: &SlotBudgets,
        large: &LargeDecision,
        charge: PlacementCharge,
    ) -> SlotModel {
        let pts = (0..sc.num_pts)
            .map(|i| {
                let lambda = slot.task[i];
                PtTerms {
                    access: large.access[i],
                    snr: large.access[i].map_or(0.0, |m| slot.channel(sc, i, m).snr),
                    s: slot.personalized[i],
                    lambda,
                    d: slot.knowledge[i],
                    wt: q.h[i] / sc.delay_unit,
                    we: q.e / sc.energy_unit,
                    local_t: lambda * sc.cycles_per_bit_pt / sc.cpu_pt,
                    local_e: sc.kappa_pt * sc.cpu_pt.powi(2) * lambda * sc.cycles_per_bit_pt,
                }
            })
            .collect();
        let constant = -q.h.iter().zip(&budgets.t).map(|(h, b)| h * b).sum::<f64>() - q.e * budgets.e;
        SlotModel {
            pts,
            x: large.x.clone(),
            charge,
            v: sc.solver.lyapunov_v,
            g_local: sc.g_local,
            constant,
            num_ess: sc.num_ess,
            bandwidth: sc.bandwidth_per_es,
            cpu_es: sc.cpu_es,
            ce: sc.cycles_per_bit_es,
            kappa_f2: sc.kappa_es * sc.cpu_es.powi(2),
            p_pt: sc.tx_power_pt,
            p_cloud: sc.tx_power_cloud,
            cloud_rate: sc.cloud_rate,
            floor: sc.member_floor(),
            idle_floor: sc.solver.share_floor,
        }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.pts.len()).filter(|&i| self.pts[i].access == Some(m)).collect()
    }

    pub fn rate(&self, i: usize, b: f64) -> f64 {
        rate_from_snr(self.bandwidth, self.pts[i].snr, b)
    }

    /// Placement delay and energy charged in this slot (before weighting).
    fn placement(&self, i: usize, x: f64, f: f64) -> (f64, f64) {
        let p = &self.pts[i];
        if p.access.is_none() {
            return (0.0, 0.0);
        }
        match &self.charge {
            PlacementCharge::None => (0.0, 0.0),
            PlacementCharge::Dynamic { divisor } => {
                let bits = x * p.d;
                let t = bits / self.cloud_rate + bits * self.ce / (f * self.cpu_es);
                let e = bits / self.cloud_rate * self.p_cloud + self.kappa_f2 * bits * self.ce;
                (t / divisor, e / divisor)
            }
            PlacementCharge::Fixed { costs, divisor } => (costs[i].delay() / divisor, costs[i].energy() / divisor),
        }
    }

    /// Edge-branch delay, energy and accuracy of PT `i`.
    fn edge_terms(&self, i: usize, x: f64, y: f64, b: f64, f: f64) -> (f64, f64, f64) {
        let p = &self.pts[i];
        let r = self.rate(i, b);
        let up = y * p.s + p.lambda;
        let t = up / r + up * self.ce / (f * self.cpu_es);
        let e = self.p_pt * up / r + self.kappa_f2 * up * self.ce;
        (t, e, g_edge(x * p.d + y * p.s, p.d + p.s))
    }

    /// Contribution of PT `i` with a relaxed offloading value `z`.
    pub fn pt_cost(&self, i: usize, x: f64, y: f64, b: f64, f: f64, z: f64) -> f64 {
        let p = &self.pts[i];
        let (pt, pe) = self.placement(i, x, f);
        let local = p.wt * p.local_t + p.we * p.local_e - self.v * self.g_local;
        if p.access.is_none() {
            return p.wt * pt + p.we * pe + local;
        }
        let mut c = p.wt * pt + p.we * pe + (1.0 - z) * local;
        if z != 0.0 {
            let (t, e, a) = self.edge_terms(i, x, y, b, f);
            c += z * (p.wt * t + p.we * e - self.v * a);
        }
        c
    }

    fn pt_cost_d(&self, i: usize, d: &SmallDecision) -> f64 {
        let z = if d.z[i] && self.pts[i].access.is_some() { 1.0 } else { 0.0 };
        self.pt_cost(i, self.x[i], d.y[i], d.b[i], d.f[i], z)
    }

    /// Drift-plus-penalty of a small decision.
    pub fn objective(&self, d: &SmallDecision) -> f64 {
        self.constant + (0..self.pts.len()).map(|i| self.pt_cost_d(i, d)).sum::<f64>()
    }

    /// Objective with relaxed `z` values.
    pub fn objective_relaxed(&self, y: &[f64], b: &[f64], f: &[f64], z: &[f64]) -> f64 {
        self.constant + (0..self.pts.len()).map(|i| self.pt_cost(i, self.x[i], y[i], b[i], f[i], z[i])).sum::<f64>()
    }

    /// Linear coefficient of `y_i` without the accuracy term.
    pub fn y_cost_coefficient(&self, i: usize, b: f64, f: f64) -> f64 {
        let p = &self.pts[i];
        let r = self.rate(i, b);
        p.wt * (p.s / r + p.s * self.ce / (f * self.cpu_es)) + p.we * (self.p_pt * p.s / r + self.kappa_f2 * p.s * self.ce)
    }

    /// `κ_i`: objective change when PT `i` switches from local to edge.
    pub fn kappa(&self, i: usize, y: f64, b: f64, f: f64) -> f64 {
        self.pt_cost(i, self.x[i], y, b, f, 1.0) - self.pt_cost(i, self.x[i], y, b, f, 0.0)
    }

    /// Weight on `1/r(b_i)` in the bandwidth block.
    fn b_weight(&self, i: usize, y: f64, z: bool) -> f64 {
        let p = &self.pts[i];
        if !z || p.access.is_none() {
            return 0.0;
        }
        (p.wt + p.we * self.p_pt) * (y * p.s + p.lambda)
    }

    /// Weight on `1/f_i` in the computation block.
    fn f_weight(&self, i: usize, y: f64, z: bool) -> f64 {
        let p = &self.pts[i];
        if p.access.is_none() {
            return 0.0;
        }
        let mut w = 0.0;
        if let PlacementCharge::Dynamic { divisor } = self.charge {
            w += self.x[i] * p.d * self.ce / (self.cpu_es * divisor);
        }
        if z {
            w += (y * p.s + p.lambda) * self.ce / self.cpu_es;
        }
        p.wt * w
    }

    /// Analytic partial derivatives `(∂/∂y, ∂/∂b, ∂/∂f, ∂/∂z)` for PT `i`
    /// with relaxed `z`.
    pub fn gradient(&self, i: usize, y: f64, b: f64, f: f64, z: f64) -> [f64; 4] {
        let p = &self.pts[i];
        if p.access.is_none() {
            return [0.0; 4];
        }
        let x = self.x[i];
        let full = p.d + p.s;
        let dg = 2.0 * (1.0 - (x * p.d + y * p.s) / full) / full;
        let dy = z * (self.y_cost_coefficient(i, b, f) - self.v * dg * p.s);
        let r = self.rate(i, b);
        let dr = rate_derivative(self.bandwidth, p.snr, b);
        let up = y * p.s + p.lambda;
        let db = -z * (p.wt + p.we * self.p_pt) * up * dr / (r * r);
        let mut wf = z * up * self.ce / self.cpu_es;
        if let PlacementCharge::Dynamic { divisor } = self.charge {
            wf += x * p.d * self.ce / (self.cpu_es * divisor);
        }
        let df = -p.wt * wf / (f * f);
        let dz = self.kappa(i, y, b, f);
        [dy, db, df, dz]
    }

    /// `∂/∂x_i` when placement is charged in this slot.
    pub fn x_gradient(&self, i: usize, y: f64, f: f64, z: f64) -> f64 {
        let p = &self.pts[i];
        let PlacementCharge::Dynamic { divisor } = self.charge else { return 0.0 };
        if p.access.is_none() {
            return 0.0;
        }
        let full = p.d + p.s;
        let dg = 2.0 * (1.0 - (self.x[i] * p.d + y * p.s) / full) / full;
        let dt = (p.d / self.cloud_rate + p.d * self.ce / (f * self.cpu_es)) / divisor;
        let de = (p.d / self.cloud_rate * self.p_cloud + self.kappa_f2 * p.d * self.ce) / divisor;
        p.wt * dt + p.we * de - z * self.v * dg * p.d
    }
}

/// `dr/db` for `r(b) = b·B·log2(1 + snr/b)`.
pub fn rate_derivative(bandwidth: f64, snr: f64, b: f64) -> f64 {
    let q = snr / b;
    bandwidth * (q.ln_1p() - q / (1.0 + q)) / LN_2
}

fn rate_second_derivative(bandwidth: f64, snr: f64, b: f64) -> f64 {
    let q = snr / b;
    -bandwidth * q * q / (LN_2 * b * (1.0 + q) * (1.0 + q))
}

// ---------------------------------------------------------------------------
// Block solvers
// ---------------------------------------------------------------------------

/// Closed-form minimizer of `c·y − V·g_edge(xD + yS)` on `[0, 1]`.
pub fn y_closed_form(c: f64, v: f64, x: f64, d: f64, s: f64) -> f64 {
    let full = d + s;
    let sf = s / full;
    let r0 = x * d / full;
    if v <= 0.0 || sf <= 0.0 {
        return if c >= 0.0 { 0.0 } else { 1.0 };
    }
    ((1.0 - r0 - c / (2.0 * v * sf)) / sf).clamp(0.0, 1.0)
}

pub fn solve_y(model: &SlotModel, d: &mut SmallDecision) {
    for i in 0..model.pts.len() {
        let p = &model.pts[i];
        if !(d.z[i] && p.access.is_some()) {
            d.y[i] = 0.0;
            continue;
        }
        let c = model.y_cost_coefficient(i, d.b[i], d.f[i]);
        d.y[i] = y_closed_form(c, model.v, model.x[i], p.d, p.s);
    }
}

/// `φ(b) = r'(b)/r(b)²`, the marginal decrease of `1/r`.
fn phi(bw: f64, snr: f64, b: f64) -> f64 {
    let r = rate_from_snr(bw, snr, b);
    rate_derivative(bw, snr, b) / (r * r)
}

/// Share `b ∈ [lo, 1]` with `w·φ(b) = μ`, clamped to the box.
fn share_for_multiplier(bw: f64, snr: f64, w: f64, mu: f64, lo: f64) -> f64 {
    let target = (mu / w).ln();
    let h = |u: f64| phi(bw, snr, u.exp()).ln() - target;
    let (mut a, mut c) = (lo.ln(), 0.0f64);
    if h(a) <= 0.0 {
        return lo;
    }
    if h(c) >= 0.0 {
        return 1.0;
    }
    let mut u = 0.5 * (a + c);
    for _ in 0..100 {
        let b = u.exp();
        let hv = h(u);
        if hv > 0.0 {
            a = u;
        } else {
            c = u;
        }
        if c - a < 1e-13 {
            break;
        }
        // Newton step on ln φ(e^u).
        let r = rate_from_snr(bw, snr, b);
        let r1 = rate_derivative(bw, snr, b);
        let r2 = rate_second_derivative(bw, snr, b);
        let dlnphi = b * (r2 / r1 - 2.0 * r1 / r);
        let next = u - hv / dlnphi;
        u = if dlnphi < 0.0 && next > a && next < c { next } else { 0.5 * (a + c) };
        if hv.abs() < 1e-14 {
            break;
        }
    }
    u.exp().clamp(lo, 1.0)
}

/// Per-ES bandwidth split minimizing `Σ w_i / r_i(b_i)` with `Σ b_i = 1`.
pub fn split_bandwidth(bw: f64, snr: &[f64], w: &[f64], floor: f64) -> Vec<f64> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let active: Vec<usize> = (0..n).filter(|&k| w[k] > 0.0).collect();
    if active.is_empty() {
        return vec![1.0 / n as f64; n];
    }
    let mut b = vec![floor; n];
    let avail = 1.0 - floor * (n - active.len()) as f64;
    if active.len() == 1 {
        b[active[0]] = avail;
        return b;
    }
    let total = |mu: f64| -> f64 { active.iter().map(|&k| share_for_multiplier(bw, snr[k], w[k], mu, floor)).sum() };
    // Σ b(μ) decreases in μ; bracket in log space.
    let mut lo = active.iter().map(|&k| (w[k] * phi(bw, snr[k], 1.0)).ln()).fold(f64::INFINITY, f64::min);
    let mut hi = active.iter().map(|&k| (w[k] * phi(bw, snr[k], floor)).ln()).fold(f64::NEG_INFINITY, f64::max);
    let (mut flo, mut fhi) = (total(lo.exp()) - avail, total(hi.exp()) - avail);
    let mut side = 0i32;
    for _ in 0..200 {
        if hi - lo < 1e-12 || flo.abs() < 1e-13 || fhi.abs() < 1e-13 {
            break;
        }
        // Illinois variant of regula falsi.
        let t = (lo * fhi - hi * flo) / (fhi - flo);
        let t = if t.is_finite() && t > lo && t < hi { t } else { 0.5 * (lo + hi) };
        let ft = total(t.exp()) - avail;
        if ft > 0.0 {
            lo = t;
            flo = ft;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = t;
            fhi = ft;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
    }
    let mu = if flo.abs() < fhi.abs() { lo } else { hi }.exp();
    for &k in &active {
        b[k] = share_for_multiplier(bw, snr[k], w[k], mu, floor);
    }
    let sum: f64 = active.iter().map(|&k| b[k]).sum();
    if sum > avail {
        for &k in &active {
            b[k] *= avail / sum;
        }
    }
    b
}

/// Square-root rule `f_i = √w_i / Σ √w_j` with floor shares.
pub fn split_compute(w: &[f64], floor: f64) -> Vec<f64> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let mut fixed = vec![false; n];
    for k in 0..n {
        fixed[k] = !(w[k] > 0.0);
    }
    if fixed.iter().all(|&f| f) {
        return vec![1.0 / n as f64; n];
    }
    let mut f = vec![floor; n];
    loop {
        let avail = 1.0 - floor * fixed.iter().filter(|&&c| c).count() as f64;
        let root: f64 = (0..n).filter(|&k| !fixed[k]).map(|k| w[k].sqrt()).sum();
        let mut changed = false;
        for k in 0..n {
            if !fixed[k] {
                f[k] = avail * w[k].sqrt() / root;
                if f[k] < floor {
                    fixed[k] = true;
                    f[k] = floor;
                    changed = true;
                }
            }
        }
        if !changed {
            return f;
        }
    }
}

pub fn solve_b(model: &SlotModel, d: &mut SmallDecision) {
    for m in 0..model.num_ess {
        let members = model.members(m);
        if members.is_empty() {
            continue;
        }
        let w: Vec<f64> = members.iter().map(|&i| model.b_weight(i, d.y[i], d.z[i])).collect();
        let snr: Vec<f64> = members.iter().map(|&i| model.pts[i].snr).collect();
        let b = split_bandwidth(model.bandwidth, &snr, &w, model.floor);
        for (k, &i) in members.iter().enumerate() {
            d.b[i] = b[k];
        }
    }
}

pub fn solve_f(model: &SlotModel, d: &mut SmallDecision) {
    for m in 0..model.num_ess {
        let members = model.members(m);
        if members.is_empty() {
            continue;
        }
        let w: Vec<f64> = members.iter().map(|&i| model.f_weight(i, d.y[i], d.z[i])).collect();
        let f = split_compute(&w, model.floor);
        for (k, &i) in members.iter().enumerate() {
            d.f[i] = f[k];
        }
    }
}

/// Relaxed minimizer of the `z` block: 1 below zero, 0 above, ½ on a tie.
pub fn relaxed_z(kappa: f64, scale: f64) -> f64 {
    if kappa.abs() <= 1e-12 * scale.max(1.0) {
        0.5
    } else if kappa < 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn solve_z<R: Rng>(model: &SlotModel, d: &mut SmallDecision, rounding: ZRounding, rng: &mut R) {
    for i in 0..model.pts.len() {
        if model.pts[i].access.is_none() {
            d.z[i] = false;
            continue;
        }
        let k = model.kappa(i, d.y[i], d.b[i], d.f[i]);
        let scale = model.pt_cost(i, model.x[i], d.y[i], d.b[i], d.f[i], 0.0).abs();
        let zr = relaxed_z(k, scale);
        d.z[i] = match rounding {
            ZRounding::Threshold => zr == 1.0,
            ZRounding::Probabilistic => rng.random_bool(zr),
        };
    }
}

/// Coordinate search of `x_i` over a uniform grid (single-timescale policies).
pub fn solve_x_grid(model: &mut SlotModel, d: &SmallDecision, points: usize) {
    for i in 0..model.pts.len() {
        if model.pts[i].access.is_none() {
            model.x[i] = 0.0;
            continue;
        }
        let z = if d.z[i] { 1.0 } else { 0.0 };
        let mut best = model.x[i];
        let mut best_c = model.pt_cost(i, best, d.y[i], d.b[i], d.f[i], z);
        for k in 0..points {
            let x = k as f64 / (points - 1) as f64;
            let c = model.pt_cost(i, x, d.y[i], d.b[i], d.f[i], z);
            if c < best_c {
                best = x;
                best_c = c;
            }
        }
        model.x[i] = best;
    }
}

// ---------------------------------------------------------------------------
// Alternation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each full cycle, starting with the initial point.
    pub trace: Vec<f64>,
    /// Largest relative spread of marginal values among interior shares.
    pub kkt_residual: f64,
    /// Offloading choices switched on by the re-entry pass.
    pub reentries: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BcdError {
    #[error("BCD objective rose from {before} to {after} in block {block} at iteration {iteration}")]
    NonMonotone { block: &'static str, iteration: usize, before: f64, after: f64 },
    #[error("non-finite objective in block {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub rounding: ZRounding,
    /// Grid size for an `x` block; `None` keeps `x` fixed.
    pub x_grid: Option<usize>,
    /// Tries switching local PTs back to offloading after convergence.
    pub reentry: bool,
    /// Forces `y = 0`.
    pub no_update: bool,
    pub rng_index: u64,
    pub seed: u64,
}

impl BcdOptions {
    pub fn from_scenario(sc: &Scenario, rng_index: u64) -> Self {
        BcdOptions {
            epsilon: sc.solver.epsilon,
            max_iters: sc.solver.max_bcd_iters,
            rounding: sc.solver.round_z,
            x_grid: None,
            reentry: true,
            no_update: false,
            rng_index,
            seed: sc.seed,
        }
    }
}

/// Makes a warm start feasible for the model's access pattern.
pub fn project_feasible(model: &SlotModel, warm: &SmallDecision) -> SmallDecision {
    let n = model.pts.len();
    let mut d = warm.clone();
    d.y.resize(n, 0.0);
    d.b.resize(n, model.floor);
    d.f.resize(n, model.floor);
    d.z.resize(n, false);
    for i in 0..n {
        d.y[i] = d.y[i].clamp(0.0, 1.0);
        if model.pts[i].access.is_none() {
            d.z[i] = false;
            d.b[i] = model.idle_floor;
            d.f[i] = model.idle_floor;
        }
    }
    for m in 0..model.num_ess {
        let members = model.members(m);
        if members.is_empty() {
            continue;
        }
        for shares in [&mut d.b, &mut d.f] {
            for &i in &members {
                shares[i] = shares[i].clamp(model.floor, 1.0);
            }
            let sum: f64 = members.iter().map(|&i| shares[i]).sum();
            if sum > 1.0 {
                // Shrink only the part above the floor so no share drops below it.
                let k = members.len() as f64;
                let room = 1.0 - k * model.floor;
                let excess = sum - k * model.floor;
                for &i in &members {
                    shares[i] = if room >= 0.0 && excess > 0.0 {
                        model.floor + (shares[i] - model.floor) * room / excess
                    } else {
                        1.0 / k
                    };
                }
            }
        }
    }
    d
}

fn converged(prev: f64, cur: f64, eps: f64) -> bool {
    (prev - cur).abs() <= eps * cur.abs().max(1.0)
}

fn kkt_residual(model: &SlotModel, d: &SmallDecision) -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..model.num_ess {
        for k in [1usize, 2] {
            let vals: Vec<f64> = model
                .members(m)
                .into_iter()
                .filter(|&i| d.z[i])
                .filter(|&i| {
                    let s = if k == 1 { d.b[i] } else { d.f[i] };
                    s > 2.0 * model.floor
                })
                .map(|i| model.gradient(i, d.y[i], d.b[i], d.f[i], 1.0)[k])
                .collect();
            if vals.len() < 2 {
                continue;
            }
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if mean != 0.0 {
                worst = worst.max((hi - lo) / mean.abs());
            }
        }
    }
    worst
}

struct Runner<'a, R: Rng> {
    model: &'a mut SlotModel,
    opts: &'a BcdOptions,
    rng: R,
    obj: f64,
    iteration: usize,
}

impl<R: Rng> Runner<'_, R> {
    /// Runs a block and keeps it unless the objective got worse.
    fn step(&mut self, block: &'static str, d: &mut SmallDecision) -> Result<(), BcdError> {
        let before = d.clone();
        let x_before = self.model.x.clone();
        match block {
            "x" => solve_x_grid(self.model, d, self.opts.x_grid.unwrap_or(2)),
            "y" => {
                if self.opts.no_update {
                    d.y.iter_mut().for_each(|y| *y = 0.0);
                } else {
                    solve_y(self.model, d)
                }
            }
            "b" => solve_b(self.model, d),
            "f" => solve_f(self.model, d),
            _ => solve_z(self.model, d, self.opts.rounding, &mut self.rng),
        }
        let after = self.model.objective(d);
        if !after.is_finite() {
            return Err(BcdError::NonFinite(block));
        }
        let tol = 1e-6 * (1.0 + self.obj.abs());
        let probabilistic = block == "z" && self.opts.rounding == ZRounding::Probabilistic;
        if after > self.obj + tol && !probabilistic {
            return Err(BcdError::NonMonotone { block, iteration: self.iteration, before: self.obj, after });
        }
        if after > self.obj && !probabilistic {
            *d = before;
            self.model.x = x_before;
        } else {
            self.obj = after;
        }
        Ok(())
    }

    fn cycle(&mut self, d: &mut SmallDecision) -> Result<(), BcdError> {
        if self.opts.x_grid.is_some() {
            self.step("x", d)?;
        }
        for block in ["y", "b", "f", "z"] {
            self.step(block, d)?;
        }
        Ok(())
    }

    fn run(&mut self, d: &mut SmallDecision, trace: &mut Vec<f64>) -> Result<bool, BcdError> {
        for _ in 0..self.opts.max_iters {
            self.iteration += 1;
            let prev = self.obj;
            self.cycle(d)?;
            trace.push(self.obj);
            if converged(prev, self.obj, self.opts.epsilon) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Algorithm-2 loop: cyclic `y → b → f → z` (preceded by `x` when
/// `opts.x_grid` is set) until the objective change is at most
/// `ε·max(1, |obj|)` or `max_iters` cycles ran.
///
/// When `opts.reentry` is set, every local PT with access is then tried with
/// `z = 1` and the cycle is rerun; the switch is kept only if it lowers the
/// objective. The returned decision always satisfies the share budgets.
pub fn solve_small(
    model: &mut SlotModel,
    warm: &SmallDecision,
    opts: &BcdOptions,
) -> Result<(SmallDecision, SolveReport), BcdError> {
    let start = Instant::now();
    let mut d = project_feasible(model, warm);
    if opts.no_update {
        d.y.iter_mut().for_each(|y| *y = 0.0);
    }
    let rng = stream_rng(opts.seed, Stream::Rounding, opts.rng_index);
    let obj = model.objective(&d);
    if !obj.is_finite() {
        return Err(BcdError::NonFinite("start"));
    }
    let mut trace = vec![obj];
    let mut runner = Runner { model, opts, rng, obj, iteration: 0 };
    let mut ok = runner.run(&mut d, &mut trace)?;

    let mut reentries = 0;
    if opts.reentry {
        for i in 0..d.z.len() {
            if d.z[i] || runner.model.pts[i].access.is_none() {
                continue;
            }
            let saved = (d.clone(), runner.model.x.clone(), runner.obj, runner.iteration);
            let mut trial = d.clone();
            trial.z[i] = true;
            let members = runner.model.members(runner.model.pts[i].access.unwrap());
            // Start the newcomer from an even share so its rate is usable.
            let even = 1.0 / members.len() as f64;
            trial.b[i] = trial.b[i].max(even);
            trial.f[i] = trial.f[i].max(even);
            if !opts.no_update {
                trial.y[i] = 0.5;
            }
            trial = project_feasible(runner.model, &trial);
            runner.obj = runner.model.objective(&trial);
            let mut t2 = Vec::new();
            let res = runner.run(&mut trial, &mut t2);
            match res {
                Ok(conv) if runner.obj < saved.2 - 1e-12 * saved.2.abs().max(1.0) => {
                    d = trial;
                    trace.push(runner.obj);
                    ok = conv;
                    reentries += 1;
                }
                _ => {
                    d = saved.0;
                    runner.model.x = saved.1;
                    runner.obj = saved.2;
                    runner.iteration = saved.3;
                }
            }
        }
    }

    let report = SolveReport {
        objective: runner.obj,
        iterations: runner.iteration,
        converged: ok,
        kkt_residual: kkt_residual(runner.model, &d),
        trace,
        reentries,
        elapsed: start.elapsed(),
    };
    Ok((d, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queues::{slot_objective, evaluate_slot};
    use crate::slot::draw_slot;

    fn instance(seed: u64) -> (Scenario, SlotState, QueuePair, SlotBudgets, LargeDecision) {
        let mut sc = Scenario::desk().with_seed(seed);
        sc.num_pts = 5;
        sc.num_ess = 2;
        sc.es_positions = crate::scenario::grid_layout(2, sc.area_side);
        sc.refresh_budgets();
        let slot = draw_slot(&sc, None);
        let q = QueuePair { h: (0..5).map(|i| 500.0 + 300.0 * i as f64).collect(), e: 20.0 };
        let budgets = SlotBudgets::from_scenario(&sc);
        let large = LargeDecision::nearest(&sc, &slot, 0.6);
        (sc, slot, q, budgets, large)
    }

    #[test]
    fn objective_matches_full_cost_evaluation() {
        let (sc, slot, q, budgets, large) = instance(4);
        let mut d = SmallDecision::default_for(&sc, &large);
        d.z[1] = false;
        d.y[2] = 0.9;
        for charge in [PlacementCharge::Dynamic { divisor: 10.0 }, PlacementCharge::Dynamic { divisor: 1.0 }] {
            let div = match charge {
                PlacementCharge::Dynamic { divisor } => divisor,
                _ => unreachable!(),
            };
            let model = SlotModel::new(&sc, &slot, &q, &budgets, &large, charge);
            let costs = evaluate_slot(&sc, &slot, &large, &d, &d.f, div);
            let full = slot_objective(&sc, &q, &costs, &budgets);
            let fast = model.objective(&d);
            assert!((full - fast).abs() <= 1e-9 * full.abs(), "{full} {fast}");
        }
    }

    #[test]
    fn sole_claimant_takes_all_bandwidth() {
        assert_eq!(split_bandwidth(5e6, &[100.0], &[3.0], 1e-6), vec![1.0]);
        let b = split_bandwidth(5e6, &[100.0, 100.0], &[3.0, 3.0], 1e-6);
        assert!((b[0] - 0.5).abs() < 1e-9 && (b[1] - 0.5).abs() < 1e-9, "{b:?}");
        let b = split_bandwidth(5e6, &[100.0, 100.0], &[0.0, 0.0], 1e-6);
        assert_eq!(b, vec![0.5, 0.5]);
    }

    #[test]
    fn sqrt_rule() {
        let f = split_compute(&[4.0, 1.0], 1e-6);
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-15 && (f[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(split_compute(&[2.0], 1e-6), vec![1.0]);
        assert_eq!(split_compute(&[1.0, 1.0], 1e-6), vec![0.5, 0.5]);
        let f = split_compute(&[1.0, 0.0, 1.0], 1e-6);
        assert_eq!(f[1], 1e-6);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn y_limits() {
        assert_eq!(y_closed_form(1.0, 0.0, 0.5, 80e6, 10e6), 0.0);
        assert_eq!(y_closed_form(1e-3, 1e12, 0.2, 80e6, 10e6), 1.0);
    }

    #[test]
    fn local_pts_get_zero_update() {
        let (sc, slot, q, budgets, large) = instance(2);
        let model = SlotModel::new(&sc, &slot, &q, &budgets, &large, PlacementCharge::Dynamic { divisor: 10.0 });
        let mut d = SmallDecision::default_for(&sc, &large);
        d.z[0] = false;
        solve_y(&model, &mut d);
        assert_eq!(d.y[0], 0.0);
    }

    #[test]
    fn z_follows_kappa_sign() {
        let (mut sc, slot, q, budgets, large) = instance(3);
        sc.g_local = 0.0;
        let model = SlotModel::new(&sc, &slot, &q, &budgets, &large, PlacementCharge::Dynamic { divisor: 10.0 });
        let mut d = SmallDecision::default_for(&sc, &large);
        let mut rng = stream_rng(0, Stream::Rounding, 0);
        solve_z(&model, &mut d, ZRounding::Threshold, &mut rng);
        for i in 0..sc.num_pts {
            let k = model.kappa(i, d.y[i], d.b[i], d.f[i]);
            assert_eq!(d.z[i], k < 0.0);
        }
        // Starving the bandwidth makes offloading dominated.
        let mut starved = d.clone();
        starved.b[0] = 1e-12;
        solve_z(&model, &mut starved, ZRounding::Threshold, &mut rng);
        assert!(!starved.z[0]);
    }

    #[test]
    fn bcd_descends_and_stays_feasible() {
        for seed in 0..10 {
            let (sc, slot, q, budgets, large) = instance(seed);
            let mut model = SlotModel::new(&sc, &slot, &q, &budgets, &large, PlacementCharge::Dynamic { divisor: 10.0 });
            let warm = SmallDecision::default_for(&sc, &large);
            let (d, rep) = solve_small(&mut model, &warm, &BcdOptions::from_scenario(&sc, 0)).unwrap();
            for w in rep.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            assert!(crate::cost::capacity_excess(&sc, &large, &d) <= 1e-12);
            assert!((model.objective(&d) - rep.objective).abs() <= 1e-9 * rep.objective.abs());
        }
    }

    #[test]
    fn projection_keeps_the_floor() {
        let (sc, slot, q, budgets, _) = instance(5);
        let large = LargeDecision { access: vec![Some(0), Some(0), Some(0), Some(1), Some(1)], x: vec![0.5; 5] };
        let model = SlotModel::new(&sc, &slot, &q, &budgets, &large, PlacementCharge::Dynamic { divisor: 10.0 });
        let floor = model.floor();
        let mut warm = SmallDecision::default_for(&sc, &large);
        warm.b = vec![0.6, 0.5, 0.1, 0.5, 0.5];
        let d = project_feasible(&model, &warm);
        assert!(d.b.iter().all(|&b| b >= floor - 1e-15), "{:?}", d.b);
        assert!((d.b[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.b[2], floor);
        assert!(d.b[0] > d.b[1] && d.b[1] > d.b[2]);
    }

    #[test]
    fn infinite_epsilon_runs_one_cycle() {
        let (sc, slot, q, budgets, large) = instance(1);
        let mut model = SlotModel::new(&sc, &slot, &q, &budgets, &large, PlacementCharge::Dynamic { divisor: 10.0 });
        let mut opts = BcdOptions::from_scenario(&sc, 0);
        opts.epsilon = f64::INFINITY;
        opts.reentry = false;
        let (_, rep) = solve_small(&mut model, &SmallDecision::default_for(&sc, &large), &opts).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn fixed_point_converges_at_once() {
        let (sc, slot, q, budgets, large) = instance(6);
        let mut model = SlotModel::new(&sc, &slot, &q, &budgets, &large, PlacementCharge::Dynamic { divisor: 10.0 });
        let mut opts = BcdOptions::from_scenario(&sc, 0);
        opts.reentry = false;
        let (d, rep) = solve_small(&mut model, &SmallDecision::default_for(&sc, &large), &opts).unwrap();
        let (d2, rep2) = solve_small(&mut model, &d, &opts).unwrap();
        assert_eq!(rep2.iterations, 1);
        assert!((rep2.objective - rep.objective).abs() <= opts.epsilon * rep.objective.abs());
        assert_eq!(d2.z, d.z);
    }
}
