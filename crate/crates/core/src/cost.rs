//! Delay, energy and accuracy of a decision in one slot.

use crate::mobility::uplink_rate;
use crate::scenario::Scenario;
use crate::slot::SlotState;

/// Frame-level access and knowledge granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeDecision {
    /// Accessed ES per PT; `None` is an all-zero row of `a`.
    pub access: Vec<Option<usize>>,
    /// Granularity `x_i` in `[0, 1]`.
    pub x: Vec<f64>,
}

impl LargeDecision {
    pub fn none(num_pts: usize) -> Self {
        LargeDecision { access: vec![None; num_pts], x: vec![0.0; num_pts] }
    }

    pub fn a(&self, i: usize, m: usize) -> f64 {
        if self.access[i] == Some(m) {
            1.0
        } else {
            0.0
        }
    }

    /// PTs associated with `m`, in index order.
    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.access.len()).filter(|&i| self.access[i] == Some(m)).collect()
    }

    /// Nearest-ES access with a common granularity.
    pub fn nearest(sc: &Scenario, slot: &SlotState, x: f64) -> Self {
        LargeDecision { access: (0..sc.num_pts).map(|i| Some(slot.nearest_es(sc, i))).collect(), x: vec![x; sc.num_pts] }
    }
}

/// Slot-level update fraction, shares and offloading choice.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallDecision {
    pub y: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<bool>,
}

impl SmallDecision {
    /// All-local decision with floor shares.
    pub fn local(sc: &Scenario) -> Self {
        let n = sc.num_pts;
        let eps = sc.solver.share_floor;
        SmallDecision { y: vec![0.0; n], b: vec![eps; n], f: vec![eps; n], z: vec![false; n] }
    }

    /// Uniform shares among each ES's PTs, `y = 0.5`, offloading wherever
    /// the PT has access.
    pub fn default_for(sc: &Scenario, large: &LargeDecision) -> Self {
        let mut d = SmallDecision::local(sc);
        for m in 0..sc.num_ess {
            let members = large.members(m);
            let share = 1.0 / members.len().max(1) as f64;
            for i in members {
                d.b[i] = share;
                d.f[i] = share;
                d.y[i] = 0.5;
                d.z[i] = true;
            }
        }
        d
    }
}

/// Violations of the per-ES share budgets, `Σ a·b ≤ 1` and `Σ a·f ≤ 1`.
pub fn capacity_excess(sc: &Scenario, large: &LargeDecision, small: &SmallDecision) -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..sc.num_ess {
        let (mut sb, mut sf) = (0.0, 0.0);
        for i in large.members(m) {
            sb += small.b[i];
            sf += small.f[i];
        }
        worst = worst.max(sb - 1.0).max(sf - 1.0);
    }
    worst
}

/// Frame placement costs for one PT, charged from the frame-start shares.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlacementCosts {
    pub t_dl: f64,
    pub t_pl: f64,
    pub e_dl: f64,
    pub e_pl: f64,
}

impl PlacementCosts {
    pub fn delay(&self) -> f64 {
        self.t_dl + self.t_pl
    }

    pub fn energy(&self) -> f64 {
        self.e_dl + self.e_pl
    }
}

/// Knowledge download and generic model placement, computed at `τ = tK`.
pub fn placement_costs(sc: &Scenario, slot: &SlotState, large: &LargeDecision, f_frame_start: &[f64]) -> Vec<PlacementCosts> {
    (0..sc.num_pts)
        .map(|i| {
            if large.access[i].is_none() {
                return PlacementCosts::default();
            }
            let bits = large.x[i] * slot.knowledge[i];
            let t_dl = bits / sc.cloud_rate;
            let t_pl = bits * sc.cycles_per_bit_es / (f_frame_start[i] * sc.cpu_es);
            PlacementCosts {
                t_dl,
                t_pl,
                e_dl: t_dl * sc.tx_power_cloud,
                e_pl: sc.kappa_es * f_frame_start[i] * sc.cpu_es.powi(3) * t_pl,
            }
        })
        .collect()
}

/// Every per-PT cost component of one slot plus the derived totals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PtCosts {
    pub placement: PlacementCosts,
    pub t_ul: f64,
    pub t_ud: f64,
    pub t_ofld: f64,
    pub t_exec: f64,
    pub e_ul: f64,
    pub e_ud: f64,
    pub e_ofld: f64,
    pub e_exec: f64,
    pub accuracy: f64,
    /// `T_i^tol(τ)` in seconds.
    pub t_tol: f64,
    /// This PT's share of `E^tol(τ)` in joules.
    pub e_tol: f64,
    /// Placement delay charged in this slot.
    pub t_place_charged: f64,
    /// Update delay charged in this slot, `z·(T^ul + T^ud)`.
    pub t_update_charged: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub pts: Vec<PtCosts>,
    /// `E^tol(τ)` in joules.
    pub e_tol: f64,
}

impl CostBreakdown {
    pub fn t_tol(&self) -> Vec<f64> {
        self.pts.iter().map(|c| c.t_tol).collect()
    }

    pub fn accuracy_sum(&self) -> f64 {
        self.pts.iter().map(|c| c.accuracy).sum()
    }
}

/// `g_edge(d) = 1 − (1 − d/(D+S))²`.
pub fn g_edge(d: f64, full: f64) -> f64 {
    let r = 1.0 - d / full;
    1.0 - r * r
}

/// Whether PT `i` actually offloads: it needs an ES to offload to.
pub fn offloads(large: &LargeDecision, small: &SmallDecision, i: usize) -> bool {
    small.z[i] && large.access[i].is_some()
}

pub fn accuracy(sc: &Scenario, slot: &SlotState, large: &LargeDecision, small: &SmallDecision) -> Vec<f64> {
    (0..sc.num_pts).map(|i| pt_accuracy(sc, slot, large, small, i)).collect()
}

fn pt_accuracy(sc: &Scenario, slot: &SlotState, large: &LargeDecision, small: &SmallDecision, i: usize) -> f64 {
    if offloads(large, small, i) {
        let d = large.x[i] * slot.knowledge[i] + small.y[i] * slot.personalized[i];
        g_edge(d, slot.knowledge[i] + slot.personalized[i])
    } else {
        sc.g_local
    }
}

/// Evaluates every component for one slot.
///
/// `placement` holds the frame's placement costs and `divisor` spreads them
/// over the slots that share them (`K` when charged once per frame, `1` when
/// charged every slot).
pub fn per_slot_totals(
    sc: &Scenario,
    slot: &SlotState,
    large: &LargeDecision,
    small: &SmallDecision,
    placement: &[PlacementCosts],
    divisor: f64,
) -> CostBreakdown {
    let mut pts = Vec::with_capacity(sc.num_pts);
    let mut e_tol = 0.0;
    for i in 0..sc.num_pts {
        let mut c = PtCosts { placement: placement[i], ..Default::default() };
        let lambda = slot.task[i];
        let z = offloads(large, small, i);
        if let Some(m) = large.access[i] {
            let r = uplink_rate(sc, &slot.channel(sc, i, m), true, small.b[i]);
            let up_bits = small.y[i] * slot.personalized[i];
            let fcpu = small.f[i] * sc.cpu_es;
            c.t_ul = if up_bits > 0.0 { up_bits / r } else { 0.0 };
            c.e_ul = c.t_ul * sc.tx_power_pt;
            c.t_ud = up_bits * sc.cycles_per_bit_es / fcpu;
            c.e_ud = sc.kappa_es * small.f[i] * sc.cpu_es.powi(3) * c.t_ud;
            c.t_ofld = lambda / r;
            c.e_ofld = c.t_ofld * sc.tx_power_pt;
            if z {
                c.t_exec = lambda * sc.cycles_per_bit_es / fcpu;
                c.e_exec = sc.kappa_es * sc.cpu_es.powi(2) * lambda * sc.cycles_per_bit_es;
            }
        }
        if !z {
            c.t_exec = lambda * sc.cycles_per_bit_pt / sc.cpu_pt;
            c.e_exec = sc.kappa_pt * sc.cpu_pt.powi(2) * lambda * sc.cycles_per_bit_pt;
        }
        c.accuracy = pt_accuracy(sc, slot, large, small, i);
        let zf = if z { 1.0 } else { 0.0 };
        c.t_place_charged = c.placement.delay() / divisor;
        c.t_update_charged = zf * (c.t_ul + c.t_ud);
        c.t_tol = c.t_place_charged + zf * (c.t_ul + c.t_ud + c.t_ofld) + c.t_exec;
        c.e_tol = c.placement.energy() / divisor + zf * (c.e_ul + c.e_ud + c.e_ofld) + c.e_exec;
        e_tol += c.e_tol;
        pts.push(c);
    }
    CostBreakdown { pts, e_tol }
}
