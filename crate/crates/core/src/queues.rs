//! Virtual queues and the drift-plus-penalty bookkeeping.
//!
//! Queues, totals and budgets here are all in queue units: delay in
//! `delay_unit` seconds and energy in `energy_unit` joules (10 ms and 10 J by
//! default). The accuracy penalty is dimensionless.

use crate::cost::{per_slot_totals, placement_costs, CostBreakdown, LargeDecision, SmallDecision};
use crate::mobility::{rate_from_snr, path_gain};
use crate::scenario::Scenario;

/// Delay backlog per PT and the shared energy backlog.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuePair {
    pub h: Vec<f64>,
    pub e: f64,
}

impl QueuePair {
    pub fn zero(num_pts: usize) -> Self {
        QueuePair { h: vec![0.0; num_pts], e: 0.0 }
    }
}

/// Per-slot budgets `T_i^max/K` and `E^max/K` in queue units.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBudgets {
    pub t: Vec<f64>,
    pub e: f64,
}

impl SlotBudgets {
    pub fn from_scenario(sc: &Scenario) -> Self {
        let (t, e) = sc.slot_budgets();
        SlotBudgets { t, e }
    }
}

/// Slot totals converted to queue units.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTotals {
    pub t: Vec<f64>,
    pub e: f64,
}

impl UnitTotals {
    pub fn from_costs(sc: &Scenario, c: &CostBreakdown) -> Self {
        UnitTotals { t: c.pts.iter().map(|p| p.t_tol / sc.delay_unit).collect(), e: c.e_tol / sc.energy_unit }
    }
}

pub fn update_queues(q: &QueuePair, totals: &UnitTotals, budgets: &SlotBudgets) -> QueuePair {
    QueuePair {
        h: q.h.iter().zip(&totals.t).zip(&budgets.t).map(|((h, t), b)| (h + t - b).max(0.0)).collect(),
        e: (q.e + totals.e - budgets.e).max(0.0),
    }
}

/// `Σ H_i(T_i − T_i^max/K) + E(E − E^max/K) − V·Σ A_i`.
pub fn drift_plus_penalty_objective(
    q: &QueuePair,
    totals: &UnitTotals,
    accuracy_sum: f64,
    budgets: &SlotBudgets,
    v: f64,
) -> f64 {
    let mut obj = 0.0;
    for i in 0..q.h.len() {
        obj += q.h[i] * (totals.t[i] - budgets.t[i]);
    }
    obj + q.e * (totals.e - budgets.e) - v * accuracy_sum
}

/// Drift-plus-penalty of a cost breakdown, converting units first.
pub fn slot_objective(sc: &Scenario, q: &QueuePair, costs: &CostBreakdown, budgets: &SlotBudgets) -> f64 {
    let u = UnitTotals::from_costs(sc, costs);
    drift_plus_penalty_objective(q, &u, costs.accuracy_sum(), budgets, sc.solver.lyapunov_v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftBoundConstants {
    /// `G` with per-slot budgets `T_i^max/K`, `E^max/K` (queue units squared).
    pub g: f64,
    /// `G` with the unnormalized frame budgets, as the bound is displayed.
    pub g_literal: f64,
    /// Worst-case `T_i^tol` per PT (queue units).
    pub t_max: Vec<f64>,
    /// Worst-case `E^tol` (queue units).
    pub e_max: f64,
}

/// `½Σ(T_i^max − b_i)² + ½(E^max − b_E)²`.
pub fn drift_constant(t_max: &[f64], e_max: f64, t_budget: &[f64], e_budget: f64) -> f64 {
    let dt: f64 = t_max.iter().zip(t_budget).map(|(t, b)| (t - b).powi(2)).sum();
    0.5 * dt + 0.5 * (e_max - e_budget).powi(2)
}

/// First percentile of a unit-mean exponential, `−ln 0.99`.
pub const FADING_P1: f64 = 0.010_050_335_853_501_44;

/// Worst-case per-slot totals and the resulting `G`.
///
/// Every PT offloads with `x = y = 1`, the largest data sizes, shares
/// `b = f = 1/I`, the farthest possible ES distance and first-percentile
/// fading. Local execution is also considered in case it is costlier.
pub fn compute_g(sc: &Scenario) -> DriftBoundConstants {
    let n = sc.num_pts as f64;
    let share = 1.0 / n;
    let far = sc.area_side * std::f64::consts::SQRT_2;
    let near = sc.min_distance;
    let dist = if path_gain(sc, far) <= path_gain(sc, near) { far } else { near };
    let snr = path_gain(sc, dist) * sc.tx_power_pt * FADING_P1 / (sc.noise_psd * sc.bandwidth_per_es);
    let r = rate_from_snr(sc.bandwidth_per_es, snr, share);
    let (d, s, l) = (sc.knowledge_bits.high, sc.personalized_bits.high, sc.task_bits.high);
    let k = sc.slots_per_frame as f64;
    let fcpu = share * sc.cpu_es;
    let ce = sc.cycles_per_bit_es;

    let t_place = d / sc.cloud_rate + d * ce / fcpu;
    let t_edge = t_place / k + s / r + s * ce / fcpu + l / r + l * ce / fcpu;
    let t_local = l * sc.cycles_per_bit_pt / sc.cpu_pt;
    let e_place = d / sc.cloud_rate * sc.tx_power_cloud + sc.kappa_es * sc.cpu_es.powi(2) * d * ce;
    let e_edge = e_place / k
        + (s + l) / r * sc.tx_power_pt
        + sc.kappa_es * sc.cpu_es.powi(2) * (s + l) * ce;
    let e_local = sc.kappa_pt * sc.cpu_pt.powi(2) * l * sc.cycles_per_bit_pt;

    let t_max_pt = t_edge.max(t_local) / sc.delay_unit;
    let e_max = n * e_edge.max(e_local) / sc.energy_unit;
    let t_max = vec![t_max_pt; sc.num_pts];
    let budgets = SlotBudgets::from_scenario(sc);
    let g = drift_constant(&t_max, e_max, &budgets.t, budgets.e);
    let kf = sc.slots_per_frame as f64;
    let frame_t: Vec<f64> = budgets.t.iter().map(|b| b * kf).collect();
    let g_literal = drift_constant(&t_max, e_max, &frame_t, budgets.e * kf);
    DriftBoundConstants { g, g_literal, t_max, e_max }
}

/// Smallest slack of the squared-queue inequality over all queues:
/// `½(T − b)² + H(T − b) − ½(H'² − H²)`.
pub fn check_per_step_drift_inequality(
    q: &QueuePair,
    q_next: &QueuePair,
    totals: &UnitTotals,
    budgets: &SlotBudgets,
) -> f64 {
    let slack = |h: f64, h2: f64, t: f64, b: f64| {
        let d = t - b;
        0.5 * d * d + h * d - 0.5 * (h2 * h2 - h * h)
    };
    let mut worst = slack(q.e, q_next.e, totals.e, budgets.e);
    for i in 0..q.h.len() {
        worst = worst.min(slack(q.h[i], q_next.h[i], totals.t[i], budgets.t[i]));
    }
    worst
}

/// Slack normalized by the magnitude of the terms involved.
pub fn relative_drift_slack(q: &QueuePair, q_next: &QueuePair, totals: &UnitTotals, budgets: &SlotBudgets) -> f64 {
    let mut scale: f64 = 1.0;
    for (h, t) in q.h.iter().zip(&totals.t).chain(std::iter::once((&q.e, &totals.e))) {
        scale = scale.max((h + t).powi(2));
    }
    for b in budgets.t.iter().chain(std::iter::once(&budgets.e)) {
        scale = scale.max(b * b);
    }
    check_per_step_drift_inequality(q, q_next, totals, budgets) / scale
}

/// Placement plus slot costs in one call.
pub fn evaluate_slot(
    sc: &Scenario,
    slot: &crate::slot::SlotState,
    large: &LargeDecision,
    small: &SmallDecision,
    f_frame_start: &[f64],
    divisor: f64,
) -> CostBreakdown {
    let pl = placement_costs(sc, slot, large, f_frame_start);
    per_slot_totals(sc, slot, large, small, &pl, divisor)
}
