//! Brute-force references for tiny instances.
//!
//! [`oracle_enumerate`] walks every decision sequence of a tiny scenario on a
//! grid, carrying the virtual queues forward exactly, and returns the sequence
//! with the smallest time-averaged drift-plus-penalty. [`p4_grid_oracle`] does
//! the same for one large-timescale problem with the small decision fixed.

use crate::cost::{capacity_excess, per_slot_totals, placement_costs, LargeDecision, SmallDecision};
use crate::pme::P4Model;
use crate::queues::{drift_plus_penalty_objective, QueuePair, SlotBudgets, UnitTotals};
use crate::scenario::Scenario;
use crate::slot::{SlotGenerator, SlotState};

/// Size limits of the enumeration.
pub const MAX_PTS: usize = 2;
pub const MAX_ESS: usize = 2;
pub const MAX_SLOTS_PER_FRAME: usize = 2;
pub const MAX_FRAMES: usize = 2;
/// Largest number of decision sequences the oracle will walk.
pub const MAX_SEQUENCES: u128 = 20_000_000;
/// Largest number of per-frame choices whose costs are tabulated.
pub const MAX_FRAME_CHOICES: u128 = 4_000_000;

/// Candidate values of every decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<bool>,
}

impl OracleGrid {
    /// `points` values per variable: `k/(points−1)` for the fractions `x`,
    /// `y` and `(k+1)/points` for the shares, so that shares stay positive.
    /// A single point gives `x = y = 1` and full shares.
    pub fn uniform(points: usize) -> Self {
        let points = points.max(1);
        let frac: Vec<f64> =
            if points == 1 { vec![1.0] } else { (0..points).map(|k| k as f64 / (points - 1) as f64).collect() };
        let share: Vec<f64> = (0..points).map(|k| (k + 1) as f64 / points as f64).collect();
        OracleGrid { x: frac.clone(), y: frac, b: share.clone(), f: share, z: vec![false, true] }
    }

    fn large_options(&self, num_ess: usize) -> usize {
        (num_ess + 1) * self.x.len()
    }

    fn small_options(&self) -> usize {
        self.y.len() * self.b.len() * self.f.len() * self.z.len()
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum OracleError {
    #[error("oracle needs I ≤ {MAX_PTS}, M ≤ {MAX_ESS}, K ≤ {MAX_SLOTS_PER_FRAME}, T ≤ {MAX_FRAMES} (got I={0}, M={1}, K={2}, T={3})")]
    TooLarge(usize, usize, usize, usize),
    #[error("{count} decision sequences exceed the oracle budget of {limit}")]
    Budget { count: u128, limit: u128 },
    #[error("no feasible decision sequence on this grid")]
    Infeasible,
    #[error("invalid scenario: {0}")]
    Scenario(#[from] crate::scenario::ScenarioError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Large decision of each frame.
    pub large: Vec<LargeDecision>,
    /// Small decision of each slot.
    pub small: Vec<SmallDecision>,
    /// Time-averaged drift-plus-penalty of the best sequence.
    pub objective: f64,
    /// Per-slot drift-plus-penalty of the best sequence.
    pub slot_objectives: Vec<f64>,
    /// `ΣΣ A_i / (T·K)` of the best sequence.
    pub accuracy_sum_mean: f64,
    /// Queues after the last slot of the best sequence.
    pub final_queues: QueuePair,
    /// Grid size times sequence length, infeasible ones included.
    pub sequences: u128,
    /// Sequences that satisfied the share budgets.
    pub feasible: u128,
}

/// Number of decision sequences the oracle would enumerate.
pub fn sequence_count(sc: &Scenario, grid: &OracleGrid) -> u128 {
    let per_frame = frame_choice_count(sc, grid);
    per_frame.saturating_pow(sc.frames as u32)
}

fn frame_choice_count(sc: &Scenario, grid: &OracleGrid) -> u128 {
    let i = sc.num_pts as u32;
    let large = (grid.large_options(sc.num_ess) as u128).saturating_pow(i);
    let small = (grid.small_options() as u128).saturating_pow(i * sc.slots_per_frame as u32);
    large.saturating_mul(small)
}

/// Decodes a per-PT mixed-radix index into a decision.
fn decode_large(grid: &OracleGrid, num_pts: usize, num_ess: usize, mut idx: usize) -> LargeDecision {
    let per = grid.large_options(num_ess);
    let mut d = LargeDecision::none(num_pts);
    for i in 0..num_pts {
        let o = idx % per;
        idx /= per;
        let (acc, xk) = (o / grid.x.len(), o % grid.x.len());
        d.access[i] = if acc == 0 { None } else { Some(acc - 1) };
        d.x[i] = grid.x[xk];
    }
    d
}

fn decode_small(grid: &OracleGrid, num_pts: usize, mut idx: usize) -> SmallDecision {
    let per = grid.small_options();
    let mut d = SmallDecision { y: vec![0.0; num_pts], b: vec![0.0; num_pts], f: vec![0.0; num_pts], z: vec![false; num_pts] };
    for i in 0..num_pts {
        let mut o = idx % per;
        idx /= per;
        d.z[i] = grid.z[o % grid.z.len()];
        o /= grid.z.len();
        d.f[i] = grid.f[o % grid.f.len()];
        o /= grid.f.len();
        d.b[i] = grid.b[o % grid.b.len()];
        o /= grid.b.len();
        d.y[i] = grid.y[o];
    }
    d
}

/// Tabulated costs of every feasible choice in one frame.
struct FrameTable {
    /// `(large index, small index per slot)`.
    choices: Vec<(usize, Vec<usize>)>,
    /// Per choice and slot: delay totals per PT, energy total, accuracy sum.
    totals: Vec<Vec<(UnitTotals, f64)>>,
}

fn tabulate_frame(sc: &Scenario, grid: &OracleGrid, slots: &[SlotState]) -> FrameTable {
    let n = sc.num_pts;
    let k = slots.len();
    let n_large = grid.large_options(sc.num_ess).pow(n as u32);
    let n_small = grid.small_options().pow(n as u32);
    let smalls: Vec<SmallDecision> = (0..n_small).map(|s| decode_small(grid, n, s)).collect();
    let mut table = FrameTable { choices: Vec::new(), totals: Vec::new() };
    for li in 0..n_large {
        let large = decode_large(grid, n, sc.num_ess, li);
        // A PT without access has no placement, so its x is irrelevant: keep
        // only the first grid value to avoid duplicate sequences.
        if (0..n).any(|i| large.access[i].is_none() && large.x[i] != grid.x[0]) {
            continue;
        }
        let ok: Vec<usize> = (0..n_small)
            .filter(|&s| {
                let d = &smalls[s];
                (0..n).all(|i| !(d.z[i] && large.access[i].is_none())) && capacity_excess(sc, &large, d) <= 1e-12
            })
            .collect();
        if ok.is_empty() {
            continue;
        }
        let mut idx = vec![0usize; k];
        'outer: loop {
            let first = &smalls[ok[idx[0]]];
            let pl = placement_costs(sc, &slots[0], &large, &first.f);
            let mut per_slot = Vec::with_capacity(k);
            for (s, slot) in slots.iter().enumerate() {
                let small = &smalls[ok[idx[s]]];
                let c = per_slot_totals(sc, slot, &large, small, &pl, sc.slots_per_frame as f64);
                per_slot.push((UnitTotals::from_costs(sc, &c), c.accuracy_sum()));
            }
            table.choices.push((li, idx.iter().map(|&j| ok[j]).collect()));
            table.totals.push(per_slot);
            // Odometer over the slots of the frame.
            for s in (0..k).rev() {
                idx[s] += 1;
                if idx[s] < ok.len() {
                    continue 'outer;
                }
                idx[s] = 0;
            }
            break;
        }
    }
    table
}

struct Search<'a> {
    tables: &'a [FrameTable],
    budgets: &'a SlotBudgets,
    v: f64,
    path: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    feasible: u128,
}

impl Search<'_> {
    fn walk(&mut self, t: usize, q: &QueuePair, sum: f64) {
        if t == self.tables.len() {
            self.feasible += 1;
            if self.best.as_ref().is_none_or(|(b, _)| sum < *b) {
                self.best = Some((sum, self.path.clone()));
            }
            return;
        }
        for c in 0..self.tables[t].choices.len() {
            let mut q2 = q.clone();
            let mut s2 = sum;
            for (u, acc) in &self.tables[t].totals[c] {
                s2 += drift_plus_penalty_objective(&q2, u, *acc, self.budgets, self.v);
                q2 = crate::queues::update_queues(&q2, u, self.budgets);
            }
            self.path.push(c);
            self.walk(t + 1, &q2, s2);
            self.path.pop();
        }
    }
}

/// Exhaustive minimizer of the time-averaged drift-plus-penalty over every
/// decision sequence on `grid`, starting from empty queues. Slots are drawn
/// exactly as in a controller run of the same scenario.
pub fn oracle_enumerate(sc: &Scenario, grid: &OracleGrid) -> Result<OracleResult, OracleError> {
    sc.validate()?;
    let (n, m, k, t) = (sc.num_pts, sc.num_ess, sc.slots_per_frame, sc.frames);
    if n > MAX_PTS || m > MAX_ESS || k > MAX_SLOTS_PER_FRAME || t > MAX_FRAMES {
        return Err(OracleError::TooLarge(n, m, k, t));
    }
    let count = sequence_count(sc, grid);
    if count > MAX_SEQUENCES {
        return Err(OracleError::Budget { count, limit: MAX_SEQUENCES });
    }
    let per_frame = frame_choice_count(sc, grid);
    if per_frame > MAX_FRAME_CHOICES {
        return Err(OracleError::Budget { count: per_frame, limit: MAX_FRAME_CHOICES });
    }
    let slots: Vec<SlotState> = SlotGenerator::new(sc).collect();
    let tables: Vec<FrameTable> = slots.chunks(k).map(|c| tabulate_frame(sc, grid, c)).collect();
    let budgets = SlotBudgets::from_scenario(sc);
    let mut search =
        Search { tables: &tables, budgets: &budgets, v: sc.solver.lyapunov_v, path: Vec::new(), best: None, feasible: 0 };
    search.walk(0, &QueuePair::zero(n), 0.0);
    let Some((_, path)) = search.best else {
        return Err(OracleError::Infeasible);
    };

    // Replay the winner for its decisions and per-slot values.
    let mut large = Vec::new();
    let mut small = Vec::new();
    let mut slot_objectives = Vec::new();
    let mut acc_total = 0.0;
    let mut q = QueuePair::zero(n);
    for (f, &c) in path.iter().enumerate() {
        let (li, ref sis) = tables[f].choices[c];
        large.push(decode_large(grid, n, m, li));
        for (s, (u, acc)) in sis.iter().zip(&tables[f].totals[c]) {
            small.push(decode_small(grid, n, *s));
            slot_objectives.push(drift_plus_penalty_objective(&q, u, *acc, &budgets, sc.solver.lyapunov_v));
            q = crate::queues::update_queues(&q, u, &budgets);
            acc_total += acc;
        }
    }
    let slots_total = slot_objectives.len() as f64;
    Ok(OracleResult {
        large,
        small,
        objective: slot_objectives.iter().sum::<f64>() / slots_total,
        slot_objectives,
        accuracy_sum_mean: acc_total / slots_total,
        final_queues: q,
        sequences: count,
        feasible: search.feasible,
    })
}

/// Best P4 value over every access pattern (respecting the share budgets)
/// with `x` on a uniform grid of `x_points` values. Returns the objective,
/// access and `x`.
pub fn p4_grid_oracle(md: &P4Model, x_points: usize) -> Option<(f64, Vec<Option<usize>>, Vec<f64>)> {
    let n = md.num_pts;
    let opts = md.num_ess + 1;
    let xs: Vec<f64> = (0..x_points.max(2)).map(|k| k as f64 / (x_points.max(2) - 1) as f64).collect();
    // x only enters each PT's own terms, so it is minimized per PT.
    let best_x = |i: usize, a: Option<usize>| -> (f64, f64) {
        xs.iter()
            .map(|&x| (md.pt_objective(i, a, x), x))
            .fold((f64::INFINITY, 0.0), |b, c| if c.0 < b.0 { c } else { b })
    };
    let mut best: Option<(f64, Vec<Option<usize>>, Vec<f64>)> = None;
    let total = opts.pow(n as u32);
    for mut idx in 0..total {
        let mut access = vec![None; n];
        for a in access.iter_mut() {
            let o = idx % opts;
            idx /= opts;
            *a = if o == 0 { None } else { Some(o - 1) };
        }
        if !md.capacity_ok(&access) {
            continue;
        }
        let mut obj = md.constant;
        let mut x = vec![0.0; n];
        for i in 0..n {
            let (v, xi) = best_x(i, access[i]);
            obj += v;
            x[i] = xi;
        }
        if obj.is_finite() && best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, access, x));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{run_policy, Policy};

    pub(crate) fn tiny(frames: usize, k: usize) -> Scenario {
        let mut sc = Scenario::desk();
        sc.num_pts = 1;
        sc.num_ess = 1;
        sc.frames = frames;
        sc.slots_per_frame = k;
        sc.es_positions = crate::scenario::grid_layout(1, sc.area_side);
        sc.refresh_budgets();
        sc
    }

    #[test]
    fn counts_match_the_grid() {
        let sc = tiny(1, 1);
        let g = OracleGrid::uniform(5);
        assert_eq!(sequence_count(&sc, &g), 5 * 5 * 5 * 5 * 2 * 2);
        let r = oracle_enumerate(&sc, &g).unwrap();
        assert_eq!(r.sequences, 2500);
        // No access: x collapses to one value and z to false, 125 share/y
        // combinations. With access: 5 x values times 250.
        assert_eq!(r.feasible, 125 + 5 * 250);
    }

    #[test]
    fn single_point_grid_is_that_policy() {
        let sc = tiny(1, 1);
        let mut g = OracleGrid::uniform(1);
        g.z = vec![true];
        let r = oracle_enumerate(&sc, &g).unwrap();
        assert_eq!(r.feasible, 1);
        let large = LargeDecision { access: vec![Some(0)], x: vec![1.0] };
        let small = SmallDecision { y: vec![1.0], b: vec![1.0], f: vec![1.0], z: vec![true] };
        let slot = crate::slot::draw_slot(&sc, None);
        let c = crate::queues::evaluate_slot(&sc, &slot, &large, &small, &small.f, 1.0);
        let u = UnitTotals::from_costs(&sc, &c);
        let want =
            drift_plus_penalty_objective(&QueuePair::zero(1), &u, c.accuracy_sum(), &SlotBudgets::from_scenario(&sc), sc.solver.lyapunov_v);
        assert_eq!(r.objective, want);
        assert_eq!(r.large[0], large);
    }

    #[test]
    fn taco_never_beats_the_single_slot_oracle() {
        for seed in 1..4 {
            let sc = tiny(1, 1).with_seed(seed);
            let r = oracle_enumerate(&sc, &OracleGrid::uniform(5)).unwrap();
            let tr = run_policy(&sc, Policy::Taco).unwrap();
            let v = sc.solver.lyapunov_v;
            assert!(tr.records[0].objective >= r.objective - 1e-9 * v);
        }
    }

    #[test]
    fn limits_are_enforced() {
        let mut sc = tiny(1, 1);
        sc.frames = 3;
        sc.refresh_budgets();
        assert!(matches!(oracle_enumerate(&sc, &OracleGrid::uniform(2)), Err(OracleError::TooLarge(..))));
        let mut sc = tiny(2, 2);
        sc.num_pts = 2;
        sc.refresh_budgets();
        match oracle_enumerate(&sc, &OracleGrid::uniform(5)) {
            Err(OracleError::Budget { count, .. }) => assert!(count > MAX_SEQUENCES),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_slots_carry_queues() {
        let sc = tiny(2, 1);
        let r = oracle_enumerate(&sc, &OracleGrid::uniform(3)).unwrap();
        assert_eq!(r.small.len(), 2);
        assert_eq!(r.large.len(), 2);
        // First slot starts from empty queues, so only accuracy counts.
        let v = sc.solver.lyapunov_v;
        assert!((r.slot_objectives[0] + v * 1.0).abs() < 1e-6 * v);
        let tr = run_policy(&sc, Policy::Taco).unwrap();
        assert_eq!(tr.records.len(), 2);
    }

    #[test]
    fn symmetric_pts_swap_cleanly() {
        // Two PTs at the same spot with the same data see the same costs, so
        // swapping their decisions leaves the objective unchanged.
        let mut sc = tiny(1, 1);
        sc.num_pts = 2;
        sc.refresh_budgets();
        let mut slot = crate::slot::draw_slot(&sc, None);
        slot.positions[1] = slot.positions[0];
        slot.fading[1] = slot.fading[0].clone();
        slot.knowledge[1] = slot.knowledge[0];
        slot.personalized[1] = slot.personalized[0];
        slot.task[1] = slot.task[0];
        let q = QueuePair { h: vec![30.0, 30.0], e: 4.0 };
        let budgets = SlotBudgets::from_scenario(&sc);
        let eval = |l: &LargeDecision, s: &SmallDecision| {
            let c = crate::queues::evaluate_slot(&sc, &slot, l, s, &s.f, 1.0);
            drift_plus_penalty_objective(&q, &UnitTotals::from_costs(&sc, &c), c.accuracy_sum(), &budgets, sc.solver.lyapunov_v)
        };
        let l = LargeDecision { access: vec![Some(0), None], x: vec![0.25, 0.0] };
        let s = SmallDecision { y: vec![0.5, 0.0], b: vec![0.6, 0.2], f: vec![0.4, 0.2], z: vec![true, false] };
        let l2 = LargeDecision { access: vec![None, Some(0)], x: vec![0.0, 0.25] };
        let s2 = SmallDecision { y: vec![0.0, 0.5], b: vec![0.2, 0.6], f: vec![0.2, 0.4], z: vec![false, true] };
        assert_eq!(eval(&l, &s), eval(&l2, &s2));
    }

    #[test]
    fn p4_oracle_respects_capacity() {
        let mut sc = tiny(1, 1);
        sc.num_pts = 2;
        sc.refresh_budgets();
        let slot = crate::slot::draw_slot(&sc, None);
        let large = LargeDecision::nearest(&sc, &slot, 0.5);
        let mut small = SmallDecision::default_for(&sc, &large);
        small.b = vec![0.7, 0.7];
        let md = crate::pme::build_p4(
            &sc,
            &slot,
            &QueuePair::zero(2),
            &SlotBudgets::from_scenario(&sc),
            &small,
            &crate::bcd::PlacementCharge::Dynamic { divisor: 1.0 },
        );
        // Both PTs must offload but cannot share the single ES: infeasible.
        assert!(p4_grid_oracle(&md, 11).is_none());
        small.b = vec![0.5, 0.5];
        let md = P4Model { b: small.b.clone(), ..md };
        let (obj, access, _) = p4_grid_oracle(&md, 11).unwrap();
        assert_eq!(access, vec![Some(0), Some(0)]);
        assert!(obj.is_finite());
    }
}
