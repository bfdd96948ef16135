//! The online loop: frame-start alternation between the large and small
//! problems, per-slot small solves, queue updates and per-slot records.

use crate::baselines::{policy_all_local, policy_cro, policy_lot};
use crate::bcd::{solve_small, BcdOptions, PlacementCharge, SlotModel};
use crate::cost::{placement_costs, per_slot_totals, CostBreakdown, LargeDecision, PlacementCosts, SmallDecision};
use crate::pme::{solve_large, LargeSolveReport};
use crate::queues::{relative_drift_slack, slot_objective, update_queues, QueuePair, SlotBudgets, UnitTotals};
use crate::scenario::Scenario;
use crate::slot::{SlotGenerator, SlotState};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Taco,
    Lot,
    Cro,
    AllLocal,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Taco, Policy::Lot, Policy::Cro, Policy::AllLocal];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Taco => "taco",
            Policy::Lot => "lot",
            Policy::Cro => "cro",
            Policy::AllLocal => "all_local",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "taco" => Ok(Policy::Taco),
            "lot" => Ok(Policy::Lot),
            "cro" => Ok(Policy::Cro),
            "all_local" | "alllocal" | "local" => Ok(Policy::AllLocal),
            other => Err(format!("unknown policy '{other}' (expected taco, lot, cro or all_local)")),
        }
    }
}

/// Everything recorded for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub tau: usize,
    pub frame: usize,
    pub large: LargeDecision,
    pub small: SmallDecision,
    pub costs: CostBreakdown,
    /// Queues at the start of the slot.
    pub queues: QueuePair,
    /// Drift-plus-penalty of the applied decision.
    pub objective: f64,
    pub bcd_iters: usize,
    /// Alternation rounds, nonzero only in frame-start slots of TACO.
    pub alternations: usize,
    /// The solver failed and the all-local fallback was applied.
    pub fallback: bool,
    pub drift_slack: f64,
    pub pme: Option<LargeSolveReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub policy: Policy,
    pub seed: u64,
    pub num_pts: usize,
    pub slots_per_frame: usize,
    pub records: Vec<SlotRecord>,
    /// Alternation rounds per frame (TACO only).
    pub alternations: Vec<usize>,
    pub final_queues: QueuePair,
}

impl RunTrace {
    pub fn fallbacks(&self) -> usize {
        self.records.iter().filter(|r| r.fallback).count()
    }

    /// Smallest normalized drift-inequality slack seen.
    pub fn min_drift_slack(&self) -> f64 {
        self.records.iter().map(|r| r.drift_slack).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("invariant violated at slot {tau}: {what}")]
    Invariant { tau: usize, what: String },
}

/// Normalized drift slack below which a step counts as a violation.
pub const DRIFT_TOLERANCE: f64 = -1e-9;

struct FrameState {
    large: LargeDecision,
    placement: Vec<PlacementCosts>,
}

/// Frame-start decision: alternate large and small solves from each start
/// until the objective stops improving. Returns the accepted pair, its
/// objective, the rounds used, the BCD iterations and the last PME report.
#[allow(clippy::type_complexity)]
fn frame_start(
    sc: &Scenario,
    slot: &SlotState,
    q: &QueuePair,
    budgets: &SlotBudgets,
    inherited: Option<&SmallDecision>,
    previous: Option<&LargeDecision>,
) -> Result<(LargeDecision, SmallDecision, f64, usize, usize, Option<LargeSolveReport>), String> {
    let charge = PlacementCharge::Dynamic { divisor: sc.slots_per_frame as f64 };
    let default_large = LargeDecision::nearest(sc, slot, 0.5);
    let default_small = SmallDecision::default_for(sc, &default_large);
    let mut starts = Vec::new();
    if let Some(s) = inherited {
        starts.push(s.clone());
    }
    if inherited.is_none() || sc.solver.multi_start {
        starts.push(default_small);
    }
    let eps = sc.solver.alternation_epsilon;
    let mut best: Option<(LargeDecision, SmallDecision, f64, Option<LargeSolveReport>)> = None;
    let mut rounds = 0;
    let mut iters = 0;
    let mut last_err = None;
    for (k, start) in starts.into_iter().enumerate() {
        let mut small = start;
        let mut accepted: Option<(LargeDecision, SmallDecision, f64, Option<LargeSolveReport>)> = None;
        for r in 0..sc.solver.max_alternations.max(1) {
            rounds += 1;
            let prev_large = accepted.as_ref().map(|a| &a.0).or(previous);
            let out = match solve_large(sc, slot, q, budgets, &small, &charge, prev_large) {
                Ok(o) => o,
                Err(e) => {
                    last_err = Some(e.to_string());
                    break;
                }
            };
            let mut model = SlotModel::new(sc, slot, q, budgets, &out.large, charge.clone());
            let opts = BcdOptions::from_scenario(sc, (slot.tau as u64) << 8 | (k as u64) << 4 | r as u64);
            let (next, rep) = match solve_small(&mut model, &out.small, &opts) {
                Ok(v) => v,
                Err(e) => {
                    last_err = Some(e.to_string());
                    break;
                }
            };
            iters += rep.iterations;
            let obj = rep.objective;
            let prev_obj = accepted.as_ref().map_or(f64::INFINITY, |a| a.2);
            if obj >= prev_obj {
                break;
            }
            let done = (prev_obj - obj).abs() <= eps * obj.abs().max(1.0);
            small = next.clone();
            accepted = Some((out.large, next, obj, Some(out.report)));
            if done {
                break;
            }
        }
        if let Some(a) = accepted {
            if best.as_ref().is_none_or(|b| a.2 < b.2) {
                best = Some(a);
            }
        }
    }
    match best {
        Some((large, small, obj, rep)) => Ok((large, small, obj, rounds, iters, rep)),
        None => Err(last_err.unwrap_or_else(|| "no alternation round completed".into())),
    }
}

/// Runs one policy over all `T·K` slots.
pub fn run_policy(sc: &Scenario, policy: Policy) -> Result<RunTrace, RunError> {
    sc.validate()?;
    let k = sc.slots_per_frame;
    let budgets = SlotBudgets::from_scenario(sc);
    let mut q = QueuePair::zero(sc.num_pts);
    let mut records = Vec::with_capacity(sc.total_slots());
    let mut alternations = Vec::with_capacity(sc.frames);
    let mut frame: Option<FrameState> = None;
    let mut prev_small: Option<SmallDecision> = None;

    for slot in SlotGenerator::new(sc) {
        let mut fallback = false;
        let mut bcd_iters = 0;
        let mut rounds = 0;
        let mut pme = None;
        let (large, small, costs) = match policy {
            Policy::AllLocal => {
                let (large, small) = policy_all_local(sc);
                let costs = per_slot_totals(sc, &slot, &large, &small, &vec![PlacementCosts::default(); sc.num_pts], 1.0);
                (large, small, costs)
            }
            Policy::Lot | Policy::Cro => {
                let f = if policy == Policy::Lot { policy_lot } else { policy_cro };
                match f(sc, &slot, &q, &budgets, prev_small.as_ref()) {
                    Ok((large, small, rep)) => {
                        bcd_iters = rep.iterations;
                        let pl = placement_costs(sc, &slot, &large, &small.f);
                        let costs = per_slot_totals(sc, &slot, &large, &small, &pl, 1.0);
                        (large, small, costs)
                    }
                    Err(e) => {
                        log::warn!("{policy} slot {}: {e}; falling back to local execution", slot.tau);
                        fallback = true;
                        let (large, small) = policy_all_local(sc);
                        let costs = per_slot_totals(sc, &slot, &large, &small, &vec![PlacementCosts::default(); sc.num_pts], 1.0);
                        (large, small, costs)
                    }
                }
            }
            Policy::Taco => {
                if slot.is_frame_start(k) {
                    let previous = frame.as_ref().map(|f| &f.large);
                    match frame_start(sc, &slot, &q, &budgets, prev_small.as_ref(), previous) {
                        Ok((large, small, _, r, it, rep)) => {
                            rounds = r;
                            bcd_iters = it;
                            pme = rep;
                            if r >= sc.solver.max_alternations {
                                log::debug!("frame {} used all {r} alternation rounds", slot.frame);
                            }
                            let placement = placement_costs(sc, &slot, &large, &small.f);
                            frame = Some(FrameState { large: large.clone(), placement });
                            let pl = &frame.as_ref().unwrap().placement;
                            let costs = per_slot_totals(sc, &slot, &large, &small, pl, k as f64);
                            (large, small, costs)
                        }
                        Err(e) => {
                            log::warn!("frame {}: {e}; falling back to local execution", slot.frame);
                            fallback = true;
                            let (large, small) = policy_all_local(sc);
                            frame = Some(FrameState {
                                large: large.clone(),
                                placement: vec![PlacementCosts::default(); sc.num_pts],
                            });
                            let costs = per_slot_totals(sc, &slot, &large, &small, &frame.as_ref().unwrap().placement, k as f64);
                            (large, small, costs)
                        }
                    }
                } else {
                    let fs = frame.as_ref().expect("frame state exists after the first slot");
                    let charge = PlacementCharge::Fixed { costs: fs.placement.clone(), divisor: k as f64 };
                    let mut model = SlotModel::new(sc, &slot, &q, &budgets, &fs.large, charge);
                    let warm = prev_small.clone().unwrap_or_else(|| SmallDecision::default_for(sc, &fs.large));
                    let opts = BcdOptions::from_scenario(sc, (slot.tau as u64) << 8);
                    let small = match solve_small(&mut model, &warm, &opts) {
                        Ok((s, rep)) => {
                            bcd_iters = rep.iterations;
                            s
                        }
                        Err(e) => {
                            log::warn!("slot {}: {e}; falling back to local execution", slot.tau);
                            fallback = true;
                            SmallDecision::local(sc)
                        }
                    };
                    let costs = per_slot_totals(sc, &slot, &fs.large, &small, &fs.placement, k as f64);
                    (fs.large.clone(), small, costs)
                }
            }
        };
        if slot.is_frame_start(k) {
            alternations.push(rounds);
        }
        let objective = slot_objective(sc, &q, &costs, &budgets);
        let totals = UnitTotals::from_costs(sc, &costs);
        let next = update_queues(&q, &totals, &budgets);
        let drift_slack = relative_drift_slack(&q, &next, &totals, &budgets);
        if !(drift_slack >= DRIFT_TOLERANCE) {
            return Err(RunError::Invariant {
                tau: slot.tau,
                what: format!("per-step drift inequality slack {drift_slack:e}"),
            });
        }
        records.push(SlotRecord {
            tau: slot.tau,
            frame: slot.frame,
            large,
            small: small.clone(),
            costs,
            queues: q,
            objective,
            bcd_iters,
            alternations: rounds,
            fallback,
            drift_slack,
            pme,
        });
        prev_small = Some(small);
        q = next;
    }
    Ok(RunTrace {
        policy,
        seed: sc.seed,
        num_pts: sc.num_pts,
        slots_per_frame: k,
        records,
        alternations,
        final_queues: q,
    })
}

pub fn run_taco(sc: &Scenario) -> Result<RunTrace, RunError> {
    run_policy(sc, Policy::Taco)
}
