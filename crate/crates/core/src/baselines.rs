//! Single-timescale comparison policies.
//!
//! LOT and CRO re-decide everything every slot: nearest-ES access, `x` on a
//! 32-point grid, shares by the KKT block solvers and `z` by thresholding,
//! with placement charged in full every slot. LOT never uploads personalized
//! data (`y = 0`).

use crate::bcd::{solve_small, BcdError, BcdOptions, PlacementCharge, SlotModel, SolveReport};
use crate::cost::{LargeDecision, SmallDecision};
use crate::queues::{QueuePair, SlotBudgets};
use crate::scenario::Scenario;
use crate::slot::SlotState;

/// Grid size for the baselines' `x` block.
pub const X_GRID_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Lot,
    Cro,
}

fn single_timescale(
    sc: &Scenario,
    slot: &SlotState,
    q: &QueuePair,
    budgets: &SlotBudgets,
    warm: Option<&SmallDecision>,
    variant: Variant,
) -> Result<(LargeDecision, SmallDecision, SolveReport), BcdError> {
    let placement = sc.solver.placement_enabled;
    let large = LargeDecision::nearest(sc, slot, 0.0);
    let mut model = SlotModel::new(sc, slot, q, budgets, &large, PlacementCharge::Dynamic { divisor: 1.0 });
    let start = match warm {
        Some(w) => w.clone(),
        None => SmallDecision::default_for(sc, &large),
    };
    let mut opts = BcdOptions::from_scenario(sc, slot.tau as u64);
    opts.x_grid = placement.then_some(X_GRID_POINTS);
    opts.no_update = variant == Variant::Lot;
    let (small, report) = solve_small(&mut model, &start, &opts)?;
    let large = LargeDecision { access: large.access, x: model.x.clone() };
    Ok((large, small, report))
}

/// LOT: placement and offloading every slot, no customized update.
pub fn policy_lot(
    sc: &Scenario,
    slot: &SlotState,
    q: &QueuePair,
    budgets: &SlotBudgets,
    warm: Option<&SmallDecision>,
) -> Result<(LargeDecision, SmallDecision, SolveReport), BcdError> {
    single_timescale(sc, slot, q, budgets, warm, Variant::Lot)
}

/// CRO: placement and customized update both decided every slot.
pub fn policy_cro(
    sc: &Scenario,
    slot: &SlotState,
    q: &QueuePair,
    budgets: &SlotBudgets,
    warm: Option<&SmallDecision>,
) -> Result<(LargeDecision, SmallDecision, SolveReport), BcdError> {
    single_timescale(sc, slot, q, budgets, warm, Variant::Cro)
}

/// Everything runs on the PT.
pub fn policy_all_local(sc: &Scenario) -> (LargeDecision, SmallDecision) {
    (LargeDecision::none(sc.num_pts), SmallDecision::local(sc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queues::evaluate_slot;
    use crate::slot::draw_slot;

    fn setup() -> (Scenario, SlotState, QueuePair, SlotBudgets) {
        let sc = Scenario::desk();
        let slot = draw_slot(&sc, None);
        let q = QueuePair { h: vec![500.0; sc.num_pts], e: 10.0 };
        let b = SlotBudgets::from_scenario(&sc);
        (sc, slot, q, b)
    }

    #[test]
    fn lot_never_uploads() {
        let (sc, slot, q, b) = setup();
        let (large, small, _) = policy_lot(&sc, &slot, &q, &b, None).unwrap();
        assert!(small.y.iter().all(|&y| y == 0.0));
        let c = evaluate_slot(&sc, &slot, &large, &small, &small.f, 1.0);
        assert!(c.pts.iter().all(|p| p.t_update_charged == 0.0));
    }

    #[test]
    fn cro_uses_nearest_access_and_grid_x() {
        let (sc, slot, q, b) = setup();
        let (large, small, _) = policy_cro(&sc, &slot, &q, &b, None).unwrap();
        for i in 0..sc.num_pts {
            assert_eq!(large.access[i], Some(slot.nearest_es(&sc, i)));
            let k = large.x[i] * (X_GRID_POINTS - 1) as f64;
            assert!((k - k.round()).abs() < 1e-9, "x off grid: {}", large.x[i]);
        }
        assert!(crate::cost::capacity_excess(&sc, &large, &small) <= 1e-9);
    }

    #[test]
    fn placement_disabled_pins_x() {
        let (mut sc, slot, q, b) = setup();
        sc.solver.placement_enabled = false;
        let (large, _, _) = policy_cro(&sc, &slot, &q, &b, None).unwrap();
        assert!(large.x.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn all_local_accuracy() {
        let (sc, slot, _, _) = setup();
        let (large, small) = policy_all_local(&sc);
        let c = evaluate_slot(&sc, &slot, &large, &small, &small.f, 1.0);
        assert!(c.pts.iter().all(|p| p.accuracy == sc.g_local));
    }
}
