use proptest::prelude::*;
use taco_core::bcd::{split_bandwidth, split_compute};
use taco_core::controller::{run_policy, Policy};
use taco_core::cost::g_edge;
use taco_core::pme::{envelope_range, mccormick_envelope};
use taco_core::queues::{relative_drift_slack, update_queues, UnitTotals};
use taco_core::{QueuePair, Scenario, SlotBudgets};

fn queues_and_totals(n: usize) -> impl Strategy<Value = (QueuePair, UnitTotals, SlotBudgets)> {
    (
        prop::collection::vec(0.0..1e4f64, n),
        0.0..1e4f64,
        prop::collection::vec(0.0..1e3f64, n),
        0.0..1e3f64,
        prop::collection::vec(0.0..1e3f64, n),
        0.0..1e3f64,
    )
        .prop_map(|(h, e, t, te, b, be)| (QueuePair { h, e }, UnitTotals { t, e: te }, SlotBudgets { t: b, e: be }))
}

proptest! {
    #[test]
    fn queues_stay_nonnegative_and_satisfy_the_drift_bound((q, totals, budgets) in queues_and_totals(5)) {
        let next = update_queues(&q, &totals, &budgets);
        prop_assert!(next.h.iter().all(|&h| h >= 0.0) && next.e >= 0.0);
        prop_assert!(relative_drift_slack(&q, &next, &totals, &budgets) >= -1e-9);
    }

    #[test]
    fn compute_split_is_feasible_and_ordered(w in prop::collection::vec(0.0..1e3f64, 1..8), floor in 1e-6..0.1f64) {
        let floor = floor.min(1.0 / w.len() as f64);
        let f = split_compute(&w, floor);
        let sum: f64 = f.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        prop_assert!(f.iter().all(|&v| v >= floor * (1.0 - 1e-12)));
        for a in 0..w.len() {
            for b in 0..w.len() {
                if w[a] > w[b] && w[b] > 0.0 {
                    prop_assert!(f[a] >= f[b] * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn bandwidth_split_respects_the_budget(
        w in prop::collection::vec(0.0..1e3f64, 1..8),
        snr in prop::collection::vec(1e-2..1e4f64, 8),
        floor in 1e-6..0.1f64,
    ) {
        let floor = floor.min(1.0 / w.len() as f64);
        let b = split_bandwidth(5e6, &snr[..w.len()], &w, floor);
        let sum: f64 = b.iter().sum();
        prop_assert!(sum <= 1.0 + 1e-9, "sum {sum}");
        prop_assert!(b.iter().all(|&v| v >= floor * (1.0 - 1e-9)));
    }

    #[test]
    fn mccormick_envelope_contains_the_product(
        (a_lo, a_w, x_lo, x_w) in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        (s, t) in (0.0..=1.0f64, 0.0..=1.0f64),
    ) {
        let (a_hi, x_hi) = ((a_lo + a_w).min(1.0), (x_lo + x_w).min(1.0));
        let a = a_lo + s * (a_hi - a_lo);
        let x = x_lo + t * (x_hi - x_lo);
        let (lo, hi) = envelope_range(&mccormick_envelope(a_lo, a_hi, x_lo, x_hi), a, x);
        prop_assert!(lo <= a * x + 1e-12 && a * x <= hi + 1e-12);
    }

    #[test]
    fn edge_accuracy_is_monotone_in_data(d1 in 0.0..1.0f64, d2 in 0.0..1.0f64, full in 1.0..100.0f64) {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let (g_lo, g_hi) = (g_edge(lo * full, full), g_edge(hi * full, full));
        prop_assert!((0.0..=1.0).contains(&g_lo) && g_hi <= 1.0 + 1e-12);
        prop_assert!(g_lo <= g_hi + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn short_runs_keep_decisions_feasible(seed in 0u64..1000, policy in prop::sample::select(Policy::ALL.to_vec())) {
        let mut sc = Scenario::desk();
        sc.num_pts = 4;
        sc.frames = 2;
        sc.slots_per_frame = 3;
        sc.refresh_budgets();
        let sc = sc.with_seed(seed);
        let tr = run_policy(&sc, policy).unwrap();
        prop_assert_eq!(tr.records.len(), 6);
        for pair in tr.records.windows(2) {
            if policy == Policy::Taco && pair[1].tau % 3 != 0 {
                prop_assert_eq!(&pair[0].large, &pair[1].large);
            }
        }
        for r in &tr.records {
            prop_assert!(r.queues.h.iter().all(|&h| h >= 0.0) && r.queues.e >= 0.0);
            prop_assert!(r.drift_slack >= -1e-9);
            prop_assert!(r.costs.pts.iter().all(|p| (0.0..=1.0).contains(&p.accuracy)));
            for m in 0..sc.num_ess {
                let members = r.large.members(m);
                let b: f64 = members.iter().map(|&i| r.small.b[i]).sum();
                let f: f64 = members.iter().map(|&i| r.small.f[i]).sum();
                prop_assert!(b <= 1.0 + 1e-9 && f <= 1.0 + 1e-9, "ES {m}: b {b}, f {f}");
            }
            if policy == Policy::Lot {
                prop_assert!(r.small.y.iter().all(|&y| y == 0.0));
            }
        }
    }
}
