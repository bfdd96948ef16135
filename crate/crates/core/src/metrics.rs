//! Figure metrics computed from a run trace.

use crate::controller::{Policy, RunTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub policy: Policy,
    pub seed: u64,
    pub slots: usize,
    /// `ΣΣ A_i / (T·K·I)`.
    pub mean_accuracy: f64,
    /// `ΣΣ T_i^tol / (T·K·I)`, seconds.
    pub mean_response_delay: f64,
    /// `Σ E^tol / (T·K)`, joules.
    pub mean_energy: f64,
    /// `ΣΣ (T^dl + T^pl) / (T·K·I)` as charged to the slots, seconds.
    pub placement_delay: f64,
    /// `ΣΣ z(T^ul + T^ud) / (T·K·I)`, seconds.
    pub updating_delay: f64,
    pub alternations: usize,
    pub bcd_iters: usize,
    pub fallbacks: usize,
    /// Mean delay backlog over PTs at the start of each slot.
    pub h_trajectory: Vec<f64>,
    /// Energy backlog at the start of each slot.
    pub e_trajectory: Vec<f64>,
    /// Per-PT mean accuracy of each frame.
    pub frame_accuracy: Vec<f64>,
}

/// Normalized sums over every `(slot, PT)` record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotSums {
    pub accuracy: f64,
    pub delay: f64,
    pub energy: f64,
    pub placement: f64,
    pub updating: f64,
}

/// Accumulates the four per-PT sums in the given order, so that the same
/// values read back from a CSV reproduce the summary exactly.
pub fn accumulate<'a>(rows: impl IntoIterator<Item = (f64, f64, f64, f64, f64)> + 'a) -> SlotSums {
    let mut s = SlotSums::default();
    for (a, t, e, p, u) in rows {
        s.accuracy += a;
        s.delay += t;
        s.energy += e;
        s.placement += p;
        s.updating += u;
    }
    s
}

/// Means from sums over `slots` slots and `pts` PTs.
pub fn means(s: &SlotSums, slots: usize, pts: usize) -> (f64, f64, f64, f64, f64) {
    let tk = slots as f64;
    let tki = tk * pts as f64;
    (s.accuracy / tki, s.delay / tki, s.energy / tk, s.placement / tki, s.updating / tki)
}

pub fn summarize(trace: &RunTrace) -> MetricsSummary {
    let rows = trace
        .records
        .iter()
        .flat_map(|r| r.costs.pts.iter().map(|p| (p.accuracy, p.t_tol, p.e_tol, p.t_place_charged, p.t_update_charged)));
    let sums = accumulate(rows);
    let slots = trace.records.len();
    let (mean_accuracy, mean_response_delay, mean_energy, placement_delay, updating_delay) =
        means(&sums, slots, trace.num_pts);
    let k = trace.slots_per_frame.max(1);
    let frame_accuracy = trace
        .records
        .chunks(k)
        .map(|c| {
            let n = (c.len() * trace.num_pts) as f64;
            c.iter().map(|r| r.costs.accuracy_sum()).sum::<f64>() / n
        })
        .collect();
    MetricsSummary {
        policy: trace.policy,
        seed: trace.seed,
        slots,
        mean_accuracy,
        mean_response_delay,
        mean_energy,
        placement_delay,
        updating_delay,
        alternations: trace.alternations.iter().sum(),
        bcd_iters: trace.records.iter().map(|r| r.bcd_iters).sum(),
        fallbacks: trace.fallbacks(),
        h_trajectory: trace.records.iter().map(|r| r.queues.h.iter().sum::<f64>() / trace.num_pts as f64).collect(),
        e_trajectory: trace.records.iter().map(|r| r.queues.e).collect(),
        frame_accuracy,
    }
}

/// Least-squares slope per index step.
pub fn slope(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mx = (n - 1) as f64 / 2.0;
    let my = series.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in series.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// The last quarter of a series.
pub fn last_quartile(series: &[f64]) -> &[f64] {
    let start = series.len() - series.len().div_ceil(4);
    &series[start..]
}

/// Mean of the last quarter.
pub fn stabilized_level(series: &[f64]) -> f64 {
    let q = last_quartile(series);
    if q.is_empty() {
        return 0.0;
    }
    q.iter().sum::<f64>() / q.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::run_policy;
    use crate::scenario::Scenario;

    #[test]
    fn all_local_summary() {
        let mut sc = Scenario::desk();
        sc.frames = 2;
        let tr = run_policy(&sc, Policy::AllLocal).unwrap();
        let m = summarize(&tr);
        assert_eq!(m.mean_accuracy, sc.g_local);
        assert_eq!(m.placement_delay, 0.0);
        assert_eq!(m.updating_delay, 0.0);
        assert_eq!(m.slots, 2 * sc.slots_per_frame);
    }

    #[test]
    fn one_slot_means_are_slot_values() {
        let mut sc = Scenario::desk();
        sc.frames = 1;
        sc.slots_per_frame = 1;
        sc.refresh_budgets();
        let tr = run_policy(&sc, Policy::Cro).unwrap();
        let m = summarize(&tr);
        let c = &tr.records[0].costs;
        let n = sc.num_pts as f64;
        assert!((m.mean_energy - c.e_tol).abs() <= 1e-12 * c.e_tol);
        assert!((m.mean_accuracy - c.accuracy_sum() / n).abs() < 1e-12);
        assert!((m.mean_response_delay - c.t_tol().iter().sum::<f64>() / n).abs() < 1e-12);
    }

    #[test]
    fn slope_of_line() {
        let s: Vec<f64> = (0..10).map(|i| 3.0 + 0.5 * i as f64).collect();
        assert!((slope(&s) - 0.5).abs() < 1e-12);
        assert_eq!(last_quartile(&s).len(), 3);
        assert_eq!(stabilized_level(&[1.0, 1.0, 1.0, 5.0]), 5.0);
    }
}
