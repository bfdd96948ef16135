//! Property suites shared by the `validate` command and the acceptance tests.
//!
//! Each suite draws its instances from the `Instances` random stream of the
//! given seed and returns a [`SuiteReport`]: how many checks ran, how many
//! failed, the worst value of the suite's metric and one line per failure.

use crate::bcd::{solve_b, solve_f, solve_small, solve_y, BcdOptions, PlacementCharge, SlotModel};
use crate::controller::{run_policy, Policy};
use crate::cost::{LargeDecision, SmallDecision};
use crate::oracle::{oracle_enumerate, p4_grid_oracle, OracleGrid};
use crate::pme::{build_p4, envelope_range, mccormick_envelope, solve_large};
use crate::queues::{compute_g, relative_drift_slack, update_queues, QueuePair, SlotBudgets, UnitTotals};
use crate::rng::{stream_rng, Stream};
use crate::scenario::{grid_layout, Scenario};
use crate::slot::{draw_slot, SlotState};
use rand::Rng;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

/// Smallest relative slack accepted by the drift suite.
pub const DRIFT_TOL: f64 = -1e-9;
/// Largest relative gradient error.
pub const GRADIENT_TOL: f64 = 1e-4;
/// Largest relative gap of a block solver to its grid oracle.
pub const BLOCK_TOL: f64 = 1e-3;
/// Largest gap of the rounded P4 value to the grid oracle.
pub const PME_GAP_TOL: f64 = 0.12;
/// Fraction of BCD instances that must converge.
pub const BCD_CONVERGED_SHARE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Drift,
    Gradients,
    Blocks,
    Bcd,
    Pme,
    Oracle,
    Envelopes,
}

impl Suite {
    pub const ALL: [Suite; 7] =
        [Suite::Drift, Suite::Gradients, Suite::Blocks, Suite::Bcd, Suite::Pme, Suite::Oracle, Suite::Envelopes];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Drift => "drift",
            Suite::Gradients => "gradients",
            Suite::Blocks => "blocks",
            Suite::Bcd => "bcd",
            Suite::Pme => "pme",
            Suite::Oracle => "oracle",
            Suite::Envelopes => "envelopes",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL.into_iter().find(|x| x.name() == s.to_ascii_lowercase()).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            format!("unknown suite '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: usize,
    pub failures: usize,
    /// What `worst` measures.
    pub metric: &'static str,
    pub worst: f64,
    /// Extra summary lines.
    pub notes: Vec<String>,
    /// One line per failed check.
    pub violations: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    fn new(suite: Suite, metric: &'static str, worst: f64) -> Self {
        SuiteReport {
            suite,
            checks: 0,
            failures: 0,
            metric,
            worst,
            notes: Vec::new(),
            violations: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            if self.violations.len() < 20 {
                self.violations.push(what());
            }
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} checks, {} passed, {} failed; {} = {:.3e} ({:.2?})",
            self.suite,
            self.checks,
            self.checks - self.failures,
            self.failures,
            self.metric,
            self.worst,
            self.elapsed
        )?;
        for n in &self.notes {
            write!(f, "\n  {n}")?;
        }
        for v in &self.violations {
            write!(f, "\n  violation: {v}")?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut r = match suite {
        Suite::Drift => drift_suite(seed, 10_000),
        Suite::Gradients => gradient_suite(seed, 100),
        Suite::Blocks => block_suite(seed, 50),
        Suite::Bcd => bcd_suite(seed, 100),
        Suite::Pme => pme_suite(seed, 20),
        Suite::Oracle => oracle_suite(seed),
        Suite::Envelopes => envelope_suite(seed, 10_000),
    };
    r.elapsed = start.elapsed();
    r
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

/// One slot of a small scenario with random queues.
pub struct SlotInstance {
    pub sc: Scenario,
    pub slot: SlotState,
    pub q: QueuePair,
    pub budgets: SlotBudgets,
}

pub fn slot_instance<R: Rng>(rng: &mut R, seed: u64, num_pts: usize, num_ess: usize) -> SlotInstance {
    let mut sc = Scenario::desk();
    sc.num_pts = num_pts;
    sc.num_ess = num_ess;
    sc.es_positions = grid_layout(num_ess, sc.area_side);
    let sc = sc.with_seed(seed);
    let slot = draw_slot(&sc, None);
    let scale = 10f64.powf(rng.random_range(-1.0..2.0));
    let q = QueuePair {
        h: (0..num_pts).map(|_| scale * rng.random_range(0.0..100.0)).collect(),
        e: scale * rng.random_range(0.0..20.0),
    };
    let budgets = SlotBudgets::from_scenario(&sc);
    SlotInstance { sc, slot, q, budgets }
}

fn charge(sc: &Scenario) -> PlacementCharge {
    PlacementCharge::Dynamic { divisor: sc.slots_per_frame as f64 }
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// Random queue steps against the per-step squared-queue inequality.
pub fn drift_suite(seed: u64, steps: usize) -> SuiteReport {
    let mut rng = stream_rng(seed, Stream::Instances, 1);
    let mut r = SuiteReport::new(Suite::Drift, "min relative slack", f64::INFINITY);
    let n = 4;
    let mut q = QueuePair::zero(n);
    for step in 0..steps {
        // Occasionally restart from a random backlog so both the clipped and
        // unclipped branches are exercised at every scale.
        if step % 100 == 0 {
            let s = 10f64.powf(rng.random_range(-3.0..4.0));
            q = QueuePair { h: (0..n).map(|_| s * rng.random::<f64>()).collect(), e: s * rng.random::<f64>() };
        }
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        let totals = UnitTotals { t: (0..n).map(|_| s * rng.random::<f64>()).collect(), e: s * rng.random::<f64>() };
        let budgets = SlotBudgets { t: (0..n).map(|_| s * rng.random::<f64>()).collect(), e: s * rng.random::<f64>() };
        let next = update_queues(&q, &totals, &budgets);
        let slack = relative_drift_slack(&q, &next, &totals, &budgets);
        r.worst = r.worst.min(slack);
        r.check(slack >= DRIFT_TOL, || format!("step {step}: relative slack {slack:e}"));
        q = next;
    }
    r
}

/// Fourth-order central difference.
fn derivative(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(scale)
}

/// Analytic partial derivatives of the relaxed slot objective against
/// finite differences at random interior points.
pub fn gradient_suite(seed: u64, points: usize) -> SuiteReport {
    let mut rng = stream_rng(seed, Stream::Instances, 2);
    let mut r = SuiteReport::new(Suite::Gradients, "max relative error", 0.0);
    let h = 1e-5;
    for p in 0..points {
        let inst = slot_instance(&mut rng, seed.wrapping_add(p as u64), 3, 2);
        let n = inst.sc.num_pts;
        let mut large = LargeDecision::nearest(&inst.sc, &inst.slot, 0.0);
        for x in large.x.iter_mut() {
            *x = rng.random_range(0.05..0.95);
        }
        let model = SlotModel::new(&inst.sc, &inst.slot, &inst.q, &inst.budgets, &large, charge(&inst.sc));
        let mut v: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random_range(0.05..0.95)).collect()).collect();
        let i = p % n;
        let a = model.gradient(i, v[0][i], v[1][i], v[2][i], v[3][i]);
        let base = model.objective_relaxed(&v[0], &v[1], &v[2], &v[3]);
        // Differences below this are at the level of rounding noise.
        let floor = 1e-9 * base.abs().max(1.0) / h;
        for (k, name) in ["y", "b", "f", "z"].into_iter().enumerate() {
            let x0 = v[k][i];
            let num = derivative(
                |t| {
                    v[k][i] = t;
                    let o = model.objective_relaxed(&v[0], &v[1], &v[2], &v[3]);
                    v[k][i] = x0;
                    o
                },
                x0,
                h,
            );
            let e = relative_error(a[k], num, floor);
            r.worst = r.worst.max(e);
            r.check(e <= GRADIENT_TOL, || format!("point {p} PT {i} d/d{name}: analytic {} numeric {num} (rel {e:e})", a[k]));
        }
        let ax = model.x_gradient(i, v[0][i], v[2][i], v[3][i]);
        let mut mx = model.clone();
        let x0 = mx.x[i];
        let num = derivative(
            |t| {
                mx.x[i] = t;
                let o = mx.objective_relaxed(&v[0], &v[1], &v[2], &v[3]);
                mx.x[i] = x0;
                o
            },
            x0,
            h,
        );
        let e = relative_error(ax, num, floor);
        r.worst = r.worst.max(e);
        r.check(e <= GRADIENT_TOL, || format!("point {p} PT {i} d/dx: analytic {ax} numeric {num} (rel {e:e})"));
    }
    r
}

/// `√w`-proportional shares with members below `floor` pinned to it.
pub fn sqrt_rule_with_floor(w: &[f64], floor: f64) -> Vec<f64> {
    let n = w.len();
    let mut pinned = vec![false; n];
    loop {
        let free_budget = 1.0 - floor * pinned.iter().filter(|&&p| p).count() as f64;
        let total: f64 = (0..n).filter(|&k| !pinned[k]).map(|k| w[k].sqrt()).sum();
        let shares: Vec<f64> = (0..n)
            .map(|k| {
                if pinned[k] {
                    floor
                } else if total > 0.0 {
                    free_budget * w[k].sqrt() / total
                } else {
                    free_budget / (0..n).filter(|&j| !pinned[j]).count() as f64
                }
            })
            .collect();
        let low: Vec<usize> = (0..n).filter(|&k| !pinned[k] && shares[k] < floor).collect();
        if low.is_empty() {
            return shares;
        }
        for k in low {
            pinned[k] = true;
        }
    }
}

fn relative_gap(solver: f64, grid: f64) -> f64 {
    (solver - grid) / grid.abs().max(1.0)
}

/// `solve_y`, `solve_b`, `solve_f` against grid searches at resolution 1e-3
/// on four PTs, two per ES.
pub fn block_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = stream_rng(seed, Stream::Instances, 3);
    let mut r = SuiteReport::new(Suite::Blocks, "max relative gap to grid", f64::NEG_INFINITY);
    let mut sqrt_exact = 0usize;
    let steps = 1000;
    for p in 0..instances {
        let inst = slot_instance(&mut rng, seed.wrapping_add(1000 + p as u64), 4, 2);
        let large = LargeDecision {
            access: vec![Some(0), Some(0), Some(1), Some(1)],
            x: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let model = SlotModel::new(&inst.sc, &inst.slot, &inst.q, &inst.budgets, &large, charge(&inst.sc));
        let floor = model.floor();
        let mut d = SmallDecision::default_for(&inst.sc, &large);
        for i in 0..4 {
            d.y[i] = rng.random::<f64>();
            d.z[i] = rng.random_bool(0.8);
        }
        for m in 0..2 {
            let b1 = rng.random_range(floor..1.0 - floor);
            let f1 = rng.random_range(floor..1.0 - floor);
            d.b[2 * m] = b1;
            d.b[2 * m + 1] = 1.0 - b1;
            d.f[2 * m] = f1;
            d.f[2 * m + 1] = 1.0 - f1;
        }

        // y: one coordinate per PT, the others fixed.
        let mut dy = d.clone();
        solve_y(&model, &mut dy);
        for i in 0..4 {
            let mut best = f64::INFINITY;
            let mut t = dy.clone();
            for k in 0..=steps {
                t.y[i] = k as f64 / steps as f64;
                best = best.min(model.objective(&t));
            }
            t.y[i] = dy.y[i];
            let g = relative_gap(model.objective(&t), best);
            r.worst = r.worst.max(g.abs());
            r.check(g.abs() <= BLOCK_TOL, || format!("instance {p} solve_y PT {i}: gap {g:e}"));
        }

        // b and f: split of each ES between its two members.
        for (name, which) in [("solve_b", 0usize), ("solve_f", 1)] {
            let mut ds = d.clone();
            if which == 0 {
                solve_b(&model, &mut ds);
            } else {
                solve_f(&model, &mut ds);
            }
            let solver = model.objective(&ds);
            let mut t = ds.clone();
            let mut best = f64::INFINITY;
            let n_steps = ((1.0 - 2.0 * floor) * steps as f64).round() as usize;
            for k0 in 0..=n_steps {
                for k1 in 0..=n_steps {
                    let s0 = floor + k0 as f64 / steps as f64;
                    let s1 = floor + k1 as f64 / steps as f64;
                    let shares = if which == 0 { &mut t.b } else { &mut t.f };
                    shares[0] = s0;
                    shares[1] = 1.0 - s0;
                    shares[2] = s1;
                    shares[3] = 1.0 - s1;
                    best = best.min(model.objective(&t));
                }
            }
            let g = relative_gap(solver, best);
            r.worst = r.worst.max(g.abs());
            r.check(g.abs() <= BLOCK_TOL, || format!("instance {p} {name}: gap {g:e}"));
            if which == 1 {
                for m in 0..2 {
                    let members = [2 * m, 2 * m + 1];
                    // Weight on 1/f from the analytic derivative.
                    let w: Vec<f64> = members
                        .iter()
                        .map(|&i| {
                            let z = if d.z[i] { 1.0 } else { 0.0 };
                            -model.gradient(i, d.y[i], d.b[i], d.f[i], z)[2] * d.f[i] * d.f[i]
                        })
                        .collect();
                    let want = sqrt_rule_with_floor(&w, floor);
                    let dev = members.iter().zip(&want).map(|(&i, w)| (ds.f[i] - w).abs()).fold(0.0, f64::max);
                    if dev <= 1e-12 {
                        sqrt_exact += 1;
                    }
                    r.check(dev <= 1e-12, || format!("instance {p} solve_f ES {m}: off the square-root rule by {dev:e}"));
                }
            }
        }
    }
    r.notes.push(format!("solve_f equals the square-root rule on {sqrt_exact} ES splits"));
    r
}

/// BCD on random desk-size slots: monotone traces and convergence rate.
pub fn bcd_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = stream_rng(seed, Stream::Instances, 4);
    let mut r = SuiteReport::new(Suite::Bcd, "converged share", 1.0);
    let mut converged = 0usize;
    let mut max_iters = 0usize;
    for p in 0..instances {
        let inst = slot_instance(&mut rng, seed.wrapping_add(2000 + p as u64), 10, 4);
        let mut large = LargeDecision::nearest(&inst.sc, &inst.slot, 0.0);
        for x in large.x.iter_mut() {
            *x = rng.random::<f64>();
        }
        let mut model = SlotModel::new(&inst.sc, &inst.slot, &inst.q, &inst.budgets, &large, charge(&inst.sc));
        let opts = BcdOptions::from_scenario(&inst.sc, p as u64);
        let warm = SmallDecision::default_for(&inst.sc, &large);
        match solve_small(&mut model, &warm, &opts) {
            Ok((_, rep)) => {
                let rises = rep.trace.windows(2).filter(|w| w[1] > w[0]).count();
                r.check(rises == 0, || format!("instance {p}: objective rose in {rises} iterations"));
                if rep.converged && rep.iterations <= opts.max_iters {
                    converged += 1;
                }
                max_iters = max_iters.max(rep.iterations);
            }
            Err(e) => r.check(false, || format!("instance {p}: {e}")),
        }
    }
    let share = converged as f64 / instances.max(1) as f64;
    r.worst = share;
    r.check(share >= BCD_CONVERGED_SHARE, || format!("only {converged} of {instances} instances converged"));
    r.notes.push(format!("{converged}/{instances} converged; most iterations {max_iters}"));
    r
}

/// PME sandwich and rounding gap on instances with at most two PTs and ESs.
pub fn pme_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = stream_rng(seed, Stream::Instances, 5);
    let mut r = SuiteReport::new(Suite::Pme, "max gap to grid oracle", 0.0);
    for p in 0..instances {
        let (n, m) = [(1, 1), (1, 2), (2, 1), (2, 2)][p % 4];
        let inst = slot_instance(&mut rng, seed.wrapping_add(3000 + p as u64), n, m);
        let large = LargeDecision::nearest(&inst.sc, &inst.slot, 0.5);
        let mut small = SmallDecision::default_for(&inst.sc, &large);
        for i in 0..n {
            small.y[i] = rng.random::<f64>();
            small.z[i] = rng.random_bool(0.85);
        }
        let ch = charge(&inst.sc);
        let out = match solve_large(&inst.sc, &inst.slot, &inst.q, &inst.budgets, &small, &ch, None) {
            Ok(o) => o,
            Err(e) => {
                r.check(false, || format!("instance {p}: {e}"));
                continue;
            }
        };
        let rep = &out.report;
        let tol = |v: f64| 1e-6 * v.abs().max(1.0);
        r.check(rep.relaxed <= rep.mblp + tol(rep.mblp), || {
            format!("instance {p}: relaxed {} above MBLP {}", rep.relaxed, rep.mblp)
        });
        if rep.rounded.is_finite() {
            r.check(rep.mblp <= rep.rounded + tol(rep.rounded), || {
                format!("instance {p}: MBLP {} above rounded {}", rep.mblp, rep.rounded)
            });
        }
        r.check(rep.mblp <= rep.final_objective + tol(rep.final_objective), || {
            format!("instance {p}: MBLP {} above final {}", rep.mblp, rep.final_objective)
        });
        let md = build_p4(&inst.sc, &inst.slot, &inst.q, &inst.budgets, &small, &ch);
        let Some((best, _, _)) = p4_grid_oracle(&md, 1001) else {
            r.check(false, || format!("instance {p}: grid oracle found no feasible access"));
            continue;
        };
        let gap = ((rep.final_objective - best) / (best - md.constant).abs().max(1e-12)).max(0.0);
        r.worst = r.worst.max(gap);
        r.check(gap <= PME_GAP_TOL, || format!("instance {p}: rounded {} vs oracle {best} (gap {gap:.3})", rep.final_objective));
    }
    r
}

/// One Theorem-4 comparison of TACO with the enumeration oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCheck {
    pub num_pts: usize,
    pub v: f64,
    pub seed: u64,
    /// Mean per-slot accuracy sum of the oracle minus TACO's.
    pub gap: f64,
    pub g_over_v: f64,
    /// Summed per-slot excess of TACO's drift-plus-penalty over the oracle's.
    pub slot_slack: f64,
    /// Terminal Lyapunov difference `max(0, L_oracle(T) − L_TACO(T))`.
    pub terminal_slack: f64,
    pub bound: f64,
    pub sequences: u128,
}

impl EnvelopeCheck {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound + 1e-12 * self.bound.abs().max(1.0)
    }
}

fn lyapunov(q: &QueuePair) -> f64 {
    0.5 * (q.h.iter().map(|h| h * h).sum::<f64>() + q.e * q.e)
}

/// The tiny instances of the envelope check: one PT on one ES with a
/// five-point grid, and two PTs sharing one ES with a two-point grid; one
/// slot per frame and two frames.
pub fn tiny_envelope_scenario(num_pts: usize, v: f64, seed: u64) -> (Scenario, OracleGrid) {
    let mut sc = Scenario::desk();
    sc.num_pts = num_pts;
    sc.num_ess = 1;
    sc.frames = 2;
    sc.slots_per_frame = 1;
    sc.es_positions = grid_layout(1, sc.area_side);
    sc.solver.lyapunov_v = v;
    let grid = OracleGrid::uniform(if num_pts == 1 { 5 } else { 2 });
    (sc.with_seed(seed), grid)
}

pub fn envelope_check(num_pts: usize, v: f64, seed: u64) -> Result<EnvelopeCheck, String> {
    let (sc, grid) = tiny_envelope_scenario(num_pts, v, seed);
    let oracle = oracle_enumerate(&sc, &grid).map_err(|e| e.to_string())?;
    let taco = run_policy(&sc, Policy::Taco).map_err(|e| e.to_string())?;
    let slots = taco.records.len() as f64;
    let taco_acc = taco.records.iter().map(|rec| rec.costs.accuracy_sum()).sum::<f64>() / slots;
    let slot_slack: f64 =
        taco.records.iter().zip(&oracle.slot_objectives).map(|(rec, o)| (rec.objective - o).max(0.0)).sum();
    let terminal_slack = (lyapunov(&oracle.final_queues) - lyapunov(&taco.final_queues)).max(0.0);
    let g = compute_g(&sc).g;
    let bound = g / v + (slot_slack + terminal_slack) / (v * slots);
    Ok(EnvelopeCheck {
        num_pts,
        v,
        seed,
        gap: oracle.accuracy_sum_mean - taco_acc,
        g_over_v: g / v,
        slot_slack,
        terminal_slack,
        bound,
        sequences: oracle.sequences,
    })
}

/// Theorem-4 envelope on the tiny instances for `V ∈ {1e5, 1e6}`.
pub fn oracle_suite(seed: u64) -> SuiteReport {
    let mut r = SuiteReport::new(Suite::Oracle, "max gap/bound", f64::NEG_INFINITY);
    for num_pts in [1, 2] {
        for v in [1e5, 1e6] {
            match envelope_check(num_pts, v, seed) {
                Ok(c) => {
                    let ratio = if c.bound > 0.0 { c.gap / c.bound } else { c.gap.signum() };
                    r.worst = r.worst.max(ratio);
                    r.notes.push(format!(
                        "I={num_pts} V={v:e}: gap {:.3e} <= G/V {:.3e} + slack {:.3e} (slot {:.3e}, terminal {:.3e}); {} sequences",
                        c.gap,
                        c.g_over_v,
                        c.bound - c.g_over_v,
                        c.slot_slack,
                        c.terminal_slack,
                        c.sequences
                    ));
                    r.check(c.holds(), || format!("I={num_pts} V={v:e}: gap {} exceeds bound {}", c.gap, c.bound));
                }
                Err(e) => r.check(false, || format!("I={num_pts} V={v:e}: {e}")),
            }
        }
    }
    r
}

/// Envelope validity and corner tightness on random boxes.
pub fn envelope_suite(seed: u64, points: usize) -> SuiteReport {
    let mut rng = stream_rng(seed, Stream::Instances, 7);
    let mut r = SuiteReport::new(Suite::Envelopes, "max violation", 0.0);
    for p in 0..points {
        let mut box2 = |binary: bool| {
            let (lo, hi): (f64, f64) = if binary {
                [(0.0, 1.0), (0.0, 0.0), (1.0, 1.0)][rng.random_range(0..3)]
            } else {
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                (a.min(b), a.max(b))
            };
            (lo, hi)
        };
        let (a_lo, a_hi) = box2(true);
        let (x_lo, x_hi) = box2(false);
        let cuts = mccormick_envelope(a_lo, a_hi, x_lo, x_hi);
        let a = if rng.random_bool(0.5) { a_lo } else { a_hi };
        let x = if p % 10 == 0 { if rng.random_bool(0.5) { x_lo } else { x_hi } } else { rng.random_range(x_lo..=x_hi) };
        let u = a * x;
        let viol = cuts.iter().map(|c| if c.upper { u - c.rhs(a, x) } else { c.rhs(a, x) - u }).fold(0.0, f64::max);
        r.worst = r.worst.max(viol);
        r.check(viol <= 1e-12, || format!("point {p}: a={a} x={x} violates the envelope by {viol:e}"));
        // At a binary a the envelope collapses to u = a·x.
        let (lo, hi) = envelope_range(&cuts, a, x);
        let spread = (hi - u).abs().max((lo - u).abs());
        r.check(spread <= 1e-12, || format!("point {p}: envelope at a={a} x={x} spans [{lo}, {hi}]"));
    }
    r
}
