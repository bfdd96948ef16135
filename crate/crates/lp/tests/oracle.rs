use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taco_lp::{
    solve_lp, solve_mblp, text, LpOutcome, LpProblem, MbLpOutcome, MbLpProblem, Relation, Sense,
    DEFAULT_PIVOT_LIMIT,
};

/// Textbook tableau simplex for `min cᵀx, Ax ≤ b, x ≥ 0` with `b ≥ 0`.
///
/// Slack basis, Bland's rule throughout, no bounds handling. Written
/// separately from the library solver so the two share no code.
fn textbook_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    let w = n + m + 1;
    let mut t = vec![vec![0.0; w]; m + 1];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][w - 1] = b[i];
    }
    t[m][..n].copy_from_slice(c);
    let mut basis: Vec<usize> = (n..n + m).collect();
    for _ in 0..10_000 {
        let Some(q) = (0..n + m).find(|&j| t[m][j] < -1e-12) else {
            return Some(-t[m][w - 1]);
        };
        let mut p: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[i][q] > 1e-12 {
                let r = t[i][w - 1] / t[i][q];
                if r < best - 1e-15 || (r <= best + 1e-15 && p.is_some_and(|pp| basis[i] < basis[pp])) {
                    best = r;
                    p = Some(i);
                }
            }
        }
        let p = p?;
        let piv = t[p][q];
        for v in t[p].iter_mut() {
            *v /= piv;
        }
        let prow = t[p].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != p && row[q] != 0.0 {
                let f = row[q];
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
            }
        }
        basis[p] = q;
    }
    None
}

/// Dual bound from the returned multipliers, or −∞ if they are not dual feasible.
fn dual_bound(p: &LpProblem, duals: &[f64]) -> f64 {
    let s = match p.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let y: Vec<f64> = duals.iter().map(|v| s * v).collect();
    let mut d: Vec<f64> = p.objective.iter().map(|c| s * c).collect();
    let mut bound = 0.0;
    for (i, row) in p.constraints.iter().enumerate() {
        let ok = match row.relation {
            Relation::Le => y[i] <= 1e-9,
            Relation::Ge => y[i] >= -1e-9,
            Relation::Eq => true,
        };
        if !ok {
            return f64::NEG_INFINITY;
        }
        bound += y[i] * row.rhs;
        for &(j, a) in &row.coeffs {
            d[j] -= y[i] * a;
        }
    }
    for (j, dj) in d.iter().enumerate() {
        if dj.abs() <= 1e-12 {
            continue;
        }
        let v = if *dj > 0.0 { p.lower[j] } else { p.upper[j] };
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        bound += dj * v;
    }
    s * bound
}

fn random_box_lp(seed: u64, m: usize, n: usize) -> LpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sense = if rng.random_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    let mut p = LpProblem::new(sense, n);
    let mut x0 = vec![0.0; n];
    for j in 0..n {
        p.objective[j] = rng.random_range(-5.0..5.0);
        let lo: f64 = rng.random_range(-3.0..1.0);
        let hi = lo + rng.random_range(0.5..4.0);
        p.lower[j] = lo;
        p.upper[j] = hi;
        x0[j] = rng.random_range(lo..hi);
    }
    for _ in 0..m {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.6) {
                coeffs.push((j, rng.random_range(-2.0..2.0)));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let roll: f64 = rng.random();
        let (rel, rhs) = if roll < 0.45 {
            (Relation::Le, act + rng.random_range(0.0..2.0))
        } else if roll < 0.9 {
            (Relation::Ge, act - rng.random_range(0.0..2.0))
        } else {
            (Relation::Eq, act)
        };
        p.add_constraint(coeffs, rel, rhs);
    }
    p
}

#[test]
fn matches_textbook_simplex_on_random_feasible_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (m, n) = (10, 20);
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0.1..1.0)).collect()).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..10.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = textbook_min(&c, &a, &b).expect("oracle failed");

        let mut p = LpProblem::new(Sense::Minimize, n);
        p.objective = c.clone();
        for i in 0..m {
            p.add_constraint(a[i].iter().cloned().enumerate().collect(), Relation::Le, b[i]);
        }
        let s = solve_lp(&p, DEFAULT_PIVOT_LIMIT).unwrap().optimal().unwrap();
        assert!((s.objective - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "{} vs {}", s.objective, oracle);
        assert!(p.max_violation(&s.x) <= 1e-7);
    }
}

#[test]
fn two_binary_toy_matches_enumeration() {
    // min -3u - 2v + w, u + v + w >= 1, 2u + 2v <= 3, w in [0, 2], u, v binary
    let mut lp = LpProblem::new(Sense::Minimize, 3);
    lp.objective = vec![-3.0, -2.0, 1.0];
    lp.upper = vec![1.0, 1.0, 2.0];
    lp.add_constraint(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Ge, 1.0);
    lp.add_constraint(vec![(0, 2.0), (1, 2.0)], Relation::Le, 3.0);
    let mut best = f64::INFINITY;
    for mask in 0..4u32 {
        let mut fixed = lp.clone();
        for k in 0..2 {
            let v = ((mask >> k) & 1) as f64;
            fixed.lower[k] = v;
            fixed.upper[k] = v;
        }
        if let LpOutcome::Optimal(s) = solve_lp(&fixed, DEFAULT_PIVOT_LIMIT).unwrap() {
            best = best.min(s.objective);
        }
    }
    let p = MbLpProblem { lp, binaries: vec![0, 1] };
    match solve_mblp(&p, 100).unwrap() {
        MbLpOutcome::Optimal(s) => {
            assert!((s.objective - best).abs() < 1e-9);
            assert!(s.optimal);
        }
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn duality_gap_closes(seed in any::<u64>(), m in 1usize..12, n in 1usize..14) {
        let p = random_box_lp(seed, m, n);
        match solve_lp(&p, DEFAULT_PIVOT_LIMIT).unwrap() {
            LpOutcome::Optimal(s) => {
                prop_assert!(p.max_violation(&s.x) <= 1e-7);
                let exact = p.objective_value(&s.x);
                prop_assert!((exact - s.objective).abs() <= 1e-9 * exact.abs().max(1.0));
                let dual = dual_bound(&p, &s.duals);
                prop_assert!((s.objective - dual).abs() <= 1e-6 * s.objective.abs().max(1.0),
                    "primal {} dual {}\n{}", s.objective, dual,
                    text::to_text(&MbLpProblem { lp: p.clone(), binaries: vec![] }));
            }
            other => prop_assert!(false, "feasible bounded LP returned {:?}", other),
        }
    }

    #[test]
    fn branch_and_bound_matches_enumeration(seed in any::<u64>(), nb in 1usize..5) {
        let mut p = random_box_lp(seed, 4, nb + 3);
        for j in 0..nb {
            p.lower[j] = 0.0;
            p.upper[j] = 1.0;
        }
        // Relax rows so that some binary assignment stays feasible.
        for row in &mut p.constraints {
            row.relation = match row.relation {
                Relation::Eq => Relation::Le,
                r => r,
            };
            row.rhs += match row.relation { Relation::Le => 4.0, _ => -4.0 };
        }
        let s = match p.sense { Sense::Minimize => 1.0, Sense::Maximize => -1.0 };
        let mut best: Option<f64> = None;
        for mask in 0..(1u32 << nb) {
            let mut fixed = p.clone();
            for k in 0..nb {
                let v = ((mask >> k) & 1) as f64;
                fixed.lower[k] = v;
                fixed.upper[k] = v;
            }
            if let LpOutcome::Optimal(sol) = solve_lp(&fixed, DEFAULT_PIVOT_LIMIT).unwrap() {
                let v = s * sol.objective;
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        let problem = MbLpProblem { lp: p.clone(), binaries: (0..nb).collect() };
        match solve_mblp(&problem, 10_000).unwrap() {
            MbLpOutcome::Optimal(sol) => {
                let b = best.expect("enumeration found nothing");
                prop_assert!((s * sol.objective - b).abs() <= 1e-6 * b.abs().max(1.0));
                prop_assert!(p.max_violation(&sol.x) <= 1e-7);
                for w in sol.incumbent_trace.windows(2) {
                    prop_assert!(s * w[1] <= s * w[0] + 1e-9);
                }
            }
            MbLpOutcome::Infeasible => prop_assert!(best.is_none()),
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
