//! Depth-first branch-and-bound over binary variables.

use crate::problem::{LpProblem, MbLpProblem, Sense};
use crate::simplex::{solve_lp, LpOutcome};
use crate::{LpError, DEFAULT_PIVOT_LIMIT};

/// Largest number of binaries accepted by [`solve_mblp`].
pub const MAX_BINARIES: usize = 64;
/// A binary within this distance of 0 or 1 counts as integral.
const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MbLpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// True when the search finished, so the incumbent is globally optimal.
    pub optimal: bool,
    pub nodes: usize,
    pub lps: usize,
    /// Objective of each successive incumbent, in discovery order.
    pub incumbent_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MbLpOutcome {
    Optimal(MbLpSolution),
    Infeasible,
    Unbounded,
    /// The node budget ran out; carries the best incumbent, if any.
    NodeLimit(Option<MbLpSolution>),
}

/// Minimizes (or maximizes) `problem` with every listed binary in {0, 1}.
///
/// Nodes are explored depth first, branching on the most fractional binary
/// and visiting the child nearer to the LP value first. A node is pruned when
/// its LP bound cannot improve the incumbent.
pub fn solve_mblp(problem: &MbLpProblem, node_limit: usize) -> Result<MbLpOutcome, LpError> {
    let lp = &problem.lp;
    lp.validate()?;
    if problem.binaries.len() > MAX_BINARIES {
        return Err(LpError::Malformed(format!(
            "{} binaries exceed the limit of {MAX_BINARIES}",
            problem.binaries.len()
        )));
    }
    if let Some(&j) = problem.binaries.iter().find(|&&j| j >= lp.num_vars()) {
        return Err(LpError::Malformed(format!("binary index {j} out of range")));
    }
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    let mut root = lp.clone();
    for &j in &problem.binaries {
        root.lower[j] = root.lower[j].max(0.0).ceil();
        root.upper[j] = root.upper[j].min(1.0).floor();
        if root.lower[j] > root.upper[j] {
            return Ok(MbLpOutcome::Infeasible);
        }
    }

    struct Node {
        lower: Vec<f64>,
        upper: Vec<f64>,
    }
    let mut stack = vec![Node {
        lower: problem.binaries.iter().map(|&j| root.lower[j]).collect(),
        upper: problem.binaries.iter().map(|&j| root.upper[j]).collect(),
    }];

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut trace = Vec::new();
    let mut nodes = 0usize;
    let mut lps = 0usize;
    let mut node_lp: LpProblem = root.clone();

    while let Some(node) = stack.pop() {
        if nodes >= node_limit {
            let incumbent = best.map(|(x, obj)| MbLpSolution {
                x,
                objective: obj,
                optimal: false,
                nodes,
                lps,
                incumbent_trace: trace.clone(),
            });
            return Ok(MbLpOutcome::NodeLimit(incumbent));
        }
        nodes += 1;
        for (k, &j) in problem.binaries.iter().enumerate() {
            node_lp.lower[j] = node.lower[k];
            node_lp.upper[j] = node.upper[k];
        }
        lps += 1;
        let sol = match solve_lp(&node_lp, DEFAULT_PIVOT_LIMIT)? {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => return Ok(MbLpOutcome::Unbounded),
        };
        let bound = sign * sol.objective;
        if let Some((_, inc)) = &best {
            if bound >= inc - 1e-9 * inc.abs().max(1.0) {
                continue;
            }
        }

        let mut branch: Option<(usize, f64)> = None;
        let mut worst = INTEGRALITY_TOL;
        for (k, &j) in problem.binaries.iter().enumerate() {
            let v = sol.x[j];
            let frac = (v - v.round()).abs();
            if frac > worst {
                worst = frac;
                branch = Some((k, v));
            }
        }
        match branch {
            None => {
                let mut x = sol.x;
                for &j in &problem.binaries {
                    x[j] = x[j].round();
                }
                let obj = lp.objective_value(&x);
                best = Some((x, sign * obj));
                trace.push(obj);
            }
            Some((k, v)) => {
                let mut down = Node { lower: node.lower.clone(), upper: node.upper.clone() };
                down.upper[k] = 0.0;
                let mut up = Node { lower: node.lower, upper: node.upper };
                up.lower[k] = 1.0;
                // Last pushed is explored first.
                if v >= 0.5 {
                    stack.push(down);
                    stack.push(up);
                } else {
                    stack.push(up);
                    stack.push(down);
                }
            }
        }
    }

    Ok(match best {
        Some((x, obj)) => MbLpOutcome::Optimal(MbLpSolution {
            x,
            objective: sign * obj,
            optimal: true,
            nodes,
            lps,
            incumbent_trace: trace,
        }),
        None => MbLpOutcome::Infeasible,
    })
}
