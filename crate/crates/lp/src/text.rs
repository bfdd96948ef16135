//! Plain-text instance format.
//!
//! ```text
//! # comment
//! sense min
//! vars 3
//! obj 1 2 0.5
//! bound 0 -inf 4
//! row le 10 0:1 1:2.5
//! row eq 1 2:1
//! binary 2
//! end
//! ```
//!
//! Variables default to `[0, inf)`; only other bounds are written. Numbers use
//! Rust's shortest round-trip formatting so a dump reloads bit-exactly.

use crate::problem::{LpProblem, MbLpProblem, Relation, Sense};
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub fn to_text(problem: &MbLpProblem) -> String {
    let lp = &problem.lp;
    let mut out = String::from("# taco-lp instance v1\n");
    let sense = match lp.sense {
        Sense::Minimize => "min",
        Sense::Maximize => "max",
    };
    let _ = writeln!(out, "sense {sense}");
    let _ = writeln!(out, "vars {}", lp.num_vars());
    out.push_str("obj");
    for c in &lp.objective {
        let _ = write!(out, " {c}");
    }
    out.push('\n');
    for j in 0..lp.num_vars() {
        if lp.lower[j] != 0.0 || lp.upper[j] != f64::INFINITY {
            let _ = writeln!(out, "bound {j} {} {}", lp.lower[j], lp.upper[j]);
        }
    }
    for row in &lp.constraints {
        let rel = match row.relation {
            Relation::Le => "le",
            Relation::Eq => "eq",
            Relation::Ge => "ge",
        };
        let _ = write!(out, "row {rel} {}", row.rhs);
        for &(j, a) in &row.coeffs {
            let _ = write!(out, " {j}:{a}");
        }
        out.push('\n');
    }
    if !problem.binaries.is_empty() {
        out.push_str("binary");
        for j in &problem.binaries {
            let _ = write!(out, " {j}");
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn from_text(text: &str) -> Result<MbLpProblem, ParseError> {
    let mut lp: Option<LpProblem> = None;
    let mut sense = Sense::Minimize;
    let mut binaries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ParseError { line, message };
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut tok = content.split_whitespace();
        let key = tok.next().unwrap_or_default();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")));
        let index = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad index '{s}'")));
        let need = |lp: &mut Option<LpProblem>| -> Result<(), ParseError> {
            if lp.is_none() {
                Err(err("'vars' must precede this line".into()))
            } else {
                Ok(())
            }
        };
        match key {
            "sense" => {
                sense = match tok.next() {
                    Some("min") => Sense::Minimize,
                    Some("max") => Sense::Maximize,
                    other => return Err(err(format!("unknown sense {other:?}"))),
                };
                if let Some(p) = lp.as_mut() {
                    p.sense = sense;
                }
            }
            "vars" => {
                let n = index(tok.next().ok_or_else(|| err("missing count".into()))?)?;
                lp = Some(LpProblem::new(sense, n));
            }
            "obj" => {
                need(&mut lp)?;
                let p = lp.as_mut().unwrap();
                let vals: Vec<f64> = tok.map(num).collect::<Result<_, _>>()?;
                if vals.len() != p.num_vars() {
                    return Err(err(format!("{} objective entries for {} vars", vals.len(), p.num_vars())));
                }
                p.objective = vals;
            }
            "bound" => {
                need(&mut lp)?;
                let p = lp.as_mut().unwrap();
                let parts: Vec<&str> = tok.collect();
                if parts.len() != 3 {
                    return Err(err("bound needs index, lower, upper".into()));
                }
                let j = index(parts[0])?;
                if j >= p.num_vars() {
                    return Err(err(format!("variable {j} out of range")));
                }
                p.lower[j] = num(parts[1])?;
                p.upper[j] = num(parts[2])?;
            }
            "row" => {
                need(&mut lp)?;
                let p = lp.as_mut().unwrap();
                let relation = match tok.next() {
                    Some("le") => Relation::Le,
                    Some("eq") => Relation::Eq,
                    Some("ge") => Relation::Ge,
                    other => return Err(err(format!("unknown relation {other:?}"))),
                };
                let rhs = num(tok.next().ok_or_else(|| err("missing rhs".into()))?)?;
                let mut coeffs = Vec::new();
                for t in tok {
                    let (j, a) = t.split_once(':').ok_or_else(|| err(format!("bad term '{t}'")))?;
                    coeffs.push((index(j)?, num(a)?));
                }
                p.add_constraint(coeffs, relation, rhs);
            }
            "binary" => {
                for t in tok {
                    binaries.push(index(t)?);
                }
            }
            "end" => break,
            other => return Err(err(format!("unknown directive '{other}'"))),
        }
    }
    let lp = lp.ok_or(ParseError { line: 0, message: "no 'vars' line".into() })?;
    Ok(MbLpProblem { lp, binaries })
}
