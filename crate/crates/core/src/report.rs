//! CSV output: the per-slot trace and the summary rows.
//!
//! Floats are written with the shortest representation that parses back to
//! the same value, so a summary recomputed from `slots.csv` with
//! [`recompute_summary`] matches the emitted one bit for bit.

use crate::controller::{Policy, RunTrace};
use crate::metrics::{accumulate, means, MetricsSummary};
use std::io::{Read, Write};

/// Bumped whenever a column is added, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const SLOTS_HEADER: [&str; 18] = [
    "t",
    "tau",
    "pt",
    "policy",
    "a_es",
    "x",
    "y",
    "b",
    "f",
    "z",
    "T_tol",
    "E_tol_share",
    "H",
    "E_queue",
    "A",
    "T_place",
    "T_update",
    "schema_version",
];

pub const SUMMARY_HEADER: [&str; 13] = [
    "policy",
    "seed",
    "param",
    "value",
    "mean_A",
    "mean_T_resp",
    "mean_E",
    "placement_delay",
    "updating_delay",
    "alternations",
    "bcd_iters",
    "status",
    "schema_version",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Appends one row per `(slot, PT)` of each trace.
pub fn write_slots<W: Write>(out: W, traces: &[&RunTrace]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SLOTS_HEADER)?;
    let version = SCHEMA_VERSION.to_string();
    for tr in traces {
        for rec in &tr.records {
            for (i, p) in rec.costs.pts.iter().enumerate() {
                w.write_record([
                    rec.frame.to_string(),
                    rec.tau.to_string(),
                    i.to_string(),
                    tr.policy.name().to_string(),
                    rec.large.access[i].map_or(String::new(), |m| m.to_string()),
                    num(rec.large.x[i]),
                    num(rec.small.y[i]),
                    num(rec.small.b[i]),
                    num(rec.small.f[i]),
                    u8::from(rec.small.z[i]).to_string(),
                    num(p.t_tol),
                    num(p.e_tol),
                    num(rec.queues.h[i]),
                    num(rec.queues.e),
                    num(p.accuracy),
                    num(p.t_place_charged),
                    num(p.t_update_charged),
                    version.clone(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One line of `summary.csv`; `metrics` is `None` for a failed run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: Policy,
    pub seed: u64,
    pub param: String,
    pub value: String,
    pub metrics: Option<MetricsSummary>,
    pub status: String,
}

impl SummaryRow {
    pub fn ok(m: MetricsSummary, param: &str, value: &str) -> Self {
        SummaryRow {
            policy: m.policy,
            seed: m.seed,
            param: param.to_string(),
            value: value.to_string(),
            metrics: Some(m),
            status: "ok".to_string(),
        }
    }

    pub fn failed(policy: Policy, seed: u64, param: &str, value: &str, error: &str) -> Self {
        // Keep the status on one line and free of the CSV delimiter.
        let msg: String = error.chars().map(|c| if c == '\n' || c == ',' { ' ' } else { c }).collect();
        SummaryRow {
            policy,
            seed,
            param: param.to_string(),
            value: value.to_string(),
            metrics: None,
            status: format!("failed: {msg}"),
        }
    }
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut rec = vec![r.policy.name().to_string(), r.seed.to_string(), r.param.clone(), r.value.clone()];
        match &r.metrics {
            Some(m) => rec.extend([
                num(m.mean_accuracy),
                num(m.mean_response_delay),
                num(m.mean_energy),
                num(m.placement_delay),
                num(m.updating_delay),
                m.alternations.to_string(),
                m.bcd_iters.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        rec.push(r.status.clone());
        rec.push(SCHEMA_VERSION.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The fields of a `slots.csv` row needed to rebuild the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRow {
    pub tau: usize,
    pub pt: usize,
    pub policy: String,
    pub accuracy: f64,
    pub t_tol: f64,
    pub e_tol: f64,
    pub t_place: f64,
    pub t_update: f64,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, ReportError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| ReportError::Format { line: 1, message: format!("missing column {name}") })
}

pub fn read_slots<R: Read>(input: R) -> Result<Vec<SlotRow>, ReportError> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    let idx: Vec<usize> = ["tau", "pt", "policy", "A", "T_tol", "E_tol_share", "T_place", "T_update", "schema_version"]
        .iter()
        .map(|n| column(&headers, n))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| ReportError::Format { line, message };
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let float = |k: usize| field(k).parse::<f64>().map_err(|e| bad(format!("{}: {e}", &headers[idx[k]])));
        let int = |k: usize| field(k).parse::<usize>().map_err(|e| bad(format!("{}: {e}", &headers[idx[k]])));
        if field(8) != SCHEMA_VERSION.to_string() {
            return Err(bad(format!("schema version {} (expected {SCHEMA_VERSION})", field(8))));
        }
        rows.push(SlotRow {
            tau: int(0)?,
            pt: int(1)?,
            policy: field(2).to_string(),
            accuracy: float(3)?,
            t_tol: float(4)?,
            e_tol: float(5)?,
            t_place: float(6)?,
            t_update: float(7)?,
        });
    }
    Ok(rows)
}

/// `(mean_A, mean_T_resp, mean_E, placement_delay, updating_delay)` of one
/// policy's rows, summed in file order as [`crate::metrics::summarize`] does.
pub fn recompute_summary(rows: &[SlotRow], policy: &str) -> Option<(f64, f64, f64, f64, f64)> {
    let mine: Vec<&SlotRow> = rows.iter().filter(|r| r.policy == policy).collect();
    if mine.is_empty() {
        return None;
    }
    let slots = mine.iter().map(|r| r.tau).max()? + 1;
    let pts = mine.iter().map(|r| r.pt).max()? + 1;
    let sums = accumulate(mine.iter().map(|r| (r.accuracy, r.t_tol, r.e_tol, r.t_place, r.t_update)));
    Some(means(&sums, slots, pts))
}
