//! CSV ingestion for fixed ES positions and recorded PT movement.
//!
//! ES file: header `es_id,x_m,y_m`, one row per ES.
//! PT trace: header `pt_id,slot,x_m,y_m`. Slots need not be contiguous;
//! positions between recorded slots are interpolated linearly and held
//! constant before the first and after the last sample.

use crate::scenario::{Point, ScenarioError};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Deserialize)]
struct EsRow {
    es_id: usize,
    x_m: f64,
    y_m: f64,
}

#[derive(Debug, Deserialize)]
struct PtRow {
    pt_id: usize,
    slot: usize,
    x_m: f64,
    y_m: f64,
}

/// Recorded positions per PT, sorted by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PtTrace {
    pub samples: Vec<Vec<(usize, Point)>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn row_err(path: &Path, e: &csv::Error) -> ScenarioError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    ScenarioError::Trace(format!("{}: malformed row at line {line}: {e}", path.display()))
}

fn check_headers(path: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<(), ScenarioError> {
    let h = rdr.headers().map_err(|e| row_err(path, &e))?;
    let got: Vec<&str> = h.iter().map(str::trim).collect();
    if got != want {
        return Err(ScenarioError::Trace(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            want.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

pub fn load_es_positions(path: &Path, num_ess: usize) -> Result<Vec<Point>, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    check_headers(path, &mut rdr, &["es_id", "x_m", "y_m"])?;
    let mut rows: Vec<EsRow> = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.map_err(|e| row_err(path, &e))?);
    }
    if rows.len() != num_ess {
        return Err(ScenarioError::Trace(format!(
            "{}: ES count mismatch: {} rows for num_ess = {num_ess}",
            path.display(),
            rows.len()
        )));
    }
    let mut out = vec![None; num_ess];
    for r in rows {
        if r.es_id >= num_ess || out[r.es_id].is_some() {
            return Err(ScenarioError::Trace(format!("{}: bad or duplicate es_id {}", path.display(), r.es_id)));
        }
        out[r.es_id] = Some(Point::new(r.x_m, r.y_m));
    }
    Ok(out.into_iter().map(|p| p.expect("every id filled")).collect())
}

pub fn load_pt_trace(path: &Path) -> Result<PtTrace, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    check_headers(path, &mut rdr, &["pt_id", "slot", "x_m", "y_m"])?;
    let mut samples: Vec<Vec<(usize, Point)>> = Vec::new();
    for rec in rdr.deserialize() {
        let r: PtRow = rec.map_err(|e| row_err(path, &e))?;
        if samples.len() <= r.pt_id {
            samples.resize(r.pt_id + 1, Vec::new());
        }
        samples[r.pt_id].push((r.slot, Point::new(r.x_m, r.y_m)));
    }
    for s in &mut samples {
        s.sort_by_key(|&(slot, _)| slot);
    }
    Ok(PtTrace { samples })
}

impl PtTrace {
    pub fn validate(&self, num_pts: usize, total_slots: usize, side: f64) -> Result<(), String> {
        if self.samples.len() < num_pts {
            return Err(format!("PT trace covers {} PTs, need {num_pts}", self.samples.len()));
        }
        for (i, s) in self.samples.iter().take(num_pts).enumerate() {
            let Some(&(last, _)) = s.last() else {
                return Err(format!("PT trace has no rows for PT {i}"));
            };
            if last + 1 < total_slots {
                return Err(format!("PT trace for PT {i} ends at slot {last}, shorter than {total_slots} slots"));
            }
            for w in s.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(format!("PT trace repeats slot {} for PT {i}", w[0].0));
                }
            }
            for &(slot, p) in s {
                if !(0.0..=side).contains(&p.x) || !(0.0..=side).contains(&p.y) {
                    return Err(format!("PT {i} at slot {slot} lies outside the area"));
                }
            }
        }
        Ok(())
    }

    /// Position of `pt` at `slot`.
    pub fn position(&self, pt: usize, slot: usize) -> Point {
        let s = &self.samples[pt];
        let k = s.partition_point(|&(t, _)| t <= slot);
        if k == 0 {
            return s[0].1;
        }
        let (t0, p0) = s[k - 1];
        if t0 == slot || k == s.len() {
            return p0;
        }
        let (t1, p1) = s[k];
        let w = (slot - t0) as f64 / (t1 - t0) as f64;
        Point::new(p0.x + w * (p1.x - p0.x), p0.y + w * (p1.y - p0.y))
    }
}
