//! Experiment configuration.
//!
//! A [`Scenario`] is built from a TOML document with the sections `[system]`,
//! `[radio]`, `[compute]`, `[budgets]`, `[solver]` and `[rng]`. Every key is
//! optional; missing keys take the simulation-table defaults. Key names carry
//! their unit (`_mbit`, `_mhz`, `_ghz`, `_dbm_hz`, ...) and values are
//! converted to SI units and bits on load.

use crate::cost::{per_slot_totals, placement_costs, LargeDecision, PlacementCosts, SmallDecision};
use crate::rng::{stream_rng, uniform_in, Stream};
use crate::slot::SlotGenerator;
use crate::traces::{load_es_positions, load_pt_trace, PtTrace};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn point(v: f64) -> Self {
        Range { low: v, high: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// Placement of the distance exponent in the uplink SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathlossSign {
    /// Path gain `d^(−θ)`.
    Physical,
    /// Path gain `d^(+θ)`, as the rate formula is printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZRounding {
    Threshold,
    #[serde(alias = "prob")]
    Probabilistic,
}

/// How the large-timescale relaxation is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PmeMode {
    /// Coupled when the instance is small, decomposed otherwise.
    Auto,
    /// One LP over all PTs with the exact capacity rows.
    Coupled,
    /// One LP per PT; capacity rows are projected onto each PT.
    Decomposed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lyapunov_v: f64,
    pub partitions: usize,
    pub epsilon: f64,
    pub alternation_epsilon: f64,
    pub max_alternations: usize,
    pub max_bcd_iters: usize,
    pub lp_pivot_limit: usize,
    pub mblp_node_limit: usize,
    pub contraction_sweeps: usize,
    pub round_z: ZRounding,
    pub pme_mode: PmeMode,
    /// Coupled PME is used in `Auto` mode while `I·M` stays at or below this.
    pub coupled_max_pairs: usize,
    pub share_floor: f64,
    /// Floor on the shares of a PT attached to an ES, as a multiple of
    /// `1/num_pts`. Keeps placement and transfer delays bounded.
    pub member_share_floor: f64,
    pub placement_enabled: bool,
    /// Also start each frame's alternation from the default small decision.
    pub multi_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BudgetSource {
    Explicit,
    /// Placed between the all-local and the default all-offload reference
    /// costs of a seeded warmup: `local + blend·(offload − local)`.
    Derived { delay_blend: f64, energy_blend: f64, warmup_frames: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Budgets {
    /// `T_i^max` per PT (s per frame).
    pub delay: Vec<f64>,
    /// `E^max` (J per frame).
    pub energy: f64,
    pub source: BudgetSource,
}

/// Immutable experiment configuration in SI units (bits, Hz, W, s, J).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_pts: usize,
    pub num_ess: usize,
    pub frames: usize,
    pub slots_per_frame: usize,
    pub area_side: f64,
    pub slot_duration: f64,
    pub rwp_speed: Range,

    pub bandwidth_per_es: f64,
    pub tx_power_pt: f64,
    pub tx_power_cloud: f64,
    pub cloud_rate: f64,
    pub noise_psd: f64,
    pub pathloss_exp: f64,
    pub pathloss_sign: PathlossSign,
    pub min_distance: f64,

    pub cpu_es: f64,
    pub cpu_pt: f64,
    pub cycles_per_bit_es: f64,
    pub cycles_per_bit_pt: f64,
    pub kappa_es: f64,
    pub kappa_pt: f64,

    pub knowledge_bits: Range,
    pub personalized_bits: Range,
    pub task_bits: Range,
    pub g_local: f64,

    pub budgets: Budgets,
    /// Queue and objective bookkeeping unit for delay (s per unit).
    pub delay_unit: f64,
    /// Queue and objective bookkeeping unit for energy (J per unit).
    pub energy_unit: f64,

    pub solver: SolverConfig,
    pub seed: u64,

    pub es_positions: Vec<Point>,
    pub pt_trace: Option<PtTrace>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ScenarioError {
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Trace(String),
}

const DEFAULT_DELAY_BLEND: f64 = 0.2;
const DEFAULT_ENERGY_BLEND: f64 = 0.5;
const DEFAULT_WARMUP_FRAMES: usize = 10;
/// Keeps the offload warmup off the run's own random streams.
const WARMUP_SEED_MIX: u64 = 0x5741_524d_5550_0001;

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "system",
        &[
            "num_pts",
            "num_ess",
            "frames",
            "slots_per_frame",
            "area_side_m",
            "slot_duration_s",
            "rwp_speed_mps",
            "knowledge_mbit",
            "personalized_mbit",
            "task_mbit",
            "g_local",
            "es_positions_csv",
            "pt_trace_csv",
        ],
    ),
    (
        "radio",
        &[
            "bandwidth_mhz",
            "tx_power_pt_w",
            "tx_power_cloud_w",
            "cloud_rate_mbps",
            "noise_psd_dbm_hz",
            "pathloss_exp",
            "pathloss_sign",
            "min_distance_m",
        ],
    ),
    (
        "compute",
        &["cpu_es_ghz", "cpu_pt_ghz", "cycles_per_bit_es", "cycles_per_bit_pt", "kappa_es", "kappa_pt"],
    ),
    (
        "budgets",
        &[
            "delay_budget_s",
            "energy_budget_j",
            "delay_budget_blend",
            "energy_budget_blend",
            "warmup_frames",
            "delay_unit_s",
            "energy_unit_j",
        ],
    ),
    (
        "solver",
        &[
            "lyapunov_v",
            "partitions",
            "epsilon",
            "alternation_epsilon",
            "max_alternations",
            "max_bcd_iters",
            "lp_pivot_limit",
            "mblp_node_limit",
            "contraction_sweeps",
            "round_z",
            "pme_mode",
            "coupled_max_pairs",
            "share_floor",
            "member_share_floor",
            "placement_enabled",
            "multi_start",
        ],
    ),
    ("rng", &["seed"]),
];

#[derive(Debug, Default, Deserialize)]
struct ConfigDoc {
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    radio: RadioSection,
    #[serde(default)]
    compute: ComputeSection,
    #[serde(default)]
    budgets: BudgetSection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    rng: RngSection,
}

#[derive(Debug, Default, Deserialize)]
struct SystemSection {
    num_pts: Option<usize>,
    num_ess: Option<usize>,
    frames: Option<usize>,
    slots_per_frame: Option<usize>,
    area_side_m: Option<f64>,
    slot_duration_s: Option<f64>,
    rwp_speed_mps: Option<[f64; 2]>,
    knowledge_mbit: Option<[f64; 2]>,
    personalized_mbit: Option<[f64; 2]>,
    task_mbit: Option<[f64; 2]>,
    g_local: Option<f64>,
    es_positions_csv: Option<PathBuf>,
    pt_trace_csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
struct RadioSection {
    bandwidth_mhz: Option<f64>,
    tx_power_pt_w: Option<f64>,
    tx_power_cloud_w: Option<f64>,
    cloud_rate_mbps: Option<f64>,
    noise_psd_dbm_hz: Option<f64>,
    pathloss_exp: Option<f64>,
    pathloss_sign: Option<PathlossSign>,
    min_distance_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct ComputeSection {
    cpu_es_ghz: Option<f64>,
    cpu_pt_ghz: Option<f64>,
    cycles_per_bit_es: Option<f64>,
    cycles_per_bit_pt: Option<f64>,
    kappa_es: Option<f64>,
    kappa_pt: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct BudgetSection {
    delay_budget_s: Option<f64>,
    energy_budget_j: Option<f64>,
    delay_budget_blend: Option<f64>,
    energy_budget_blend: Option<f64>,
    warmup_frames: Option<usize>,
    delay_unit_s: Option<f64>,
    energy_unit_j: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct SolverSection {
    lyapunov_v: Option<f64>,
    partitions: Option<usize>,
    epsilon: Option<f64>,
    alternation_epsilon: Option<f64>,
    max_alternations: Option<usize>,
    max_bcd_iters: Option<usize>,
    lp_pivot_limit: Option<usize>,
    mblp_node_limit: Option<usize>,
    contraction_sweeps: Option<usize>,
    round_z: Option<ZRounding>,
    pme_mode: Option<PmeMode>,
    coupled_max_pairs: Option<usize>,
    share_floor: Option<f64>,
    member_share_floor: Option<f64>,
    placement_enabled: Option<bool>,
    multi_start: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
struct RngSection {
    seed: Option<u64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses a config document into a TOML table, listing every unknown key.
pub fn parse_config_table(text: &str) -> Result<toml::Table, ScenarioError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let mut unknown = Vec::new();
    for (section, value) in &table {
        let Some((_, keys)) = KNOWN_KEYS.iter().find(|(s, _)| s == section) else {
            unknown.push(format!("[{section}]"));
            continue;
        };
        match value.as_table() {
            Some(t) => {
                for k in t.keys() {
                    if !keys.contains(&k.as_str()) {
                        unknown.push(format!("{section}.{k}"));
                    }
                }
            }
            None => unknown.push(section.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(ScenarioError::UnknownKeys(unknown));
    }
    Ok(table)
}

/// Sets `section.key` in a parsed config table. Fails for unknown names.
pub fn set_config_value(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ScenarioError> {
    let (section, key) =
        path.split_once('.').ok_or_else(|| ScenarioError::UnknownKeys(vec![path.to_string()]))?;
    let known = KNOWN_KEYS.iter().any(|(s, keys)| *s == section && keys.contains(&key));
    if !known {
        return Err(ScenarioError::UnknownKeys(vec![path.to_string()]));
    }
    let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let t = entry.as_table_mut().ok_or_else(|| ScenarioError::Invalid(format!("[{section}] is not a table")))?;
    t.insert(key.to_string(), value);
    Ok(())
}

/// Builds a scenario from config text. Relative CSV paths resolve against `base_dir`.
pub fn build_scenario(config_text: &str, base_dir: Option<&Path>) -> Result<Scenario, ScenarioError> {
    let table = parse_config_table(config_text)?;
    build_scenario_from_table(table, base_dir)
}

pub fn build_scenario_from_table(table: toml::Table, base_dir: Option<&Path>) -> Result<Scenario, ScenarioError> {
    let doc: ConfigDoc = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ScenarioError::Parse { line: 0, message: e.message().to_string() })?;
    let mut sc = Scenario::paper_defaults();
    let range = |v: Option<[f64; 2]>, scale: f64, default: Range| {
        v.map(|[a, b]| Range::new(a * scale, b * scale)).unwrap_or(default)
    };

    let s = doc.system;
    sc.num_pts = s.num_pts.unwrap_or(sc.num_pts);
    sc.num_ess = s.num_ess.unwrap_or(sc.num_ess);
    sc.frames = s.frames.unwrap_or(sc.frames);
    sc.slots_per_frame = s.slots_per_frame.unwrap_or(sc.slots_per_frame);
    sc.area_side = s.area_side_m.unwrap_or(sc.area_side);
    sc.slot_duration = s.slot_duration_s.unwrap_or(sc.slot_duration);
    sc.rwp_speed = range(s.rwp_speed_mps, 1.0, sc.rwp_speed);
    sc.knowledge_bits = range(s.knowledge_mbit, 1e6, sc.knowledge_bits);
    sc.personalized_bits = range(s.personalized_mbit, 1e6, sc.personalized_bits);
    sc.task_bits = range(s.task_mbit, 1e6, sc.task_bits);
    sc.g_local = s.g_local.unwrap_or(sc.g_local);

    let r = doc.radio;
    sc.bandwidth_per_es = r.bandwidth_mhz.map(|v| v * 1e6).unwrap_or(sc.bandwidth_per_es);
    sc.tx_power_pt = r.tx_power_pt_w.unwrap_or(sc.tx_power_pt);
    sc.tx_power_cloud = r.tx_power_cloud_w.unwrap_or(sc.tx_power_cloud);
    sc.cloud_rate = r.cloud_rate_mbps.map(|v| v * 1e6).unwrap_or(sc.cloud_rate);
    sc.noise_psd = r.noise_psd_dbm_hz.map(dbm_hz_to_w_hz).unwrap_or(sc.noise_psd);
    sc.pathloss_exp = r.pathloss_exp.unwrap_or(sc.pathloss_exp);
    sc.pathloss_sign = r.pathloss_sign.unwrap_or(sc.pathloss_sign);
    sc.min_distance = r.min_distance_m.unwrap_or(sc.min_distance);

    let c = doc.compute;
    sc.cpu_es = c.cpu_es_ghz.map(|v| v * 1e9).unwrap_or(sc.cpu_es);
    sc.cpu_pt = c.cpu_pt_ghz.map(|v| v * 1e9).unwrap_or(sc.cpu_pt);
    sc.cycles_per_bit_es = c.cycles_per_bit_es.unwrap_or(sc.cycles_per_bit_es);
    sc.cycles_per_bit_pt = c.cycles_per_bit_pt.unwrap_or(sc.cycles_per_bit_pt);
    sc.kappa_es = c.kappa_es.unwrap_or(sc.kappa_es);
    sc.kappa_pt = c.kappa_pt.unwrap_or(sc.kappa_pt);

    let v = doc.solver;
    let d = &mut sc.solver;
    d.lyapunov_v = v.lyapunov_v.unwrap_or(d.lyapunov_v);
    d.partitions = v.partitions.unwrap_or(d.partitions);
    d.epsilon = v.epsilon.unwrap_or(d.epsilon);
    d.alternation_epsilon = v.alternation_epsilon.unwrap_or(d.epsilon);
    d.max_alternations = v.max_alternations.unwrap_or(d.max_alternations);
    d.max_bcd_iters = v.max_bcd_iters.unwrap_or(d.max_bcd_iters);
    d.lp_pivot_limit = v.lp_pivot_limit.unwrap_or(d.lp_pivot_limit);
    d.mblp_node_limit = v.mblp_node_limit.unwrap_or(d.mblp_node_limit);
    d.contraction_sweeps = v.contraction_sweeps.unwrap_or(d.contraction_sweeps);
    d.round_z = v.round_z.unwrap_or(d.round_z);
    d.pme_mode = v.pme_mode.unwrap_or(d.pme_mode);
    d.coupled_max_pairs = v.coupled_max_pairs.unwrap_or(d.coupled_max_pairs);
    d.share_floor = v.share_floor.unwrap_or(d.share_floor);
    d.member_share_floor = v.member_share_floor.unwrap_or(d.member_share_floor);
    d.placement_enabled = v.placement_enabled.unwrap_or(d.placement_enabled);
    d.multi_start = v.multi_start.unwrap_or(d.multi_start);

    sc.seed = doc.rng.seed.unwrap_or(sc.seed);

    let resolve = |p: PathBuf| match base_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    };
    sc.es_positions = match s.es_positions_csv {
        Some(p) => load_es_positions(&resolve(p), sc.num_ess)?,
        None => grid_layout(sc.num_ess, sc.area_side),
    };
    if let Some(p) = s.pt_trace_csv {
        sc.pt_trace = Some(load_pt_trace(&resolve(p))?);
    }

    let b = doc.budgets;
    sc.delay_unit = b.delay_unit_s.unwrap_or(sc.delay_unit);
    sc.energy_unit = b.energy_unit_j.unwrap_or(sc.energy_unit);
    let explicit = (b.delay_budget_s, b.energy_budget_j);
    sc.budgets.source = match explicit {
        (Some(_), Some(_)) => BudgetSource::Explicit,
        _ => BudgetSource::Derived {
            delay_blend: b.delay_budget_blend.unwrap_or(DEFAULT_DELAY_BLEND),
            energy_blend: b.energy_budget_blend.unwrap_or(DEFAULT_ENERGY_BLEND),
            warmup_frames: b.warmup_frames.unwrap_or(DEFAULT_WARMUP_FRAMES),
        },
    };
    sc.validate()?;
    sc.refresh_budgets();
    if let Some(t) = explicit.0 {
        sc.budgets.delay = vec![t; sc.num_pts];
    }
    if let Some(e) = explicit.1 {
        sc.budgets.energy = e;
    }
    sc.validate_budgets()?;
    Ok(sc)
}

pub fn dbm_hz_to_w_hz(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Near-square grid of cell centres covering the area.
pub fn grid_layout(m: usize, side: f64) -> Vec<Point> {
    if m == 0 {
        return Vec::new();
    }
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols);
    (0..m)
        .map(|k| {
            let (c, r) = (k % cols, k / cols);
            Point::new((c as f64 + 0.5) * side / cols as f64, (r as f64 + 0.5) * side / rows as f64)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

impl Scenario {
    /// Values of the simulation parameter table; budgets derived from warmup.
    pub fn paper_defaults() -> Scenario {
        let mut sc = Scenario {
            num_pts: 40,
            num_ess: 10,
            frames: 200,
            slots_per_frame: 10,
            area_side: 1000.0,
            slot_duration: 1.0,
            rwp_speed: Range::new(1.0, 2.0),
            bandwidth_per_es: 5e6,
            tx_power_pt: 0.5,
            tx_power_cloud: 5.0,
            cloud_rate: 50e6,
            noise_psd: dbm_hz_to_w_hz(-174.0),
            pathloss_exp: 4.0,
            pathloss_sign: PathlossSign::Physical,
            min_distance: 1.0,
            cpu_es: 20e9,
            cpu_pt: 1e9,
            cycles_per_bit_es: 300.0,
            cycles_per_bit_pt: 300.0,
            kappa_es: 1e-27,
            kappa_pt: 1e-27,
            knowledge_bits: Range::new(73.2e6, 97.6e6),
            personalized_bits: Range::new(6.1e6, 12.2e6),
            task_bits: Range::new(10e6, 20e6),
            g_local: 0.5,
            budgets: Budgets {
                delay: Vec::new(),
                energy: 0.0,
                source: BudgetSource::Derived {
                    delay_blend: DEFAULT_DELAY_BLEND,
                    energy_blend: DEFAULT_ENERGY_BLEND,
                    warmup_frames: DEFAULT_WARMUP_FRAMES,
                },
            },
            delay_unit: 1e-2,
            energy_unit: 10.0,
            solver: SolverConfig {
                lyapunov_v: 1e6,
                partitions: 4,
                epsilon: 1e-6,
                alternation_epsilon: 1e-6,
                max_alternations: 5,
                max_bcd_iters: 50,
                lp_pivot_limit: 20_000,
                mblp_node_limit: 5_000,
                contraction_sweeps: 1,
                round_z: ZRounding::Threshold,
                pme_mode: PmeMode::Auto,
                coupled_max_pairs: 4,
                share_floor: 1e-6,
                member_share_floor: 1.0,
                placement_enabled: true,
                multi_start: true,
            },
            seed: 1,
            es_positions: Vec::new(),
            pt_trace: None,
        };
        sc.es_positions = grid_layout(sc.num_ess, sc.area_side);
        sc.refresh_budgets();
        sc
    }

    /// Desk-scale variant: I=10, M=4, T=100, K=10.
    pub fn desk() -> Scenario {
        let mut sc = Scenario::paper_defaults();
        sc.num_pts = 10;
        sc.num_ess = 4;
        sc.frames = 100;
        sc.es_positions = grid_layout(4, sc.area_side);
        sc.refresh_budgets();
        sc
    }

    pub fn total_slots(&self) -> usize {
        self.frames * self.slots_per_frame
    }

    /// Changes the seed and re-derives warmup budgets if they are derived.
    pub fn with_seed(mut self, seed: u64) -> Scenario {
        self.seed = seed;
        self.refresh_budgets();
        self
    }

    /// Recomputes derived budgets after any field change. Explicit budgets are
    /// only resized to the current PT count.
    pub fn refresh_budgets(&mut self) {
        match self.budgets.source.clone() {
            BudgetSource::Explicit => {
                let t = self.budgets.delay.first().copied().unwrap_or(0.0);
                self.budgets.delay.resize(self.num_pts, t);
            }
            BudgetSource::Derived { delay_blend, energy_blend, warmup_frames } => {
                let (tl, el) = self.all_local_warmup(warmup_frames);
                let (to, eo) = self.offload_warmup(warmup_frames).unwrap_or((tl, el));
                self.budgets.delay = vec![tl + delay_blend * (to - tl); self.num_pts];
                self.budgets.energy = el + energy_blend * (eo - el);
            }
        }
    }

    /// Mean per-frame delay of one PT and per-frame system energy under the
    /// all-local policy (x = y = 0, z = 0), averaged over a seeded warmup.
    pub fn all_local_warmup(&self, frames: usize) -> (f64, f64) {
        let k = self.slots_per_frame;
        let frames = frames.max(1);
        let mut delay = 0.0;
        let mut energy = 0.0;
        for t in 0..frames {
            let mut rng = stream_rng(self.seed, Stream::Warmup, t as u64);
            for _ in 0..k {
                for _ in 0..self.num_pts {
                    let lambda = uniform_in(&mut rng, self.task_bits.low, self.task_bits.high);
                    delay += lambda * self.cycles_per_bit_pt / self.cpu_pt;
                    energy += self.kappa_pt * self.cpu_pt.powi(2) * lambda * self.cycles_per_bit_pt;
                }
            }
        }
        let n = self.num_pts.max(1) as f64;
        (delay / (frames as f64 * n), energy / frames as f64)
    }

    /// Mean per-frame delay of one PT and per-frame system energy when every
    /// PT offloads to its nearest ES with `x = y = 0.5` and even shares,
    /// placement charged once per frame. `None` if the layout is unusable.
    pub fn offload_warmup(&self, frames: usize) -> Option<(f64, f64)> {
        if self.num_pts == 0 || self.num_ess == 0 || self.es_positions.len() != self.num_ess || self.slots_per_frame == 0 {
            return None;
        }
        let frames = frames.max(1);
        let mut sc = self.clone();
        sc.frames = frames;
        sc.seed = self.seed ^ WARMUP_SEED_MIX;
        sc.budgets.source = BudgetSource::Explicit;
        if sc.pt_trace.as_ref().is_some_and(|t| t.validate(sc.num_pts, sc.total_slots(), sc.area_side).is_err()) {
            sc.pt_trace = None;
        }
        let k = sc.slots_per_frame;
        let mut delay = 0.0;
        let mut energy = 0.0;
        let mut frame: Option<(LargeDecision, Vec<PlacementCosts>)> = None;
        for slot in SlotGenerator::new(&sc) {
            if slot.is_frame_start(k) {
                let large = LargeDecision::nearest(&sc, &slot, 0.5);
                let small = SmallDecision::default_for(&sc, &large);
                let pl = placement_costs(&sc, &slot, &large, &small.f);
                frame = Some((large, pl));
            }
            let (large, pl) = frame.as_ref()?;
            let small = SmallDecision::default_for(&sc, large);
            let c = per_slot_totals(&sc, &slot, large, &small, pl, k as f64);
            delay += c.pts.iter().map(|p| p.t_tol).sum::<f64>();
            energy += c.e_tol;
        }
        let (d, e) = (delay / (frames * self.num_pts) as f64, energy / frames as f64);
        (d.is_finite() && e.is_finite()).then_some((d, e))
    }

    /// Per-slot budgets in queue units: `(T_i^max/K per PT, E^max/K)`.
    pub fn slot_budgets(&self) -> (Vec<f64>, f64) {
        let k = self.slots_per_frame as f64;
        let t = self.budgets.delay.iter().map(|b| b / k / self.delay_unit).collect();
        (t, self.budgets.energy / k / self.energy_unit)
    }

    /// Share floor for PTs attached to an ES.
    pub fn member_floor(&self) -> f64 {
        self.solver.share_floor.max(self.solver.member_share_floor / self.num_pts as f64)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.num_pts == 0 {
            return bad("num_pts must be at least 1".into());
        }
        if self.num_ess == 0 {
            return bad("num_ess must be at least 1".into());
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if self.slots_per_frame == 0 {
            return bad("K < 1".into());
        }
        if !(self.pathloss_exp >= 2.0) {
            return bad("pathloss_exp < 2".into());
        }
        if !(0.0..=1.0).contains(&self.g_local) {
            return bad("g_local outside [0, 1]".into());
        }
        let positive = [
            ("area_side", self.area_side),
            ("slot_duration", self.slot_duration),
            ("bandwidth_per_es", self.bandwidth_per_es),
            ("tx_power_pt", self.tx_power_pt),
            ("tx_power_cloud", self.tx_power_cloud),
            ("cloud_rate", self.cloud_rate),
            ("noise_psd", self.noise_psd),
            ("cpu_es", self.cpu_es),
            ("cpu_pt", self.cpu_pt),
            ("cycles_per_bit_es", self.cycles_per_bit_es),
            ("cycles_per_bit_pt", self.cycles_per_bit_pt),
            ("kappa_es", self.kappa_es),
            ("kappa_pt", self.kappa_pt),
            ("min_distance", self.min_distance),
            ("delay_unit", self.delay_unit),
            ("energy_unit", self.energy_unit),
            ("share_floor", self.solver.share_floor),
            ("epsilon", self.solver.epsilon),
            ("alternation_epsilon", self.solver.alternation_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return bad(format!("{name} must be strictly positive (got {v})"));
            }
        }
        if !(self.solver.lyapunov_v >= 0.0) || !self.solver.lyapunov_v.is_finite() {
            return bad("lyapunov_v must be finite and >= 0".into());
        }
        if self.solver.share_floor >= 1.0 / self.num_pts as f64 {
            return bad("share_floor must be below 1/num_pts".into());
        }
        if !(0.0..=1.0).contains(&self.solver.member_share_floor) {
            return bad("member_share_floor must lie in [0, 1]".into());
        }
        if self.solver.partitions == 0 {
            return bad("partitions must be at least 1".into());
        }
        if self.solver.max_bcd_iters == 0 || self.solver.max_alternations == 0 {
            return bad("max_bcd_iters and max_alternations must be at least 1".into());
        }
        let ranges = [
            ("rwp_speed", self.rwp_speed),
            ("knowledge_mbit", self.knowledge_bits),
            ("personalized_mbit", self.personalized_bits),
            ("task_mbit", self.task_bits),
        ];
        for (name, r) in ranges {
            if !(r.low <= r.high) {
                return bad(format!("{name} range has low > high"));
            }
            if !(r.low > 0.0) {
                return bad(format!("{name} range must be strictly positive"));
            }
        }
        if self.es_positions.len() != self.num_ess {
            return bad(format!("{} ES positions for num_ess = {}", self.es_positions.len(), self.num_ess));
        }
        for (m, p) in self.es_positions.iter().enumerate() {
            if !(0.0..=self.area_side).contains(&p.x) || !(0.0..=self.area_side).contains(&p.y) {
                return bad(format!("ES {m} lies outside the area"));
            }
        }
        if let Some(trace) = &self.pt_trace {
            trace.validate(self.num_pts, self.total_slots(), self.area_side).map_err(ScenarioError::Trace)?;
        }
        if let BudgetSource::Derived { delay_blend, energy_blend, .. } = self.budgets.source {
            if !delay_blend.is_finite() || !energy_blend.is_finite() {
                return bad("budget blends must be finite".into());
            }
        }
        Ok(())
    }

    fn validate_budgets(&self) -> Result<(), ScenarioError> {
        if self.budgets.delay.len() != self.num_pts || self.budgets.delay.iter().any(|&t| !(t > 0.0)) {
            return Err(ScenarioError::Invalid("delay budget must be strictly positive".into()));
        }
        if !(self.budgets.energy > 0.0) {
            return Err(ScenarioError::Invalid("energy budget must be strictly positive".into()));
        }
        Ok(())
    }

    /// Short human-readable description of where the budgets come from.
    pub fn budget_note(&self) -> String {
        match &self.budgets.source {
            BudgetSource::Explicit => "explicit budgets".into(),
            BudgetSource::Derived { delay_blend, energy_blend, warmup_frames } => format!(
                "budgets derived from a {warmup_frames}-frame warmup between all-local and all-offload costs \
                 (delay blend {delay_blend}, energy blend {energy_blend})"
            ),
        }
    }

    /// Key facts for logs.
    pub fn describe(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("I", self.num_pts.to_string());
        m.insert("M", self.num_ess.to_string());
        m.insert("T", self.frames.to_string());
        m.insert("K", self.slots_per_frame.to_string());
        m.insert("V", self.solver.lyapunov_v.to_string());
        m.insert("T_max_s", format!("{:.4}", self.budgets.delay.first().copied().unwrap_or(0.0)));
        m.insert("E_max_j", format!("{:.4}", self.budgets.energy));
        m.insert("budgets", self.budget_note());
        m
    }
}
