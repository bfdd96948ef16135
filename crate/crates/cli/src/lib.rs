//! Commands behind the `taco` binary: single runs, parameter sweeps and the
//! validation suites.

use rayon::prelude::*;
use serde::Deserialize;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use taco_core::controller::{run_policy, Policy, RunError};
use taco_core::metrics::summarize;
use taco_core::report::{write_slots, write_summary, SummaryRow};
use taco_core::scenario::{build_scenario_from_table, parse_config_table, set_config_value};
use taco_core::validate::{run_suite, Suite};
use taco_core::{Scenario, ScenarioError};

/// Base configuration of a sweep that names none: the desk-scale scenario.
pub const DESK_CONFIG: &str = "[system]\nnum_pts = 10\nnum_ess = 4\nframes = 100\nslots_per_frame = 10\n";

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Scenario(s) => CliError::Config(s.to_string()),
            RunError::Invariant { .. } => CliError::Invariant(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Settings given on the command line that override the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub round_z: Option<String>,
    pub pathloss_sign: Option<String>,
}

impl Overrides {
    fn apply(&self, table: &mut toml::Table) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            let v = i64::try_from(s).map_err(|_| CliError::Config(format!("seed {s} is too large")))?;
            set_config_value(table, "rng.seed", toml::Value::Integer(v))?;
        }
        if let Some(r) = &self.round_z {
            set_config_value(table, "solver.round_z", toml::Value::String(r.clone()))?;
        }
        if let Some(p) = &self.pathloss_sign {
            set_config_value(table, "radio.pathloss_sign", toml::Value::String(p.clone()))?;
        }
        Ok(())
    }
}

pub fn parse_policies(list: &str) -> Result<Vec<Policy>, CliError> {
    let mut out = Vec::new();
    for p in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let p: Policy = p.parse().map_err(CliError::Config)?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no policy given".into()));
    }
    Ok(out)
}

fn read_config(path: &Path) -> Result<(toml::Table, Option<PathBuf>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let table = parse_config_table(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((table, path.parent().map(Path::to_path_buf)))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Runs each policy on the configured scenario and writes `slots.csv` and
/// `summary.csv` to `out`. Returns the summary rows.
pub fn cmd_run(config: &Path, policies: &[Policy], out: &Path, ov: &Overrides) -> Result<Vec<SummaryRow>, CliError> {
    let (mut table, base) = read_config(config)?;
    ov.apply(&mut table)?;
    let sc = build_scenario_from_table(table, base.as_deref())?;
    log::info!("scenario: I={} M={} T={} K={} seed={}", sc.num_pts, sc.num_ess, sc.frames, sc.slots_per_frame, sc.seed);
    log::info!("{}", sc.budget_note());
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    let mut first_err: Option<CliError> = None;
    for &p in policies {
        let start = std::time::Instant::now();
        match run_policy(&sc, p) {
            Ok(tr) => {
                log::info!("{p}: {} slots in {:.2?}", tr.records.len(), start.elapsed());
                rows.push(SummaryRow::ok(summarize(&tr), "", ""));
                traces.push(tr);
            }
            Err(e) => {
                log::error!("{p}: {e}");
                rows.push(SummaryRow::failed(p, sc.seed, "", "", &e.to_string()));
                first_err.get_or_insert(e.into());
            }
        }
    }
    create_dir(out)?;
    let slots_path = out.join("slots.csv");
    let f = fs::File::create(&slots_path).map_err(|e| io_err(&slots_path, e))?;
    let refs: Vec<_> = traces.iter().collect();
    write_slots(BufWriter::new(f), &refs).map_err(|e| io_err(&slots_path, e))?;
    let summary_path = out.join("summary.csv");
    let f = fs::File::create(&summary_path).map_err(|e| io_err(&summary_path, e))?;
    write_summary(BufWriter::new(f), &rows).map_err(|e| io_err(&summary_path, e))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

/// Sweep description read from TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Config key as `section.key`, for example `radio.bandwidth_mhz`.
    pub param: String,
    pub values: Vec<toml::Value>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    pub out: PathBuf,
    /// Base config; the desk scenario when absent. Relative to the spec.
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Title used in the plot script.
    #[serde(default)]
    pub title: Option<String>,
}

fn default_policies() -> Vec<String> {
    vec!["taco".into(), "cro".into(), "lot".into()]
}

/// A checked sweep ready to run.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<toml::Value>,
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    pub policies: Vec<Policy>,
    pub out: PathBuf,
    pub title: String,
    base: toml::Table,
    base_dir: Option<PathBuf>,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(f) => format!("{f}"),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Sweep {
    pub fn load(spec_path: &Path) -> Result<Sweep, CliError> {
        let text = fs::read_to_string(spec_path)
            .map_err(|e| CliError::Config(format!("cannot read sweep spec {}: {e}", spec_path.display())))?;
        let spec: SweepSpec =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", spec_path.display(), e.message())))?;
        let dir = spec_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let (base, base_dir) = match &spec.config {
            Some(c) => read_config(&dir.join(c))?,
            None => (parse_config_table(DESK_CONFIG)?, None),
        };
        let out = if spec.out.is_relative() { dir.join(&spec.out) } else { spec.out.clone() };
        Sweep::new(spec, base, base_dir, out)
    }

    pub fn new(spec: SweepSpec, base: toml::Table, base_dir: Option<PathBuf>, out: PathBuf) -> Result<Sweep, CliError> {
        if spec.values.is_empty() {
            return Err(CliError::Config("sweep spec has an empty value list".into()));
        }
        if spec.seeds.is_empty() {
            return Err(CliError::Config("sweep spec needs at least one seed".into()));
        }
        let policies = parse_policies(&spec.policies.join(","))?;
        // Every value must give a valid scenario before anything runs.
        for v in &spec.values {
            let mut t = base.clone();
            set_config_value(&mut t, &spec.param, v.clone())?;
            build_scenario_from_table(t, base_dir.as_deref())
                .map_err(|e| CliError::Config(format!("{} = {}: {e}", spec.param, value_label(v))))?;
        }
        Ok(Sweep {
            labels: spec.values.iter().map(value_label).collect(),
            title: spec.title.clone().unwrap_or_else(|| format!("sweep over {}", spec.param)),
            param: spec.param,
            values: spec.values,
            seeds: spec.seeds,
            policies,
            out,
            base,
            base_dir,
        })
    }

    fn scenario(&self, value: usize, seed: u64, ov: &Overrides) -> Result<Scenario, CliError> {
        let mut t = self.base.clone();
        set_config_value(&mut t, &self.param, self.values[value].clone())?;
        let ov = Overrides { seed: Some(seed), ..ov.clone() };
        ov.apply(&mut t)?;
        Ok(build_scenario_from_table(t, self.base_dir.as_deref())?)
    }

    /// Runs every `(value, seed, policy)` on up to `jobs` threads. Rows come
    /// back in that order whatever the completion order.
    pub fn run(&self, jobs: usize, ov: &Overrides) -> Result<Vec<SummaryRow>, CliError> {
        let mut tasks = Vec::new();
        for v in 0..self.values.len() {
            for &s in &self.seeds {
                for &p in &self.policies {
                    tasks.push((v, s, p));
                }
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
        let rows = pool.install(|| {
            tasks
                .par_iter()
                .map(|&(v, seed, p)| {
                    let label = &self.labels[v];
                    let res = self.scenario(v, seed, ov).and_then(|sc| run_policy(&sc, p).map_err(CliError::from));
                    match res {
                        Ok(tr) => {
                            log::info!("{}={label} seed {seed} {p}: done", self.param);
                            SummaryRow::ok(summarize(&tr), &self.param, label)
                        }
                        Err(e) => {
                            log::warn!("{}={label} seed {seed} {p}: {e}", self.param);
                            SummaryRow::failed(p, seed, &self.param, label, &e.to_string())
                        }
                    }
                })
                .collect::<Vec<_>>()
        });
        Ok(rows)
    }

    /// Per `(value, policy)` means over the successful seeds.
    pub fn means_csv(&self, rows: &[SummaryRow]) -> String {
        let mut s = String::from("policy,value,runs,mean_A,mean_T_resp,mean_E,placement_delay,updating_delay\n");
        for label in &self.labels {
            for &p in &self.policies {
                let ms: Vec<_> =
                    rows.iter().filter(|r| &r.value == label && r.policy == p).filter_map(|r| r.metrics.as_ref()).collect();
                if ms.is_empty() {
                    continue;
                }
                let n = ms.len() as f64;
                let mean = |f: &dyn Fn(&taco_core::metrics::MetricsSummary) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
                let _ = writeln!(
                    s,
                    "{},{label},{},{},{},{},{},{}",
                    p.name(),
                    ms.len(),
                    mean(&|m| m.mean_accuracy),
                    mean(&|m| m.mean_response_delay),
                    mean(&|m| m.mean_energy),
                    mean(&|m| m.placement_delay),
                    mean(&|m| m.updating_delay)
                );
            }
        }
        s
    }

    /// Gnuplot commands that draw each metric of `means.csv` against the
    /// swept value, one line per policy.
    pub fn plot_script(&self) -> String {
        let policies: Vec<&str> = self.policies.iter().map(|p| p.name()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.title);
        let _ = writeln!(s, "# Data: means.csv, one row per swept value and policy, averaged over seeds.");
        let _ = writeln!(s, "# Usage: gnuplot plot.gp  (writes plot.png next to the data)");
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set terminal pngcairo size 1500,900");
        let _ = writeln!(s, "set output 'plot.png'");
        let _ = writeln!(s, "set multiplot layout 2,3 title '{}'", self.title.replace('\'', ""));
        let _ = writeln!(s, "set xlabel '{}'", self.param);
        let _ = writeln!(s, "set key top left");
        let _ = writeln!(s, "policies = '{}'", policies.join(" "));
        for (col, label) in [
            (4, "mean accuracy"),
            (5, "mean response delay (s)"),
            (6, "mean energy per slot (J)"),
            (7, "placement delay (s)"),
            (8, "updating delay (s)"),
        ] {
            let _ = writeln!(s, "set ylabel '{label}'");
            let _ = writeln!(
                s,
                "plot for [p in policies] 'means.csv' using 2:(strcol(1) eq p ? ${col} : NaN) skip 1 with linespoints title p"
            );
        }
        let _ = writeln!(s, "unset multiplot");
        s
    }

    /// Writes `summary.csv`, `means.csv` and `plot.gp` to the output directory.
    pub fn write(&self, rows: &[SummaryRow]) -> Result<(), CliError> {
        create_dir(&self.out)?;
        let path = self.out.join("summary.csv");
        let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_summary(BufWriter::new(f), rows).map_err(|e| io_err(&path, e))?;
        for (name, text) in [("means.csv", self.means_csv(rows)), ("plot.gp", self.plot_script())] {
            let path = self.out.join(name);
            fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

/// Loads, runs and writes a sweep. Fails with a runtime error only when no
/// row succeeded.
pub fn cmd_sweep(spec: &Path, jobs: usize, out: Option<&Path>, ov: &Overrides) -> Result<Vec<SummaryRow>, CliError> {
    let mut sweep = Sweep::load(spec)?;
    if let Some(o) = out {
        sweep.out = o.to_path_buf();
    }
    let rows = sweep.run(jobs, ov)?;
    sweep.write(&rows)?;
    let ok = rows.iter().filter(|r| r.metrics.is_some()).count();
    log::info!("{ok}/{} rows succeeded; output in {}", rows.len(), sweep.out.display());
    if ok == 0 {
        return Err(CliError::Runtime(format!("all {} sweep rows failed", rows.len())));
    }
    Ok(rows)
}

/// Runs the named suites and prints one report per suite.
pub fn cmd_validate(suites: &[Suite], seed: u64) -> Result<(), CliError> {
    let mut failed = Vec::new();
    for &s in suites {
        let r = run_suite(s, seed);
        println!("{r}");
        if !r.passed() {
            failed.push(format!("{s} ({} of {} checks failed)", r.failures, r.checks));
        }
    }
    if failed.is_empty() {
        println!("all {} suites passed", suites.len());
        Ok(())
    } else {
        Err(CliError::Invariant(format!("invariant violations in {}", failed.join(", "))))
    }
}
