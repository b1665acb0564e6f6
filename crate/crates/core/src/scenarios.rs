//! Named, reproducible experiments: registry, configuration, CSV emission and
//! the run manifest.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::crossing::{
    a_theory, measure_transfer, phase_sweep, run_crossing_experiment, transfer_probability, CrossingExperimentConfig,
    DEFAULT_WINDOW,
};
use crate::error::{LabError, Result};
use crate::experiments::{
    harmonic_refocus, measure_transport_check, structural_invariants, supercritical_instability, wkb_phase_shift,
    RefocusConfig, SupercriticalConfig, TransportCheckConfig, WkbConfig,
};
use crate::scattering::{
    caustic_experiment, first_order_expansion_slope, inverse_fourier_on_grid, modulated_pair, packet_pair_experiment,
    self_dual_grid, CausticConfig, NlsScatteringOptions, PairConfig, Profile,
};
use crate::twoscale::{concentration_regimes, RegimeConfig};

/// One declared tolerance and its measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="`, `">="` or `"=="` (boolean checks use 1 for true).
    pub relation: String,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, relation: "<=".into(), threshold, pass: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, relation: ">=".into(), threshold, pass: value >= threshold }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, relation: "==".into(), threshold: 1.0, pass: ok }
    }
}

/// Checks, written files and a JSON summary of one scenario run.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOutcome {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

impl ScenarioOutcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Registry entry.
pub struct ScenarioInfo {
    pub name: &'static str,
    pub anchor: &'static str,
    pub summary: &'static str,
    pub defaults: fn() -> Value,
    run: fn(Value, u64, &Path) -> Result<ScenarioOutcome>,
}

#[derive(Serialize)]
struct ScenarioListing<'a> {
    name: &'a str,
    anchor: &'a str,
    summary: &'a str,
    defaults: Value,
}

fn defaults_of<T: Default + Serialize>() -> Value {
    serde_json::to_value(T::default()).expect("defaults serialize")
}

pub fn registry() -> Vec<ScenarioInfo> {
    vec![
        ScenarioInfo {
            name: "lz-transfer-curve",
            anchor: "normal form and S(lambda)",
            summary: "measured a(lambda) against exp(-pi lambda^2/2) over lambda and eps",
            defaults: defaults_of::<LzCurveParams>,
            run: |v, _, out| lz_transfer_curve(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "lz-crossing-table",
            anchor: "out-mass table and transfer rule",
            summary: "2D matrix evolution of the out-mass table rows and the single-packet transfer fraction",
            defaults: defaults_of::<CrossingTableParams>,
            run: |v, _, out| lz_crossing_table(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "lz-interference",
            anchor: "interference formula for equal eta",
            summary: "phase sweep of the plus out-mass and its cosine fit",
            defaults: defaults_of::<InterferenceParams>,
            run: |v, _, out| lz_interference(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "two-scale-histograms",
            anchor: "concentration families psi_{0,l}",
            summary: "eta histograms of the three concentration regimes",
            defaults: defaults_of::<RegimeConfig>,
            run: |v, _, out| two_scale_histograms(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "nier-illposed",
            anchor: "wave-packet scattering ill-posedness",
            summary: "single-packet R^2 bookkeeping and the time-reversed vs phase-averaged pair",
            defaults: defaults_of::<PairConfig>,
            run: nier_illposed,
        },
        ScenarioInfo {
            name: "caustic-nls",
            anchor: "caustic crossing and the operator Z",
            summary: "post-focus profile vs dilated Z a0, first-order expansion slope, modulated pair",
            defaults: defaults_of::<CausticParams>,
            run: |v, _, out| caustic_nls(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "wkb-phase-shift",
            anchor: "weakly nonlinear WKB with phase shift G",
            summary: "errors with and without G, Husimi pairings for f = rho vs f = 2 rho",
            defaults: defaults_of::<WkbConfig>,
            run: |v, _, out| wkb_scenario(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "harmonic-refocus",
            anchor: "harmonic oscillator refocusing",
            summary: "psi(pi) against e^{-i pi/2} psi0(-x)",
            defaults: defaults_of::<RefocusConfig>,
            run: |v, _, out| refocus_scenario(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "supercritical-instability",
            anchor: "supercritical instability",
            summary: "amplification of an eps^k perturbation up to C eps^{1-k}",
            defaults: defaults_of::<SupercriticalConfig>,
            run: |v, _, out| supercritical_scenario(&parse(v)?, out),
        },
        ScenarioInfo {
            name: "measure-transport-check",
            anchor: "Wigner transport and density moment",
            summary: "Husimi centroid vs particle transport plus the structural invariants",
            defaults: defaults_of::<TransportCheckConfig>,
            run: |v, _, out| transport_scenario(&parse(v)?, out),
        },
    ]
}

pub fn find_scenario(name: &str) -> Option<ScenarioInfo> {
    registry().into_iter().find(|s| s.name == name)
}

/// Registry as JSON: name, anchor, summary and default parameters per scenario.
pub fn list_scenarios_json() -> Value {
    let items: Vec<ScenarioListing> = registry()
        .iter()
        .map(|s| ScenarioListing { name: s.name, anchor: s.anchor, summary: s.summary, defaults: (s.defaults)() })
        .collect();
    serde_json::to_value(items).expect("listing serializes")
}

fn parse<T: DeserializeOwned + Default>(v: Value) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v).map_err(|e| LabError::Config(format!("parameters: {e}")))
}

/// One run request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    #[serde(default)]
    pub params: Value,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_out() -> String {
    "out".into()
}

fn default_seed() -> u64 {
    7
}

impl ScenarioConfig {
    pub fn new(scenario: &str) -> Self {
        Self { scenario: scenario.into(), params: Value::Null, out: default_out(), workers: None, seed: default_seed() }
    }

    /// Parses a JSON document after applying `key=value` overrides; dotted
    /// keys address nested objects and values are read as JSON, else as strings.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| LabError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ScenarioConfig = serde_json::from_value(doc).map_err(|e| LabError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let info = find_scenario(&self.scenario)
            .ok_or_else(|| LabError::Config(format!("unknown scenario '{}'", self.scenario)))?;
        if self.workers == Some(0) {
            return Err(LabError::Config("workers must be positive".into()));
        }
        if !(self.params.is_null() || self.params.is_object()) {
            return Err(LabError::Config("params must be an object".into()));
        }
        // schema check without running: merge over the defaults and parse
        let merged = merged_params(&info, &self.params);
        check_schema(&info, merged)
    }
}

fn check_schema(info: &ScenarioInfo, v: Value) -> Result<()> {
    let r: std::result::Result<(), String> = match info.name {
        "lz-transfer-curve" => typed::<LzCurveParams>(v),
        "lz-crossing-table" => typed::<CrossingTableParams>(v),
        "lz-interference" => typed::<InterferenceParams>(v),
        "two-scale-histograms" => typed::<RegimeConfig>(v),
        "nier-illposed" => typed::<PairConfig>(v),
        "caustic-nls" => typed::<CausticParams>(v),
        "wkb-phase-shift" => typed::<WkbConfig>(v),
        "harmonic-refocus" => typed::<RefocusConfig>(v),
        "supercritical-instability" => typed::<SupercriticalConfig>(v),
        "measure-transport-check" => typed::<TransportCheckConfig>(v),
        _ => Err("unregistered".into()),
    };
    r.map_err(|e| LabError::Config(format!("params for {}: {e}", info.name)))
}

fn typed<T: DeserializeOwned>(v: Value) -> std::result::Result<(), String> {
    serde_json::from_value::<T>(v).map(|_| ()).map_err(|e| e.to_string())
}

fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override '{spec}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(LabError::Config(format!("override key '{key}' has an empty segment")));
        }
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| LabError::Config(format!("override '{key}' descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert((*p).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*p).to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Shallow-merges user params over the scenario defaults (nested objects merge too).
fn merged_params(info: &ScenarioInfo, user: &Value) -> Value {
    fn merge(base: &mut Value, over: &Value) {
        match (base, over) {
            (Value::Object(b), Value::Object(o)) => {
                for (k, v) in o {
                    match b.get_mut(k) {
                        Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                        _ => {
                            b.insert(k.clone(), v.clone());
                        }
                    }
                }
            }
            (b, o) if !o.is_null() => *b = o.clone(),
            _ => {}
        }
    }
    let mut base = (info.defaults)();
    merge(&mut base, user);
    base
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ScenarioConfig,
    /// Parameters after merging over the defaults.
    pub resolved_params: Value,
    pub version: String,
    pub scenario: String,
    pub anchor: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub wall_seconds: f64,
    pub files: Vec<FileEntry>,
    pub summary: Value,
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok((digest.iter().map(|b| format!("{b:02x}")).collect(), bytes.len() as u64))
}

/// Executes the configured scenario, writes its CSVs and `manifest.json`.
/// Scenario failures are recorded in the manifest; configuration and I/O
/// problems are returned as errors.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let info = find_scenario(&cfg.scenario).expect("validated");
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    let params = merged_params(&info, &cfg.params);
    let start = Instant::now();
    let result = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?
            .install(|| (info.run)(params.clone(), cfg.seed, &out)),
        None => (info.run)(params.clone(), cfg.seed, &out),
    };
    let wall_seconds = start.elapsed().as_secs_f64();
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(e @ LabError::Config(_)) => return Err(e),
        Err(e) => (ScenarioOutcome::default(), Some(e.to_string())),
    };
    let mut files = Vec::new();
    for f in &outcome.files {
        let (sha256, bytes) = sha256_file(f)?;
        let rel = f.strip_prefix(&out).unwrap_or(f).to_string_lossy().into_owned();
        files.push(FileEntry { path: rel, sha256, bytes });
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        resolved_params: params,
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: info.name.to_string(),
        anchor: info.anchor.to_string(),
        pass: error.is_none() && outcome.pass(),
        checks: outcome.checks,
        error,
        wall_seconds,
        files,
        summary: outcome.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| LabError::Io(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), text)?;
    Ok(manifest)
}

/// Runs a scenario in-process with the given parameters (defaults for `Null`).
pub fn run_named(name: &str, params: Value, seed: u64, out: &Path) -> Result<ScenarioOutcome> {
    let info = find_scenario(name).ok_or_else(|| LabError::Config(format!("unknown scenario '{name}'")))?;
    std::fs::create_dir_all(out)?;
    let merged = merged_params(&info, &params);
    (info.run)(merged, seed, out)
}

/// CSV with a `#` JSON metadata line naming the columns and units.
pub fn write_table(path: &Path, kind: &str, units: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# {}", serde_json::json!({"kind": kind, "columns": columns, "units": units}))?;
    writeln!(w, "{}", columns.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

// ---------------------------------------------------------------------------
// crossing scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LzCurveParams {
    pub lambdas: Vec<f64>,
    /// Decreasing list; the tolerance applies at the last entry.
    pub eps: Vec<f64>,
    pub window: f64,
}

impl Default for LzCurveParams {
    fn default() -> Self {
        Self { lambdas: vec![0.0, 0.5, 1.0, 1.5], eps: vec![1e-2, 1e-3, 1e-4], window: DEFAULT_WINDOW }
    }
}

/// Errors below this are round-off (the decoupled `lambda = 0` case).
const ROUNDOFF_FLOOR: f64 = 1e-9;

pub fn lz_transfer_curve(p: &LzCurveParams, out: &Path) -> Result<ScenarioOutcome> {
    if p.lambdas.is_empty() || p.eps.is_empty() {
        return Err(LabError::Config("lambdas and eps must be non-empty".into()));
    }
    let jobs: Vec<(f64, f64)> = p.eps.iter().flat_map(|&e| p.lambdas.iter().map(move |&l| (l, e))).collect();
    let meas = jobs
        .par_iter()
        .map(|&(l, e)| measure_transfer(l, e, p.window).map(|m| m.a))
        .collect::<Result<Vec<f64>>>()?;
    let rows: Vec<Vec<f64>> =
        jobs.iter().zip(&meas).map(|(&(l, e), &a)| vec![l, e, a, a_theory(l), (a - a_theory(l)).abs()]).collect();
    let path = out.join("lz_transfer_curve.csv");
    write_table(&path, "lz_transfer_curve", "dimensionless", &["lambda", "eps", "a_meas", "a_theory", "abs_error"], &rows)?;
    let nl = p.lambdas.len();
    let err = |ie: usize, il: usize| rows[ie * nl + il][4];
    let last = p.eps.len() - 1;
    let worst = (0..nl).map(|il| err(last, il)).fold(0.0, f64::max);
    let mut monotone = true;
    for il in 0..nl {
        for ie in 1..p.eps.len() {
            let (a, b) = (err(ie - 1, il), err(ie, il));
            if b >= a && a.max(b) > ROUNDOFF_FLOOR {
                monotone = false;
            }
        }
    }
    Ok(ScenarioOutcome {
        checks: vec![
            Check::at_most("max |a_meas - exp(-pi lambda^2/2)| at smallest eps", worst, 1e-2),
            Check::holds("error decreases as eps decreases", monotone),
        ],
        files: vec![path],
        summary: serde_json::json!({ "rows": rows }),
    })
}

/// Packet as `[alpha, eta0]`.
pub type PacketSpec = Option<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub plus: PacketSpec,
    pub minus: PacketSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossingTableParams {
    pub eps: f64,
    pub rows: Vec<TableRow>,
    /// Single plus packet for the transfer-fraction check.
    pub single: [f64; 2],
    /// Scales of the single-packet run with their relative tolerances.
    pub single_eps: Vec<f64>,
    pub single_tolerance: Vec<f64>,
}

impl Default for CrossingTableParams {
    fn default() -> Self {
        let eta = 0.5196;
        Self {
            eps: 1.0 / 256.0,
            rows: vec![
                TableRow { plus: Some([0.3, eta]), minus: Some([0.3, eta]) },
                TableRow { plus: Some([0.4, 1.0]), minus: Some([0.5, eta]) },
                TableRow { plus: Some([0.5, eta]), minus: Some([0.4, 1.0]) },
                TableRow { plus: Some([0.5, eta]), minus: Some([0.5, -0.8]) },
            ],
            single: [0.5, eta],
            single_eps: vec![1.0 / 256.0, 1.0 / 512.0],
            single_tolerance: vec![0.10, 0.07],
        }
    }
}

fn pair(p: PacketSpec) -> Option<(f64, f64)> {
    p.map(|v| (v[0], v[1]))
}

#[derive(Debug, Clone, Serialize)]
pub struct TableOutcome {
    pub predicted: [f64; 2],
    pub measured: [f64; 2],
    pub deviation: [f64; 2],
    pub mass_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleOutcome {
    pub eps: f64,
    pub fraction: f64,
    pub target: f64,
    pub relative_error: f64,
}

pub fn lz_crossing_table(p: &CrossingTableParams, out: &Path) -> Result<ScenarioOutcome> {
    if p.single_eps.len() != p.single_tolerance.len() {
        return Err(LabError::Config("single_eps and single_tolerance must have equal length".into()));
    }
    let table: Vec<TableOutcome> = p
        .rows
        .par_iter()
        .map(|r| {
            let cfg = CrossingExperimentConfig::reference(p.eps, pair(r.plus), pair(r.minus));
            let rep = run_crossing_experiment(&cfg, None)?;
            Ok(TableOutcome {
                predicted: [rep.predicted.c_plus, rep.predicted.c_minus],
                measured: rep.measured,
                deviation: rep.deviation,
                mass_drift: rep.max_mass_drift,
            })
        })
        .collect::<Result<_>>()?;
    let target = transfer_probability(p.single[1], 1.0)?;
    let singles: Vec<SingleOutcome> = p
        .single_eps
        .par_iter()
        .map(|&eps| {
            let cfg = CrossingExperimentConfig::reference(eps, Some((p.single[0], p.single[1])), None);
            let rep = run_crossing_experiment(&cfg, None)?;
            let fraction = rep.minus_fraction();
            Ok(SingleOutcome { eps, fraction, target, relative_error: (fraction - target).abs() / target })
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = p
        .rows
        .iter()
        .zip(&table)
        .enumerate()
        .map(|(i, (r, t))| {
            let pp = r.plus.unwrap_or([f64::NAN; 2]);
            let pm = r.minus.unwrap_or([f64::NAN; 2]);
            vec![
                i as f64, pp[0], pp[1], pm[0], pm[1], t.predicted[0], t.predicted[1], t.measured[0], t.measured[1],
                t.deviation[0], t.deviation[1], t.mass_drift,
            ]
        })
        .collect();
    let table_path = out.join("lz_crossing_table.csv");
    write_table(
        &table_path,
        "lz_crossing_table",
        "mass (packet mass units); eta dimensionless",
        &[
            "row", "alpha_plus", "eta_plus", "alpha_minus", "eta_minus", "c_plus_pred", "c_minus_pred", "c_plus_meas",
            "c_minus_meas", "dev_plus", "dev_minus", "mass_drift",
        ],
        &rows,
    )?;
    let single_path = out.join("lz_single_transfer.csv");
    let srows: Vec<Vec<f64>> = singles.iter().map(|s| vec![s.eps, s.fraction, s.target, s.relative_error]).collect();
    write_table(&single_path, "lz_single_transfer", "dimensionless", &["eps", "fraction", "target", "relative_error"], &srows)?;
    let mut checks = Vec::new();
    for (s, tol) in singles.iter().zip(&p.single_tolerance) {
        checks.push(Check::at_most(format!("single-packet transfer relative error at eps = {}", s.eps), s.relative_error, *tol));
    }
    for (i, t) in table.iter().enumerate() {
        checks.push(Check::at_most(format!("row {i} out-mass relative deviation"), t.deviation[0].max(t.deviation[1]), 0.10));
        checks.push(Check::at_most(format!("row {i} mass drift"), t.mass_drift, 1e-6));
    }
    Ok(ScenarioOutcome {
        checks,
        files: vec![table_path, single_path],
        summary: serde_json::json!({ "table": to_json(&table), "single": to_json(&singles) }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferenceParams {
    pub eps: f64,
    pub alpha: f64,
    pub eta: f64,
    pub phases: usize,
}

impl Default for InterferenceParams {
    fn default() -> Self {
        Self { eps: 1.0 / 256.0, alpha: 0.5, eta: 0.5196, phases: 8 }
    }
}

pub fn lz_interference(p: &InterferenceParams, out: &Path) -> Result<ScenarioOutcome> {
    if p.phases < 4 {
        return Err(LabError::Config("need at least four phases".into()));
    }
    let cfg = CrossingExperimentConfig::reference(p.eps, Some((p.alpha, p.eta)), Some((p.alpha, p.eta)));
    let phis: Vec<f64> = (0..p.phases).map(|k| 2.0 * PI * k as f64 / p.phases as f64).collect();
    let s = phase_sweep(&cfg, &phis)?;
    let rows: Vec<Vec<f64>> = (0..phis.len())
        .map(|i| {
            let fit = s.fit.a + s.fit.b * (s.fit.phi0 - phis[i]).cos();
            vec![phis[i], s.c_plus[i], s.c_minus[i], fit]
        })
        .collect();
    let path = out.join("lz_interference.csv");
    write_table(&path, "lz_interference", "phase in radians; masses in packet units", &["phi", "c_plus", "c_minus", "fit"], &rows)?;
    let ratio = if s.fit.rms > 0.0 { s.fit.b / s.fit.rms } else { f64::INFINITY };
    Ok(ScenarioOutcome {
        checks: vec![Check::at_least("fitted B / fit rms", ratio, 3.0)],
        files: vec![path],
        summary: to_json(&s.fit),
    })
}

// ---------------------------------------------------------------------------
// two-scale histograms

pub fn two_scale_histograms(cfg: &RegimeConfig, out: &Path) -> Result<ScenarioOutcome> {
    let rows = concentration_regimes(cfg)?;
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let mut summary = Vec::new();
    for r in &rows {
        let path = out.join(format!("two_scale_beta_{:.2}.csv", r.beta));
        r.histogram.write_csv(&path)?;
        files.push(path);
        if r.beta < 0.5 {
            checks.push(Check::at_least(format!("beta = {} mass in |eta| <= eta_max/10", r.beta), r.central_fraction, 0.8));
        } else if r.beta == 0.5 {
            checks.push(Check::at_most(format!("beta = {} L1 distance to gamma", r.beta), r.gamma_l1, 0.1));
        } else {
            checks.push(Check::at_least(format!("beta = {} overflow fraction", r.beta), r.overflow_fraction, 0.8));
        }
        summary.push(vec![r.beta, r.n as f64, r.central_fraction, r.gamma_l1, r.overflow_fraction]);
    }
    let path = out.join("two_scale_summary.csv");
    write_table(&path, "two_scale_summary", "fractions of normalized eta mass", &["beta", "n", "central_fraction", "gamma_l1", "overflow_fraction"], &summary)?;
    files.push(path);
    Ok(ScenarioOutcome { checks, files, summary: serde_json::json!({ "rows": summary }) })
}

// ---------------------------------------------------------------------------
// scattering scenarios

fn nier_illposed(v: Value, seed: u64, out: &Path) -> Result<ScenarioOutcome> {
    let mut cfg: PairConfig = parse(v)?;
    cfg.seed = seed;
    nier_scenario(&cfg, out)
}

pub fn nier_scenario(cfg: &PairConfig, out: &Path) -> Result<ScenarioOutcome> {
    let r = packet_pair_experiment(cfg)?;
    let quad = |q: [f64; 4]| q.to_vec();
    let rows = vec![quad(r.breve_in), quad(r.breve_out), quad(r.tilde_in), quad(r.tilde_out)];
    let path = out.join("nier_quadrants.csv");
    write_table(
        &path,
        "nier_quadrants",
        "normalized mass; rows breve_in, breve_out, tilde_in, tilde_out",
        &["x_neg_xi_neg", "x_neg_xi_pos", "x_pos_xi_neg", "x_pos_xi_pos"],
        &rows,
    )?;
    let path2 = out.join("nier_bookkeeping.csv");
    write_table(
        &path2,
        "nier_bookkeeping",
        "dimensionless",
        &["r2", "t2", "oracle_r2", "pred_forward", "pred_backward", "meas_forward", "meas_backward"],
        &[vec![r.r2, r.t2, r.oracle_r2, r.predicted_split[0], r.predicted_split[1], r.measured_split[0], r.measured_split[1]]],
    )?;
    Ok(ScenarioOutcome {
        checks: vec![
            Check::at_most("|R^2 + T^2 - 1|", r.bookkeeping_defect, 0.01),
            Check::at_most("incoming quadrant gap", r.incoming_gap, 0.02),
            Check::at_least("outgoing total variation", r.outgoing_tv, 0.2),
            Check::at_most("phase-averaged split relative deviation", r.split_deviation, 0.15),
        ],
        files: vec![path, path2],
        summary: to_json(&r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CausticParams {
    pub eps: f64,
    pub amplitude: f64,
    pub scattering: NlsScatteringOptions,
    /// Amplitudes of the first-order expansion test.
    pub deltas: Vec<f64>,
    /// Self-dual grid size of the expansion test.
    pub expansion_n: usize,
    /// Quartic phase separating the modulated pair.
    pub modulation: f64,
    pub pair_n: usize,
    /// Optional smaller scale with the 5% target.
    pub stretch_eps: Option<f64>,
}

impl Default for CausticParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            amplitude: 1.0,
            scattering: NlsScatteringOptions::default(),
            deltas: vec![0.05, 0.1, 0.2],
            expansion_n: 256,
            modulation: 1.0,
            pair_n: 512,
            stretch_eps: None,
        }
    }
}

pub fn caustic_nls(p: &CausticParams, out: &Path) -> Result<ScenarioOutcome> {
    let profile = Profile::gaussian(p.amplitude);
    let mut epss = vec![p.eps];
    epss.extend(p.stretch_eps);
    let reports = epss
        .iter()
        .map(|&e| caustic_experiment(&CausticConfig { scattering: p.scattering, ..CausticConfig::for_eps(e, profile) }))
        .collect::<Result<Vec<_>>>()?;
    let g = self_dual_grid(p.expansion_n)?;
    let psi = inverse_fourier_on_grid(&Profile::gaussian(1.0).sample(&g))?;
    let slope = first_order_expansion_slope(&psi, &p.deltas, &p.scattering)?;
    let pair = modulated_pair(&profile, p.modulation, p.pair_n, &p.scattering)?;
    let crow: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| vec![r.eps, r.pre_error, r.post_error, r.post_error_linear, r.max_mass_drift, r.zeta_norm_defect])
        .collect();
    let cpath = out.join("caustic_profiles.csv");
    write_table(&cpath, "caustic_profiles", "relative L2 errors", &["eps", "pre_error", "post_error", "post_error_linear", "mass_drift", "zeta_norm_defect"], &crow)?;
    let srows: Vec<Vec<f64>> = slope.deltas.iter().zip(&slope.residuals).map(|(d, r)| vec![*d, *r]).collect();
    let spath = out.join("first_order_remainders.csv");
    write_table(&spath, "first_order_remainders", "L2 norm", &["delta", "remainder"], &srows)?;
    let ppath = out.join("modulated_pair.csv");
    write_table(
        &ppath,
        "modulated_pair",
        "L2 norms of squared-modulus differences",
        &["input_gap", "output_gap", "sup_gap", "tolerance", "first_order_gap"],
        &[vec![pair.input_gap, pair.output_gap, pair.sup_gap, pair.tolerance, pair.first_order_gap]],
    )?;
    let mut checks = vec![
        Check::at_most(format!("post-focus error at eps = {}", reports[0].eps), reports[0].post_error, 0.15),
        Check::at_most(format!("pre-focus error at eps = {}", reports[0].eps), reports[0].pre_error, 0.05),
    ];
    if let Some(r) = reports.get(1) {
        checks.push(Check::at_most(format!("post-focus error at eps = {}", r.eps), r.post_error, 0.05));
    }
    checks.push(Check::at_least("first-order remainder slope", slope.slope, 7.0));
    checks.push(Check::at_least("modulated pair gap / oracle tolerance", pair.output_gap / pair.tolerance, 20.0));
    Ok(ScenarioOutcome {
        checks,
        files: vec![cpath, spath, ppath],
        summary: serde_json::json!({ "caustic": to_json(&reports), "expansion": to_json(&slope), "pair": to_json(&pair) }),
    })
}

// ---------------------------------------------------------------------------
// scalar experiments

pub fn wkb_scenario(cfg: &WkbConfig, out: &Path) -> Result<ScenarioOutcome> {
    let r = wkb_phase_shift(cfg)?;
    let rows: Vec<Vec<f64>> = r.rows.iter().map(|w| vec![w.eps, w.with_g, w.without_g, w.husimi_gap, 10.0 * w.eps.sqrt()]).collect();
    let path = out.join("wkb_phase_shift.csv");
    write_table(&path, "wkb_phase_shift", "absolute L2 errors; pairing differences", &["eps", "with_g_error", "without_g_error", "husimi_gap", "husimi_tolerance"], &rows)?;
    let mut checks = Vec::new();
    for (i, q) in r.halving_ratios.iter().enumerate() {
        checks.push(Check::at_least(format!("with-G halving ratio {i} lower"), *q, 1.5));
        checks.push(Check::at_most(format!("with-G halving ratio {i} upper"), *q, 2.5));
    }
    for w in &r.rows {
        checks.push(Check::at_least(format!("without-G error at eps = {}", w.eps), w.without_g, 0.1));
        checks.push(Check::at_most(format!("Husimi gap / sqrt(eps) at eps = {}", w.eps), w.husimi_gap / w.eps.sqrt(), 10.0));
    }
    Ok(ScenarioOutcome { checks, files: vec![path], summary: to_json(&r) })
}

pub fn refocus_scenario(cfg: &RefocusConfig, out: &Path) -> Result<ScenarioOutcome> {
    let r = harmonic_refocus(cfg)?;
    let path = out.join("harmonic_refocus.csv");
    write_table(&path, "harmonic_refocus", "L2 norms", &["steps", "modulus_error", "full_error", "mass_drift"], &[vec![r.steps as f64, r.modulus_error, r.full_error, r.mass_drift]])?;
    Ok(ScenarioOutcome {
        checks: vec![
            Check::at_most("|| |psi(pi)| - |psi0(-x)| ||", r.modulus_error, 1e-4),
            Check::at_most("mass drift", r.mass_drift, 1e-10),
        ],
        files: vec![path],
        summary: to_json(&r),
    })
}

pub fn supercritical_scenario(cfg: &SupercriticalConfig, out: &Path) -> Result<ScenarioOutcome> {
    let rows = supercritical_instability(cfg)?;
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.eps, r.horizon, r.initial_gap, r.max_gap, r.ratio]).collect();
    let path = out.join("supercritical.csv");
    write_table(&path, "supercritical", "L2 norms; horizon in time units", &["eps", "horizon", "initial_gap", "max_gap", "ratio"], &table)?;
    // ratio must grow as eps decreases
    let mut order: Vec<&crate::experiments::SupercriticalRow> = rows.iter().collect();
    order.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let monotone = order.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let smallest = order.last().map_or(0.0, |r| r.ratio);
    Ok(ScenarioOutcome {
        checks: vec![
            Check::holds("ratio increases as eps decreases", monotone),
            Check::at_least("ratio at the smallest eps", smallest, 5.0),
        ],
        files: vec![path],
        summary: to_json(&rows),
    })
}

pub fn transport_scenario(cfg: &TransportCheckConfig, out: &Path) -> Result<ScenarioOutcome> {
    let rows = measure_transport_check(cfg)?;
    let mut table = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        for i in 0..r.times.len() {
            let (h, q) = (r.husimi_centroid[i], r.particle_centroid[i]);
            table.push(vec![k as f64, r.times[i], h[0], h[1], q[0], q[1]]);
        }
    }
    let path = out.join("measure_transport.csv");
    write_table(&path, "measure_transport", "phase-space coordinates; potential index into params.potentials", &["potential", "t", "husimi_x", "husimi_xi", "particle_x", "particle_xi"], &table)?;
    let s = structural_invariants()?;
    let spath = out.join("structural_invariants.csv");
    write_table(
        &spath,
        "structural_invariants",
        "absolute errors",
        &["moment_error", "husimi_min", "mass_drift_1e4", "harmonic_centroid_gap", "gaussian_wigner_error"],
        &[vec![s.moment_error, s.husimi_min, s.mass_drift_1e4, s.harmonic_centroid_gap, s.gaussian_wigner_error]],
    )?;
    let tol = 2.0 * cfg.eps.sqrt();
    let mut checks: Vec<Check> = rows
        .iter()
        .map(|r| Check::at_most(format!("centroid gap under {:?}", r.potential), r.max_deviation, tol))
        .collect();
    checks.push(Check::at_most("density moment identity", s.moment_error, 1e-12));
    checks.push(Check::at_least("Husimi minimum", s.husimi_min, -1e-12));
    checks.push(Check::at_most("linear mass drift per 1e4 steps", s.mass_drift_1e4, 1e-10));
    checks.push(Check::at_most("harmonic centroid gap (eps = 1e-2)", s.harmonic_centroid_gap, 0.2));
    checks.push(Check::at_most("Gaussian Wigner closed form", s.gaussian_wigner_error, 1e-6));
    Ok(ScenarioOutcome {
        checks,
        files: vec![path, spath],
        summary: serde_json::json!({ "transport": to_json(&rows), "structural": to_json(&s) }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_ten_distinct_scenarios() {
        let r = registry();
        assert_eq!(r.len(), 10);
        let mut names: Vec<&str> = r.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 10);
        for s in &r {
            // defaults round-trip through the schema
            check_schema(s, (s.defaults)()).unwrap();
        }
        let listing = list_scenarios_json();
        assert_eq!(listing.as_array().unwrap().len(), 10);
    }

    #[test]
    fn unknown_scenario_and_keys_rejected() {
        assert!(matches!(ScenarioConfig::from_json(r#"{"scenario": "nope"}"#, &[]), Err(LabError::Config(_))));
        assert!(ScenarioConfig::from_json(r#"{"scenario": "harmonic-refocus", "extra": 1}"#, &[]).is_err());
        assert!(ScenarioConfig::from_json(r#"{"scenario": "harmonic-refocus", "params": {"bogus": 1}}"#, &[]).is_err());
        assert!(ScenarioConfig::from_json(r#"{"scenario": "harmonic-refocus", "params": {"eps": "x"}}"#, &[]).is_err());
    }

    #[test]
    fn overrides_reach_nested_params() {
        let c = ScenarioConfig::from_json(
            r#"{"scenario": "harmonic-refocus"}"#,
            &["params.eps=0.02".into(), "seed=11".into(), "out=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!(c.params["eps"], serde_json::json!(0.02));
        assert_eq!(c.seed, 11);
        assert_eq!(c.out, "/tmp/x");
        assert!(ScenarioConfig::from_json(r#"{"scenario": "harmonic-refocus"}"#, &["noequals".into()]).is_err());
    }

    #[test]
    fn merge_keeps_unset_defaults() {
        let info = find_scenario("supercritical-instability").unwrap();
        let m = merged_params(&info, &serde_json::json!({"k": 0.4}));
        assert_eq!(m["k"], serde_json::json!(0.4));
        assert_eq!(m["n"], serde_json::json!(4096));
    }

    #[test]
    fn transport_run_is_byte_stable_across_worker_counts() {
        let base = std::env::temp_dir().join("semiclab_scenario_transport");
        let mut hashes = Vec::new();
        for w in [1usize, 3] {
            let mut cfg = ScenarioConfig::new("measure-transport-check");
            cfg.params = serde_json::json!({"n": 1024, "samples": 3});
            cfg.workers = Some(w);
            cfg.out = base.join(format!("w{w}")).to_string_lossy().into_owned();
            let m = run_scenario(&cfg).unwrap();
            assert!(m.pass, "{:?}", m.checks);
            assert!(m.files.iter().all(|f| f.sha256.len() == 64));
            hashes.push(m.files.iter().map(|f| f.sha256.clone()).collect::<Vec<_>>());
            let text = std::fs::read_to_string(base.join(format!("w{w}")).join("measure_transport.csv")).unwrap();
            assert!(text.starts_with("# {"));
        }
        assert_eq!(hashes[0], hashes[1]);
    }

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1.0, 1.0).pass);
        assert!(!Check::at_least("a", 0.5, 1.0).pass);
        assert!(!Check::at_most("nan", f64::NAN, 1.0).pass);
        assert!(!Check::holds("b", false).pass);
    }
}
