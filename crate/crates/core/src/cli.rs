//! Command-line front end.
//!
//! Settings are resolved from built-in defaults, then an optional flat
//! `key = value` file (`--config`), then command-line flags. Every run writes
//! its data files together with a JSON manifest and a `.config` file that
//! reproduces the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    dyadic, evolution_snapshot, logspace, moment_study, steps_for, strong_error_study, verify_eq_ineq,
    ErrorMode, ErrorTable, Evolution, ExperimentConfig, IneqConstants, MomentTable,
};
use crate::flows::TAU0;
use crate::schemes::{SchemeConfig, SchemeKind, DEFAULT_SNAPSHOTS};
use crate::spatial::{Backend, Grid};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Ceiling asserted on both inequality constants.
pub const INEQ_CEILING: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "fhn", version, about = "Splitting integrators for the stochastic FitzHugh-Nagumo system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trajectory and write space-time snapshots.
    Simulate(RunArgs),
    /// Coupled strong-error study with fitted rates.
    StrongError(RunArgs),
    /// Moment study, including the Euler-Maruyama baseline.
    Moments(RunArgs),
    /// Scan the resolvent/semigroup inequality constants.
    VerifyIneq(IneqArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::StrongError(_) => "strong-error",
            Command::Moments(_) => "moments",
            Command::VerifyIneq(_) => "verify-ineq",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Scheme name, or a comma-separated list; `splitting` and `all` expand.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub n_modes: Option<usize>,
    #[arg(long, value_parser = ["fd", "spectral"])]
    pub backend: Option<String>,
    /// Step size for `simulate`.
    #[arg(long)]
    pub tau: Option<String>,
    /// Comma-separated decreasing dyadic step sizes, e.g. `2^-5,2^-6`.
    #[arg(long)]
    pub tau_list: Option<String>,
    #[arg(long)]
    pub tau_ref: Option<String>,
    /// Final time.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Moment order.
    #[arg(long)]
    pub p: Option<f64>,
    /// `cosine:<a>` or `constant:<u>,<v>`.
    #[arg(long, allow_hyphen_values = true)]
    pub initial: Option<String>,
    /// Measure the maximum error over time instead of the error at `T`.
    #[arg(long)]
    pub sup_error: bool,
    /// Disable the noise (`simulate`).
    #[arg(long)]
    pub no_noise: bool,
    /// Number of snapshots kept by `simulate`.
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IneqArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub z_min: f64,
    #[arg(long, default_value_t = 1e3)]
    pub z_max: f64,
    #[arg(long, default_value_t = 10_000)]
    pub z_count: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Keys accepted in settings files, in canonical (underscore) form.
pub const KEYS: [&str; 19] = [
    "scheme",
    "n_modes",
    "backend",
    "tau",
    "tau_list",
    "tau_ref",
    "T",
    "samples",
    "seed",
    "gamma1",
    "gamma2",
    "beta",
    "p",
    "initial",
    "error_mode",
    "noise",
    "snapshots",
    "out_dir",
    "jobs",
];

fn canonical_key(raw: &str) -> Result<&'static str> {
    let k = raw.trim().replace('-', "_");
    KEYS.iter()
        .find(|&&known| known == k || (known == "T" && k == "t"))
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown setting '{}'", raw.trim())))
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = canonical_key(k)?;
        if out.insert(key.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate setting '{key}'", i + 1)));
        }
    }
    Ok(out)
}

pub fn render_settings(settings: &BTreeMap<String, String>) -> String {
    settings.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

impl RunArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("scheme", self.scheme.clone());
        put("n_modes", self.n_modes.map(|v| v.to_string()));
        put("backend", self.backend.clone());
        put("tau", self.tau.clone());
        put("tau_list", self.tau_list.clone());
        put("tau_ref", self.tau_ref.clone());
        put("T", self.horizon.map(|v| v.to_string()));
        put("samples", self.samples.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("gamma1", self.gamma1.map(|v| v.to_string()));
        put("gamma2", self.gamma2.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("p", self.p.map(|v| v.to_string()));
        put("initial", self.initial.clone());
        put("error_mode", self.sup_error.then(|| "sup".to_string()));
        put("noise", self.no_noise.then(|| "false".to_string()));
        put("snapshots", self.snapshots.map(|v| v.to_string()));
        put("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        put("jobs", self.jobs.map(|v| v.to_string()));
        m
    }
}

/// Fully resolved settings of one `simulate`, `strong-error` or `moments` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    /// Step size of `simulate`.
    pub tau: f64,
    pub snapshots: usize,
    pub noise: bool,
    pub out_dir: PathBuf,
}

impl Settings {
    pub fn defaults(command: &str) -> Self {
        let experiment = match command {
            "moments" => ExperimentConfig::moment_defaults(),
            "simulate" => ExperimentConfig::evolution_defaults(),
            _ => ExperimentConfig::strong_error_defaults(),
        };
        Settings {
            experiment,
            tau: dyadic(10),
            snapshots: DEFAULT_SNAPSHOTS,
            noise: true,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Flat key/value form; feeding it back through [`resolve`] reproduces `self`.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let e = &self.experiment;
        let list = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let schemes = e.schemes.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
        let mode = match e.error_mode {
            ErrorMode::Terminal => "terminal",
            ErrorMode::Sup => "sup",
        };
        [
            ("scheme", schemes),
            ("n_modes", e.grid.n_modes().to_string()),
            ("backend", e.grid.backend().to_string()),
            ("tau", self.tau.to_string()),
            ("tau_list", list(&e.tau_list)),
            ("tau_ref", e.tau_ref.to_string()),
            ("T", e.horizon.to_string()),
            ("samples", e.n_samples.to_string()),
            ("seed", e.seed.to_string()),
            ("gamma1", e.params.gamma1.to_string()),
            ("gamma2", e.params.gamma2.to_string()),
            ("beta", e.params.beta.to_string()),
            ("p", e.p.to_string()),
            ("initial", e.initial.to_string()),
            ("error_mode", mode.to_string()),
            ("noise", self.noise.to_string()),
            ("snapshots", self.snapshots.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("jobs", e.jobs.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// `2^-k`, `2^k` or a decimal.
pub fn parse_step(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.strip_prefix("2^") {
        Some(exp) => exp.parse::<i32>().map(|k| 2f64.powi(k)).ok(),
        None => s.parse::<f64>().ok(),
    };
    v.ok_or_else(|| Error::Config(format!("cannot parse step size '{s}'")))
}

pub fn parse_schemes(s: &str) -> Result<Vec<SchemeKind>> {
    match s.trim() {
        "all" => Ok(SchemeKind::ALL.to_vec()),
        "splitting" => Ok(SchemeKind::SPLITTING.to_vec()),
        list => list.split(',').map(|k| k.trim().parse()).collect(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn apply(settings: &mut Settings, key: &str, v: &str) -> Result<()> {
    let e = &mut settings.experiment;
    match key {
        "scheme" => e.schemes = parse_schemes(v)?,
        "n_modes" => e.grid = Grid::new(parse_num(key, v)?, e.grid.backend())?,
        "backend" => e.grid = Grid::new(e.grid.n_modes(), v.parse::<Backend>()?)?,
        "tau" => settings.tau = parse_step(v)?,
        "tau_list" => e.tau_list = v.split(',').map(parse_step).collect::<Result<_>>()?,
        "tau_ref" => e.tau_ref = parse_step(v)?,
        "T" => e.horizon = parse_num(key, v)?,
        "samples" => e.n_samples = parse_num(key, v)?,
        "seed" => e.seed = parse_num(key, v)?,
        "gamma1" => e.params.gamma1 = parse_num(key, v)?,
        "gamma2" => e.params.gamma2 = parse_num(key, v)?,
        "beta" => e.params.beta = parse_num(key, v)?,
        "p" => e.p = parse_num(key, v)?,
        "initial" => e.initial = v.parse()?,
        "error_mode" => {
            e.error_mode = match v.trim() {
                "terminal" => ErrorMode::Terminal,
                "sup" => ErrorMode::Sup,
                _ => return Err(Error::Config(format!("error_mode must be terminal or sup, got '{v}'"))),
            }
        }
        "noise" => settings.noise = parse_num(key, v)?,
        "snapshots" => settings.snapshots = parse_num(key, v)?,
        "out_dir" => settings.out_dir = PathBuf::from(v.trim()),
        "jobs" => e.jobs = parse_num(key, v)?,
        _ => return Err(Error::Config(format!("unknown setting '{key}'"))),
    }
    Ok(())
}

/// Defaults, then `file` settings, then `flags`.
pub fn resolve(
    command: &str,
    file: &BTreeMap<String, String>,
    flags: &BTreeMap<String, String>,
) -> Result<Settings> {
    let mut s = Settings::defaults(command);
    // n_modes and backend build the grid together, so apply backend first
    let ordered = |m: &BTreeMap<String, String>| {
        let mut kv: Vec<(String, String)> = m.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        kv.sort_by_key(|(k, _)| k != "backend");
        kv
    };
    let mut merged = file.clone();
    merged.extend(flags.clone());
    for (k, v) in ordered(&merged) {
        apply(&mut s, canonical_key(&k)?, &v)?;
    }
    check(command, &s)?;
    Ok(s)
}

fn check(command: &str, s: &Settings) -> Result<()> {
    match command {
        "simulate" => {
            if !(s.tau > 0.0 && s.tau < TAU0) {
                return Err(Error::Config(format!("tau must lie in (0, {TAU0}), got {}", s.tau)));
            }
            if s.experiment.schemes.len() != 1 {
                return Err(Error::Config("simulate runs exactly one scheme".into()));
            }
            steps_for(s.experiment.horizon, s.tau)?;
            Ok(())
        }
        _ => s.experiment.validate(),
    }
}

pub fn parse_config(command: &Command) -> Result<Settings> {
    let args = match command {
        Command::Simulate(a) | Command::StrongError(a) | Command::Moments(a) => a,
        Command::VerifyIneq(_) => return Err(Error::Config("verify-ineq takes no settings file".into())),
    };
    let file = match &args.config {
        Some(path) => parse_settings(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    resolve(command.name(), &file, &args.overrides())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
}

/// Written next to every output. Only `wall_clock` varies between
/// otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock: WallClock,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ErrorRecord {
    scheme: String,
    tau: f64,
    rms_error: f64,
    stderr: f64,
    n_samples: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct MomentRecord {
    scheme: String,
    tau: f64,
    p: f64,
    sup_moment: f64,
    blowup_fraction: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct EvolutionRecord {
    t: f64,
    zeta: f64,
    u: f64,
    v: f64,
}

fn write_csv<R: Serialize>(path: &Path, rows: impl ExactSizeIterator<Item = R>) -> Result<()> {
    if rows.len() == 0 {
        return Err(Error::Config(format!("refusing to write empty table to {}", path.display())));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|x| x.map_err(csv_error)).collect()
}

pub fn emit_error_csv(path: &Path, table: &ErrorTable) -> Result<()> {
    write_csv(
        path,
        table.rows.iter().map(|r| ErrorRecord {
            scheme: r.kind.name().to_string(),
            tau: r.tau,
            rms_error: r.rms_error,
            stderr: r.stderr,
            n_samples: r.n_samples,
        }),
    )
}

/// Rows of a strong-error CSV; fits are not stored there.
pub fn read_error_csv(path: &Path) -> Result<ErrorTable> {
    let rows = read_csv::<ErrorRecord>(path)?
        .into_iter()
        .map(|r| {
            Ok(crate::experiments::ErrorRow {
                kind: r.scheme.parse()?,
                tau: r.tau,
                rms_error: r.rms_error,
                stderr: r.stderr,
                n_samples: r.n_samples,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ErrorTable {
        rows,
        fits: BTreeMap::new(),
    })
}

pub fn emit_moments_csv(path: &Path, table: &MomentTable) -> Result<()> {
    write_csv(
        path,
        table.rows.iter().map(|r| MomentRecord {
            scheme: r.kind.name().to_string(),
            tau: r.tau,
            p: r.p,
            sup_moment: r.sup_moment,
            blowup_fraction: r.blowup_fraction,
        }),
    )
}

pub fn read_moments_csv(path: &Path) -> Result<MomentTable> {
    let rows = read_csv::<MomentRecord>(path)?
        .into_iter()
        .map(|r| {
            Ok(crate::experiments::MomentRow {
                kind: r.scheme.parse()?,
                tau: r.tau,
                p: r.p,
                sup_moment: r.sup_moment,
                blowup_fraction: r.blowup_fraction,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MomentTable { rows })
}

pub fn emit_evolution_csv(path: &Path, evolution: &Evolution) -> Result<()> {
    write_csv(
        path,
        evolution.rows.iter().map(|r| EvolutionRecord {
            t: r.t,
            zeta: r.zeta,
            u: r.u,
            v: r.v,
        }),
    )
}

pub fn read_evolution_csv(path: &Path) -> Result<Vec<crate::experiments::EvolutionRow>> {
    Ok(read_csv::<EvolutionRecord>(path)?
        .into_iter()
        .map(|r| crate::experiments::EvolutionRow {
            t: r.t,
            zeta: r.zeta,
            u: r.u,
            v: r.v,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub slope: f64,
    pub ci_halfwidth: f64,
    pub points: Vec<[f64; 2]>,
}

/// `{scheme: {slope, ci_halfwidth, points}, ..., "manifest": <file>}`.
pub fn rates_json(table: &ErrorTable, manifest: &str) -> Result<serde_json::Value> {
    if table.fits.is_empty() {
        return Err(Error::Config("no fitted rates to write".into()));
    }
    let mut obj = serde_json::Map::new();
    for (kind, fit) in &table.fits {
        let entry = RateEntry {
            slope: fit.slope,
            ci_halfwidth: fit.ci_halfwidth,
            points: table.points(*kind).into_iter().map(|(t, e)| [t, e]).collect(),
        };
        obj.insert(kind.name().to_string(), serde_json::to_value(entry)?);
    }
    obj.insert("manifest".into(), manifest.into());
    Ok(serde_json::Value::Object(obj))
}

pub fn emit_rates_json(path: &Path, table: &ErrorTable, manifest: &str) -> Result<()> {
    let value = rates_json(table, manifest)?;
    write_json(path, &value)
}

/// Scheme entries of a rates file.
pub fn read_rates_json(path: &Path) -> Result<BTreeMap<String, RateEntry>> {
    let mut obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&fs::read_to_string(path)?)?;
    obj.remove("manifest");
    obj.into_iter()
        .map(|(k, v)| Ok((k, serde_json::from_value(v)?)))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the manifest and reproducing settings file for `outputs` in `dir`.
fn finish(
    dir: &Path,
    stem: &str,
    command: &str,
    seed: u64,
    settings: BTreeMap<String, String>,
    mut outputs: Vec<String>,
    started: (SystemTime, Instant),
) -> Result<()> {
    let config_name = format!("{stem}.config");
    fs::write(dir.join(&config_name), render_settings(&settings))?;
    outputs.push(config_name);
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        settings,
        outputs,
        wall_clock: WallClock {
            started_unix_s: started.0.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            elapsed_s: started.1.elapsed().as_secs_f64(),
        },
    };
    write_json(&dir.join(format!("{stem}.manifest.json")), &manifest)
}

fn run_settings(command: &str, s: &Settings) -> Result<Vec<PathBuf>> {
    let started = (SystemTime::now(), Instant::now());
    fs::create_dir_all(&s.out_dir)?;
    let dir = &s.out_dir;
    let flat = s.to_flat();
    let e = &s.experiment;
    let written: Vec<String> = match command {
        "simulate" => {
            let kind = e.schemes[0];
            let mut cfg = SchemeConfig::new(kind, e.params, s.tau, steps_for(e.horizon, s.tau)?, e.initial.build(&e.grid))?;
            cfg.grid = e.grid;
            cfg.seed = e.seed;
            cfg.snapshots = s.snapshots;
            cfg.noise = s.noise;
            let evolution = evolution_snapshot(&cfg)?;
            emit_evolution_csv(&dir.join("evolution.csv"), &evolution)?;
            if let (Some(step), true) = (evolution.blowup, kind.is_splitting()) {
                return Err(Error::Numerical(format!("{kind} blew up at step {step}")));
            }
            vec!["evolution.csv".into()]
        }
        "strong-error" => {
            let table = strong_error_study(e)?;
            emit_error_csv(&dir.join("strong_error.csv"), &table)?;
            let mut out = vec!["strong_error.csv".to_string()];
            if !table.fits.is_empty() {
                emit_rates_json(&dir.join("rates.json"), &table, "strong_error.manifest.json")?;
                out.push("rates.json".into());
            }
            out
        }
        "moments" => {
            let table = moment_study(e)?;
            emit_moments_csv(&dir.join("moments.csv"), &table)?;
            vec!["moments.csv".into()]
        }
        other => return Err(Error::Config(format!("unknown command '{other}'"))),
    };
    let stem = match command {
        "simulate" => "evolution",
        "strong-error" => "strong_error",
        _ => "moments",
    };
    finish(dir, stem, command, e.seed, flat, written.clone(), started)?;
    Ok(written.iter().map(|w| dir.join(w)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IneqReport {
    n_max: usize,
    z_min: f64,
    z_max: f64,
    z_count: usize,
    constants: IneqConstants,
    ceiling: f64,
}

fn run_ineq(a: &IneqArgs) -> Result<IneqConstants> {
    let started = (SystemTime::now(), Instant::now());
    if !(a.z_min > 0.0 && a.z_max >= a.z_min) {
        return Err(Error::Config("need 0 < z_min <= z_max".into()));
    }
    let grid = logspace(a.z_min, a.z_max, a.z_count);
    let constants = crate::experiments::with_pool(a.jobs.unwrap_or(0), || verify_eq_ineq(a.n_max, &grid))??;
    let dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    let report = IneqReport {
        n_max: a.n_max,
        z_min: a.z_min,
        z_max: a.z_max,
        z_count: a.z_count,
        constants,
        ceiling: INEQ_CEILING,
    };
    write_json(&dir.join("ineq.json"), &report)?;
    let settings: BTreeMap<String, String> = [
        ("n_max", a.n_max.to_string()),
        ("z_min", a.z_min.to_string()),
        ("z_max", a.z_max.to_string()),
        ("z_count", a.z_count.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let manifest = RunManifest {
        command: "verify-ineq".into(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: 0,
        settings,
        outputs: vec!["ineq.json".into()],
        wall_clock: WallClock {
            started_unix_s: started.0.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            elapsed_s: started.1.elapsed().as_secs_f64(),
        },
    };
    write_json(&dir.join("ineq.manifest.json"), &manifest)?;
    let ok = |c: f64| c.is_finite() && c <= INEQ_CEILING;
    if !(ok(constants.c_n) && ok(constants.c_min)) {
        return Err(Error::Numerical(format!(
            "inequality constants {constants:?} exceed {INEQ_CEILING}"
        )));
    }
    Ok(constants)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::VerifyIneq(a) => {
            let c = run_ineq(a)?;
            println!("sup n|d| = {}, sup |d|/min(1,z) = {}", c.c_n, c.c_min);
        }
        cmd => {
            let settings = parse_config(cmd)?;
            for path in run_settings(cmd.name(), &settings)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => 1,
    }
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
