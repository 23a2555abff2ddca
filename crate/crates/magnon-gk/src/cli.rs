//! Command-line driver: a JSON experiment config, flag overrides, and the
//! `simulate` / `correlate` / `closedform` / `certify` / `sample` commands.
//!
//! Output schemas (all CSVs carry a header row):
//!
//! | file                  | columns                 |
//! |-----------------------|-------------------------|
//! | `correlation.csv`     | `t,value,stderr`        |
//! | `kappa.csv`           | `t,value,stderr`        |
//! | `series.csv`          | `t,value,err_est`       |
//!
//! Every JSON report carries `schema_version` and the SHA-256 of the
//! effective config, so reruns with identical config reproduce identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dynamics::{BackendKind, SimOptions, Trajectory};
use crate::error::{Error, Result};
use crate::greenkubo::{
    compare_with_closed_form, estimate_correlation, estimate_kappa, run_ensemble, CorrelationSeries, Ensemble,
    Estimator, RunConfig,
};
use crate::lattice::{Charge, LatticeSpec};
use crate::resolvent::{certify, CertificationReport, CertifyOptions};
use crate::rng::{stream, stream_rng};
use crate::sampling::{ensemble_checks, EnsembleReport, EnsembleSpec};
use crate::spectral::{
    c_infinity, closed_form_series, d_closed, fit_exponent, log_times, GkSetting, QuadOptions, SeriesKind, Variant,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status for a completed run whose checks failed.
pub const EXIT_CHECK_FAILED: i32 = 2;
/// Exit status for an error (the error JSON is on stderr).
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateConfig {
    pub estimator: Estimator,
    pub direction: usize,
    /// Largest lag (time units); defaults to `t_end / 2`.
    pub max_lag: Option<f64>,
    /// Also compare against the matching infinite-volume closed form.
    pub compare: bool,
    pub rel_tol: f64,
    pub z_max: f64,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        CorrelateConfig {
            estimator: Estimator::TimeAverage,
            direction: 0,
            max_lag: None,
            compare: false,
            rel_tol: 1e-8,
            z_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedFormConfig {
    pub kind: SeriesKind,
    pub t0: f64,
    pub t1: f64,
    pub per_decade: usize,
    /// Fit window; defaults to `[t0, t1]`.
    pub window: Option<[f64; 2]>,
    pub rel_tol: f64,
}

impl Default for ClosedFormConfig {
    fn default() -> Self {
        ClosedFormConfig {
            kind: SeriesKind::Kappa { setting: GkSetting::Micro { d: 1, dstar: 2 } },
            t0: 1e4,
            t1: 1e7,
            per_decade: 8,
            window: None,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Side lengths at which ensemble moments are checked.
    pub ns: Vec<usize>,
    pub samples: usize,
    pub z_max: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { ns: vec![9, 33, 129], samples: 2000, z_max: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub resolvent: CertifyOptions,
    /// Side length and sample count of the ensemble check run by `certify`.
    pub ensemble_n: usize,
    pub ensemble_samples: usize,
    pub z_max: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { resolvent: CertifyOptions::default(), ensemble_n: 9, ensemble_samples: 2000, z_max: 3.0 }
    }
}

/// The complete, validated description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: LatticeSpec,
    pub ensemble: EnsembleSpec,
    pub n_traj: usize,
    pub t_end: f64,
    pub dt_out: f64,
    pub seed: u64,
    pub backend: Option<BackendKind>,
    pub options: SimOptions,
    pub output: PathBuf,
    pub plot: bool,
    pub correlate: CorrelateConfig,
    pub closedform: ClosedFormConfig,
    pub certify: CertifyConfig,
    pub sample: SampleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            spec: LatticeSpec::deformation(8, 1.0, 1.0, Charge::Uniform).expect("valid default spec"),
            ensemble: EnsembleSpec::Canonical { beta: 1.0, tau: vec![] },
            n_traj: 16,
            t_end: 8.0,
            dt_out: 0.25,
            seed: 0,
            backend: None,
            options: SimOptions::default(),
            output: PathBuf::from("out"),
            plot: false,
            correlate: CorrelateConfig::default(),
            closedform: ClosedFormConfig::default(),
            certify: CertifyConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            spec: self.spec,
            ensemble: self.ensemble.clone(),
            n_traj: self.n_traj,
            t_end: self.t_end,
            dt_out: self.dt_out,
            seed: self.seed,
            backend: self.backend,
            options: self.options.clone(),
        }
    }

    /// Checks the preconditions a command needs before any compute.
    pub fn validate(&self, cmd: &str) -> Result<()> {
        let pos = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be positive and finite, got {x}")))
            }
        };
        match cmd {
            "simulate" => {
                self.spec.validate()?;
                self.ensemble.check(&self.spec)?;
                if self.n_traj == 0 {
                    return Err(Error::EmptyEnsemble);
                }
                pos(self.t_end, "t_end")?;
                pos(self.dt_out, "dt_out")?;
                if self.dt_out > self.t_end {
                    return Err(Error::InvalidArgument("dt_out exceeds t_end".into()));
                }
            }
            "correlate" => {
                pos(self.correlate.rel_tol, "correlate.rel_tol")?;
                if let Some(l) = self.correlate.max_lag {
                    if !(l >= 0.0) {
                        return Err(Error::InvalidArgument(format!("max_lag must be >= 0, got {l}")));
                    }
                }
            }
            "closedform" => {
                let c = &self.closedform;
                pos(c.t0, "closedform.t0")?;
                pos(c.rel_tol, "closedform.rel_tol")?;
                if !(c.t1 > c.t0) || c.per_decade == 0 {
                    return Err(Error::InvalidArgument("closedform needs t1 > t0 and per_decade >= 1".into()));
                }
                if let Some(w) = c.window {
                    if !(w[1] > w[0]) {
                        return Err(Error::InvalidArgument("fit window must satisfy t0 < t1".into()));
                    }
                }
            }
            "certify" => {
                let o = &self.certify.resolvent;
                if o.lambdas.iter().any(|&l| !(l > 0.0)) {
                    return Err(Error::InvalidArgument("certify lambdas must be positive".into()));
                }
                if self.certify.ensemble_samples < 2 {
                    return Err(Error::EmptyEnsemble);
                }
            }
            "sample" => {
                if self.sample.ns.is_empty() || self.sample.samples < 2 {
                    return Err(Error::InvalidArgument("sample needs at least one N and two samples".into()));
                }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown command {cmd}"))),
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets a dotted path (`spec.n`, `correlate.compare`) in a JSON value.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Parse(format!("--set {path}: {p:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| json!({}));
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "magnon-gk", version, about = "Green-Kubo experiments on noisy charged harmonic lattices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config; missing fields take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Emit SVG plots next to the CSV outputs.
    #[arg(long)]
    pub plot: bool,
    /// Override any config field: `--set spec.n=16 --set correlate.compare=true`.
    /// The value is parsed as JSON, falling back to a string.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample and simulate an ensemble; writes trajectories and meta JSON.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt_out: Option<f64>,
    },
    /// Estimate current correlations (and κ(t) if tracked) from trajectories.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`; defaults to the output directory.
        #[arg(long, short)]
        input: Option<PathBuf>,
        /// Compare with the infinite-volume closed form inside the trusted window.
        #[arg(long)]
        compare: bool,
    },
    /// Evaluate a closed-form series and fit its log-log slope.
    Closedform {
        #[command(flatten)]
        common: Common,
    },
    /// Certify resolvent solutions, reduction identities and an ensemble moment.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Negative control: perturb one kernel entry by this amount.
        #[arg(long)]
        perturb: Option<f64>,
    },
    /// Check ensemble moments against their exact finite-N values.
    Sample {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Correlate { .. } => "correlate",
            Command::Closedform { .. } => "closedform",
            Command::Certify { .. } => "certify",
            Command::Sample { .. } => "sample",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Correlate { common, .. }
            | Command::Closedform { common }
            | Command::Certify { common, .. }
            | Command::Sample { common } => common,
        }
    }
}

/// Loads the config file and applies flag overrides in order: named flags
/// first, then `--set` assignments.
pub fn resolve_config(cmd: &Command) -> Result<ExperimentConfig> {
    let c = cmd.common();
    let base = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let mut v = serde_json::to_value(&base)?;
    let mut set = |path: &str, x: Value| set_path(&mut v, path, x);
    if let Some(o) = &c.out {
        set("output", json!(o))?;
    }
    if let Some(s) = c.seed {
        set("seed", json!(s))?;
    }
    if let Some(n) = c.n {
        set("spec.n", json!(n))?;
    }
    if let Some(b) = c.b {
        set("spec.b", json!(b))?;
    }
    if let Some(g) = c.gamma {
        set("spec.gamma", json!(g))?;
    }
    if c.plot {
        set("plot", json!(true))?;
    }
    match cmd {
        Command::Simulate { n_traj, t_end, dt_out, .. } => {
            if let Some(x) = n_traj {
                set("n_traj", json!(x))?;
            }
            if let Some(x) = t_end {
                set("t_end", json!(x))?;
            }
            if let Some(x) = dt_out {
                set("dt_out", json!(x))?;
            }
        }
        Command::Correlate { compare: true, .. } => set("correlate.compare", json!(true))?,
        Command::Certify { perturb: Some(e), .. } => set("certify.resolvent.perturb", json!(e))?,
        _ => {}
    }
    for kv in &c.set {
        let (k, raw) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set expects PATH=VALUE, got {kv:?}")))?;
        let x = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set(k, x)?;
    }
    Ok(serde_json::from_value(v)?)
}

/// Caps the global rayon pool at `MAGNON_GK_THREADS` if set.
pub fn init_threads() -> Result<()> {
    if let Ok(s) = std::env::var("MAGNON_GK_THREADS") {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("MAGNON_GK_THREADS={s:?} is not a thread count")))?;
        // A pool already initialised (e.g. in tests) is left as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

/// What a command hands back to `main`.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub command: String,
    pub pass: bool,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Runs one command with an already-resolved config.
pub fn execute(cmd: &Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate(cmd.name())?;
    fs::create_dir_all(&cfg.output)?;
    match cmd {
        Command::Simulate { .. } => cmd_simulate(cfg),
        Command::Correlate { input, .. } => cmd_correlate(cfg, input.as_deref().unwrap_or(&cfg.output)),
        Command::Closedform { .. } => cmd_closedform(cfg),
        Command::Certify { .. } => cmd_certify(cfg),
        Command::Sample { .. } => cmd_sample(cfg),
    }
}

/// Full CLI entry point; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            if code == 0 {
                print!("{e}");
            } else {
                emit_error(&Error::Parse(e.to_string()), json!({ "stage": "arguments" }));
            }
            return code;
        }
    };
    let name = cli.command.name();
    let cfg = match init_threads().and_then(|_| resolve_config(&cli.command)) {
        Ok(c) => c,
        Err(e) => {
            emit_error(&e, json!({ "command": name, "stage": "config" }));
            return EXIT_ERROR;
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(out) => {
            println!("{}", serde_json::to_string(&out).expect("outcome serialises"));
            if out.pass {
                0
            } else {
                emit_error(
                    &Error::Tolerance(format!("{name} checks failed; see report")),
                    json!({ "command": name, "config_hash": cfg.hash(), "summary": out.summary }),
                );
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            emit_error(&e, json!({ "command": name, "config_hash": cfg.hash() }));
            EXIT_ERROR
        }
    }
}

fn emit_error(e: &Error, context: Value) {
    eprintln!("{}", serde_json::to_string(&e.to_report(context)).expect("error report serialises"));
}

fn write_json<T: Serialize>(path: &Path, x: &T) -> Result<PathBuf> {
    let mut s = serde_json::to_string_pretty(x)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(path.to_path_buf())
}

fn write_csv(path: &Path, header: [&str; 3], t: &[f64], v: &[f64], e: &[f64]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..t.len() {
        w.write_record([t[i].to_string(), v[i].to_string(), e[i].to_string()])?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

/// Reads back a CSV written by this module.
pub fn read_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut t, mut v, mut e) = (vec![], vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("{}: bad field {i}", path.display())))
        };
        t.push(f(0)?);
        v.push(f(1)?);
        e.push(f(2)?);
    }
    Ok((t, v, e))
}

fn meta(cfg: &ExperimentConfig, cmd: &str, extra: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": cmd,
        "config_hash": cfg.hash(),
        "config": cfg,
        "result": extra,
    })
}

const TRAJ_DIR: &str = "trajectories";

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ens = run_ensemble(&cfg.run_config())?;
    let dir = cfg.output.join(TRAJ_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    for (k, tr) in ens.trajectories.iter().enumerate() {
        write_json(&dir.join(format!("traj_{k:05}.json")), tr)?;
    }
    let mut files = vec![dir];
    let continuity = ens.trajectories.iter().filter_map(Trajectory::continuity_residual).fold(None, |m: Option<f64>, r| {
        Some(m.map_or(r, |m| m.max(r)))
    });
    let events: u64 = ens.trajectories.iter().map(|t| t.event_count).sum();
    let summary = json!({
        "n_traj": ens.trajectories.len(),
        "backend": ens.trajectories[0].backend,
        "events": events,
        "max_continuity_residual": continuity,
    });
    files.push(write_json(&cfg.output.join("meta.json"), &meta(cfg, "simulate", summary.clone()))?);
    Ok(Outcome { command: "simulate".into(), pass: true, files, summary })
}

/// Loads trajectories and the ensemble description written by `simulate`.
pub fn load_ensemble(input: &Path) -> Result<Ensemble> {
    let meta_path = input.join("meta.json");
    let m: Value = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", meta_path.display())))
    })?)?;
    let cfg: ExperimentConfig = serde_json::from_value(m["config"].clone())?;
    let dir = input.join(TRAJ_DIR);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(_) => vec![],
    };
    if paths.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    paths.sort();
    let trajectories = paths
        .iter()
        .map(|p| Ok(serde_json::from_str::<Trajectory>(&fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { ensemble: cfg.ensemble, seed: cfg.seed, trajectories })
}

/// Closed form matching a simulated setting, at the given lags.
fn closed_form_for(series: &CorrelationSeries, rel_tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = &series.meta.spec;
    let opts = QuadOptions::rel(rel_tol);
    let eval = |t: f64| match &series.meta.ensemble {
        EnsembleSpec::Microcanonical { e } => c_infinity(t, spec.d, spec.dstar, spec.b, spec.gamma, *e, &opts),
        EnsembleSpec::Canonical { beta, .. } => {
            let v = match (spec.charge, spec.b) {
                (Charge::Zero, _) => Variant::Zero,
                (_, b) if b == 0.0 => Variant::Zero,
                (Charge::Uniform, _) => Variant::I,
                (Charge::Alternate, _) => Variant::II,
            };
            d_closed(t, v, spec.b.abs(), spec.gamma, *beta, &opts)
        }
    };
    let est = series.times.iter().map(|&t| eval(t)).collect::<Result<Vec<_>>>()?;
    Ok((est.iter().map(|e| e.value).collect(), est.iter().map(|e| e.error).collect()))
}

fn cmd_correlate(cfg: &ExperimentConfig, input: &Path) -> Result<Outcome> {
    let ens = load_ensemble(input)?;
    let first = &ens.trajectories[0];
    let c = &cfg.correlate;
    let horizon = *first.times.last().expect("nonempty grid");
    let max_lag_t = c.max_lag.unwrap_or(0.5 * horizon);
    let max_lag = (max_lag_t / first.dt_out).round() as usize;
    let series = estimate_correlation(&ens, c.estimator, c.direction, max_lag)?;
    let out = &cfg.output;
    let mut files = vec![write_csv(
        &out.join("correlation.csv"),
        ["t", "value", "stderr"],
        &series.times,
        &series.values,
        &series.stderr,
    )?];
    let mut summary = json!({
        "n_samples": series.meta.n_samples,
        "estimator": series.meta.estimator,
        "value_at_zero": series.values[0],
        "stderr_at_zero": series.stderr[0],
    });
    let mut pass = true;
    if c.compare {
        let (closed, err) = closed_form_for(&series, c.rel_tol)?;
        let cmp = compare_with_closed_form(&series, &closed, &err)?;
        pass &= cmp.max_z <= c.z_max;
        summary["comparison"] = json!({ "window_max_z": cmp.max_z, "points": cmp.points, "flagged": cmp.flagged, "z_max": c.z_max });
        if cfg.plot {
            let lines = vec![
                PlotLine::new("estimate", &series.times, &series.values),
                PlotLine::new("closed form", &series.times, &closed).dashed(),
            ];
            files.push(plot_svg(&out.join("correlation.svg"), "current correlation", &lines, false)?);
        }
    }
    files.push(write_json(&out.join("correlation.meta.json"), &json!({ "series": series.meta, "run": meta(cfg, "correlate", summary.clone()) }))?);
    if !first.integrated_current.is_empty() {
        let d = first.spec.d;
        let k = estimate_kappa(&ens, c.direction.min(d - 1), c.direction.min(d - 1))?;
        files.push(write_csv(&out.join("kappa.csv"), ["t", "value", "stderr"], &k.times, &k.values, &k.stderr)?);
        files.push(write_json(&out.join("kappa.meta.json"), &json!({ "series": k.meta, "config_hash": cfg.hash() }))?);
        summary["kappa_final"] = json!({ "t": k.times.last(), "value": k.values.last(), "stderr": k.stderr.last() });
    }
    Ok(Outcome { command: "correlate".into(), pass, files, summary })
}

fn cmd_closedform(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.closedform;
    let times = log_times(c.t0, c.t1, c.per_decade);
    let s = closed_form_series(c.kind, &times, cfg.spec.b, cfg.spec.gamma, &QuadOptions::rel(c.rel_tol))?;
    let out = &cfg.output;
    let mut files = vec![write_csv(&out.join("series.csv"), ["t", "value", "err_est"], &s.times, &s.values, &s.errors)?];
    let window = c.window.unwrap_or([c.t0, c.t1]);
    let fit = fit_exponent(&s.times, &s.values, window)?;
    let summary = json!({ "slope": fit.slope, "stderr": fit.stderr, "window": fit.window, "points": fit.points });
    files.push(write_json(
        &out.join("fit.json"),
        &json!({ "fit": fit, "series_meta": s.meta, "run": meta(cfg, "closedform", summary.clone()) }),
    )?);
    if cfg.plot {
        let fitted: Vec<f64> = s.times.iter().map(|t| (fit.intercept + fit.slope * t.ln()).exp()).collect();
        let lines = vec![
            PlotLine::new("closed form", &s.times, &s.values),
            PlotLine::new(&format!("slope {:.3}", fit.slope), &s.times, &fitted).dashed(),
        ];
        files.push(plot_svg(&out.join("series.svg"), "closed-form series", &lines, true)?);
    }
    Ok(Outcome { command: "closedform".into(), pass: true, files, summary })
}

/// Moment (i) of the microcanonical measure, `E[(v^1_0)²] = E/d*`, which
/// holds exactly at every `N`.
fn ensemble_first_moment(n: usize, samples: usize, seed: u64) -> Result<EnsembleReport> {
    let spec = LatticeSpec::position(1, 2, n, 1.0, 1.0)?;
    let mut rng = stream_rng(seed, stream::SAMPLER);
    ensemble_checks(&spec, 1.0, samples, &mut rng)
}

fn cmd_certify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.certify;
    let report: CertificationReport = certify(&c.resolvent)?;
    let ens = ensemble_first_moment(c.ensemble_n, c.ensemble_samples, cfg.seed)?;
    let first = &ens.checks[0];
    let ens_pass = first.z_exact() <= c.z_max;
    let failing: Vec<Value> = report
        .cases
        .iter()
        .filter(|k| !k.pass)
        .map(|k| json!({ "variant": k.variant, "lambda": k.lambda, "b": k.b, "gamma": k.gamma, "residual": k.residual }))
        .collect();
    let max_residual = report.cases.iter().map(|k| k.residual).fold(0.0, f64::max);
    let summary = json!({
        "cases": report.cases.len(),
        "failing": failing,
        "max_residual": max_residual,
        "resolvent_pass": report.all_pass,
        "ensemble_moment": { "name": first.name, "estimate": first.estimate, "stderr": first.stderr, "exact": first.exact, "z": first.z_exact(), "pass": ens_pass },
    });
    let files = vec![write_json(
        &cfg.output.join("certification.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "resolvent": report,
            "ensemble": ens,
            "summary": summary,
        }),
    )?];
    Ok(Outcome { command: "certify".into(), pass: report.all_pass && ens_pass, files, summary })
}

fn cmd_sample(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = &cfg.sample;
    let mut reports = vec![];
    let mut pass = true;
    let summary = match &cfg.ensemble {
        EnsembleSpec::Microcanonical { e } => {
            let mut errs = vec![];
            for (i, &n) in s.ns.iter().enumerate() {
                let spec = LatticeSpec { n, ..cfg.spec };
                let mut rng = stream_rng(crate::rng::member_seed(cfg.seed, i as u64), stream::SAMPLER);
                let r = ensemble_checks(&spec, *e, s.samples, &mut rng)?;
                pass &= r.checks[0].z_exact() <= s.z_max;
                errs.push(r.checks.iter().map(|c| (c.exact - c.leading).abs()).collect::<Vec<_>>());
                reports.push(r);
            }
            // Moment (iv) against its Fourier-sum oracle at the smallest N.
            let z_iv = reports[0].checks[3].z_exact();
            let decreasing = |j: usize| errs.windows(2).all(|w| w[1][j] <= w[0][j]);
            pass &= z_iv <= s.z_max && decreasing(1) && decreasing(2);
            json!({
                "first_moment_z": reports.iter().map(|r| r.checks[0].z_exact()).collect::<Vec<_>>(),
                "fourier_moment_z": z_iv,
                "leading_order_errors": errs,
                "errors_decreasing": [decreasing(1), decreasing(2)],
            })
        }
        EnsembleSpec::Canonical { beta, tau } => {
            // Per-component variance of r and v against 1/β.
            let mut out = vec![];
            for (i, &n) in s.ns.iter().enumerate() {
                let spec = LatticeSpec { n, ..cfg.spec };
                let mut rng = stream_rng(crate::rng::member_seed(cfg.seed, i as u64), stream::SAMPLER);
                let (mut rv, mut vv) = (vec![], vec![]);
                for _ in 0..s.samples {
                    let st = cfg.ensemble.sample(&spec, &mut rng)?;
                    let k = st.pos.len() as f64;
                    let shift = |j: usize| tau.get(j % spec.dstar).copied().unwrap_or(0.0);
                    rv.push(st.pos.iter().enumerate().map(|(j, r)| (r + shift(j)).powi(2)).sum::<f64>() / k);
                    vv.push(st.vel.iter().map(|v| v * v).sum::<f64>() / k);
                }
                let (mr, sr) = crate::greenkubo::jackknife_mean(&rv)?;
                let (mv, sv) = crate::greenkubo::jackknife_mean(&vv)?;
                let zr = (mr - 1.0 / beta).abs() / sr;
                let zv = (mv - 1.0 / beta).abs() / sv;
                pass &= zr <= s.z_max && zv <= s.z_max;
                out.push(json!({ "n": n, "r2": [mr, sr, zr], "v2": [mv, sv, zv] }));
            }
            json!({ "canonical": out })
        }
    };
    let files = vec![write_json(
        &cfg.output.join("sample_report.json"),
        &json!({ "reports": reports, "run": meta(cfg, "sample", summary.clone()) }),
    )?];
    Ok(Outcome { command: "sample".into(), pass, files, summary })
}

/// One polyline of an SVG plot.
pub struct PlotLine {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub dashed: bool,
}

impl PlotLine {
    pub fn new(label: &str, xs: &[f64], ys: &[f64]) -> Self {
        PlotLine { label: label.into(), xs: xs.to_vec(), ys: ys.to_vec(), dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

/// Minimal SVG line plot; `log` uses log-log axes (nonpositive points dropped).
pub fn plot_svg(path: &Path, title: &str, lines: &[PlotLine], log: bool) -> Result<PathBuf> {
    let (w, h, m) = (640.0, 420.0, 56.0);
    let tf = |x: f64| if log { x.log10() } else { x };
    let pts: Vec<Vec<(f64, f64)>> = lines
        .iter()
        .map(|l| {
            l.xs.iter()
                .zip(&l.ys)
                .filter(|(x, y)| !log || (**x > 0.0 && **y > 0.0))
                .map(|(&x, &y)| (tf(x), tf(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n\
         <rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        w / 2.0,
        title,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let axis = |v: f64| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
    s += &format!("<text x=\"{m}\" y=\"{}\">{}</text>\n", h - m + 16.0, axis(x0));
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", w - m, h - m + 16.0, axis(x1));
    s += &format!("<text x=\"4\" y=\"{}\">{}</text>\n", h - m, axis(y0));
    s += &format!("<text x=\"4\" y=\"{}\">{}</text>\n", m + 4.0, axis(y1));
    for (i, (l, p)) in lines.iter().zip(&pts).enumerate() {
        let c = colors[i % colors.len()];
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let dash = if l.dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        s += &format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n", d.join(" "));
        s += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>\n",
            m + 8.0,
            m + 16.0 + 14.0 * i as f64,
            l.label
        );
    }
    s += "</svg>\n";
    fs::write(path, s)?;
    Ok(path.to_path_buf())
}
