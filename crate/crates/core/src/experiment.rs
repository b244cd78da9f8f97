//! Experiment harness: metric rows, configuration files, CSV output and
//! parallel sweeps.
//!
//! Metrics are evaluated at the induced arithmetic mean `X̂_k` of the agents
//! with exact (full-data) gradients, so recording them never consumes random
//! numbers and never perturbs a trajectory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{AlgoConfig, Algorithm, Counters, Engine, InitMode, Snapshot};
use crate::error::{Error, Result};
use crate::network::{build_topology, NetworkSpec, Topology};
use crate::oracle::{
    empirical_variance, FullBatch, GradientOracle, PcaParams, PcaProblem, RowSampling,
    SampleCount, SampleSchedule, SyntheticNoise,
};
use crate::scalar::Real;
use crate::stiefel::{induced_arithmetic_mean, procrustes_distance, squared_spread, StiefelPoint};

pub const CSV_SCHEMA: u32 = 1;
pub const CSV_HEADER: &str = "k,f_gap,grad_norm,consensus,ds,samples_cum,comm_rounds_cum,wall_ms";
pub const OUTPUT_DIR_ENV: &str = "DRSGT_OUTPUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: u64,
    /// `f(X̂_k) − f*`.
    pub f_gap: f64,
    /// `‖grad f(X̂_k)‖_F`.
    pub grad_norm: f64,
    /// `‖X_k − X̂_k‖_F` over the stacked iterates.
    pub consensus: f64,
    /// `d_s(X̂_k, X*)`.
    pub ds: f64,
    pub samples_cum: SampleCount,
    pub comm_rounds_cum: u128,
    pub wall_ms: u64,
}

impl MetricsRow {
    /// Row recorded when the agents' mean is rank deficient.
    pub fn sentinel(counters: &Counters, wall_ms: u64) -> Self {
        Self {
            k: counters.iteration,
            f_gap: f64::NAN,
            grad_norm: f64::NAN,
            consensus: f64::NAN,
            ds: f64::NAN,
            samples_cum: counters.samples,
            comm_rounds_cum: counters.comm_rounds,
            wall_ms,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.grad_norm.is_nan()
    }

    /// Floats use 17 significant digits so a row parses back bit-exactly.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.k,
            fmt_float(self.f_gap),
            fmt_float(self.grad_norm),
            fmt_float(self.consensus),
            fmt_float(self.ds),
            self.samples_cum,
            self.comm_rounds_cum,
            self.wall_ms
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let bad = |what: &str| Error::config("csv", format!("bad {what} in row `{line}`"));
        if fields.len() != 8 {
            return Err(bad("field count"));
        }
        let float = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        Ok(Self {
            k: fields[0].parse().map_err(|_| bad("k"))?,
            f_gap: float(fields[1], "f_gap")?,
            grad_norm: float(fields[2], "grad_norm")?,
            consensus: float(fields[3], "consensus")?,
            ds: float(fields[4], "ds")?,
            samples_cum: fields[5].parse().map_err(|_| bad("samples_cum"))?,
            comm_rounds_cum: fields[6].parse().map_err(|_| bad("comm_rounds_cum"))?,
            wall_ms: fields[7].parse().map_err(|_| bad("wall_ms"))?,
        })
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

/// The four convergence metrics at the induced arithmetic mean.
pub fn compute_metrics<T: Real>(
    problem: &PcaProblem<T>,
    points: &[StiefelPoint<T>],
    counters: &Counters,
    wall_ms: u64,
) -> Result<MetricsRow> {
    let center = induced_arithmetic_mean(points)?;
    let f_gap = (problem.objective(&center) - problem.f_star()).as_f64();
    let grad_norm = problem.exact_global_gradient(&center).norm().as_f64();
    let consensus = squared_spread(points, &center).as_f64().sqrt();
    let ds = procrustes_distance(&center, problem.x_star())?.as_f64();
    Ok(MetricsRow {
        k: counters.iteration,
        f_gap,
        grad_norm,
        consensus,
        ds,
        samples_cum: counters.samples,
        comm_rounds_cum: counters.comm_rounds,
        wall_ms,
    })
}

/// Like [`compute_metrics`], but a degenerate mean yields a sentinel row.
pub fn compute_metrics_or_sentinel<T: Real>(
    problem: &PcaProblem<T>,
    points: &[StiefelPoint<T>],
    counters: &Counters,
    wall_ms: u64,
) -> Result<MetricsRow> {
    match compute_metrics(problem, points, counters, wall_ms) {
        Err(Error::DegenerateMean { .. }) => Ok(MetricsRow::sentinel(counters, wall_ms)),
        other => other,
    }
}

/// Reads a metrics CSV written by [`run_experiment`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    let schema = lines.next().unwrap_or_default();
    if schema.trim() != format!("# schema={CSV_SCHEMA}") {
        return Err(Error::config("csv", format!("unexpected schema line `{schema}`")));
    }
    let header = lines.next().unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::config("csv", format!("unexpected header `{header}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(MetricsRow::parse_csv_line)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleKind {
    RowSampling,
    FullBatch,
    SyntheticNoise { sigma: f64 },
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleKind::RowSampling => write!(f, "row"),
            OracleKind::FullBatch => write!(f, "full"),
            OracleKind::SyntheticNoise { sigma } => write!(f, "synthetic:{sigma}"),
        }
    }
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "row" => Ok(OracleKind::RowSampling),
            "full" => Ok(OracleKind::FullBatch),
            other => {
                let sigma = other
                    .strip_prefix("synthetic:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v >= 0.0)
                    .ok_or_else(|| {
                        Error::config("oracle", format!("expected row, full or synthetic:<sigma>, got `{s}`"))
                    })?;
                Ok(OracleKind::SyntheticNoise { sigma })
            }
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub instance: PcaParams,
    pub instance_cache: Option<PathBuf>,
    pub topology: Topology,
    pub algorithm: AlgorithmKind,
    pub alpha: f64,
    pub beta: f64,
    pub beta0: f64,
    pub beta_decay: f64,
    pub t: u32,
    pub schedule: SampleSchedule,
    pub oracle: OracleKind,
    pub init: InitMode,
    pub seed: u64,
    pub audit_every: u64,
    pub max_iters: u64,
    pub log_every: u64,
    pub output_dir: PathBuf,
    pub target_eps: Option<f64>,
    pub wall_clock: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgorithmKind {
    Drsgt,
    Drsgd,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            instance: PcaParams::default(),
            instance_cache: None,
            topology: Topology::Ring,
            algorithm: AlgorithmKind::Drsgt,
            alpha: 1.0,
            beta: 0.1,
            beta0: 0.1,
            beta_decay: 0.5,
            t: 1,
            schedule: SampleSchedule::Polynomial(1.0),
            oracle: OracleKind::RowSampling,
            init: InitMode::Common,
            seed: 0,
            audit_every: 50,
            max_iters: 1000,
            log_every: 1,
            output_dir: default_output_dir(),
            target_eps: None,
            wall_clock: false,
        }
    }
}

/// `$DRSGT_OUTPUT_DIR`, or `results` when unset.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

const CONFIG_KEYS: &[&str] = &[
    "name",
    "agents",
    "rows_per_agent",
    "dim",
    "rank",
    "eigengap",
    "instance_seed",
    "instance_cache",
    "topology",
    "algorithm",
    "alpha",
    "beta",
    "beta0",
    "beta_decay",
    "t",
    "schedule",
    "oracle",
    "init",
    "seed",
    "audit_every",
    "max_iters",
    "log_every",
    "output_dir",
    "target_eps",
    "wall_clock",
];

impl ExperimentConfig {
    /// Parses the `key = value` config format. Unspecified keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual form. Dashes in `key` are read as
    /// underscores so command-line spellings like `target-eps` work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let field = key.as_str();
        fn num<V: std::str::FromStr>(field: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::config(field, format!("cannot parse `{value}`")))
        }
        match field {
            "name" => {
                if value.is_empty() || value.contains(['/', '\\']) {
                    return Err(Error::config(field, "must be a plain, non-empty file stem"));
                }
                self.name = value.to_string();
            }
            "agents" => self.instance.agents = num(field, value)?,
            "rows_per_agent" => self.instance.rows_per_agent = num(field, value)?,
            "dim" => self.instance.dim = num(field, value)?,
            "rank" => self.instance.rank = num(field, value)?,
            "eigengap" => self.instance.eigengap = num(field, value)?,
            "instance_seed" => self.instance.seed = num(field, value)?,
            "instance_cache" => {
                self.instance_cache = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "topology" => {
                self.topology = value
                    .parse()
                    .map_err(|e: Error| Error::config(field, e.to_string()))?
            }
            "algorithm" => {
                self.algorithm = match value {
                    "drsgt" => AlgorithmKind::Drsgt,
                    "drsgd" => AlgorithmKind::Drsgd,
                    _ => return Err(Error::config(field, format!("expected drsgt or drsgd, got `{value}`"))),
                }
            }
            "alpha" => self.alpha = num(field, value)?,
            "beta" => self.beta = num(field, value)?,
            "beta0" => self.beta0 = num(field, value)?,
            "beta_decay" => self.beta_decay = num(field, value)?,
            "t" => self.t = num(field, value)?,
            "schedule" => {
                self.schedule = value
                    .parse()
                    .map_err(|e: Error| Error::config(field, e.to_string()))?
            }
            "oracle" => self.oracle = value.parse()?,
            "init" => {
                self.init = match value {
                    "common" => InitMode::Common,
                    "independent" => InitMode::Independent,
                    _ => return Err(Error::config(field, format!("expected common or independent, got `{value}`"))),
                }
            }
            "seed" => self.seed = num(field, value)?,
            "audit_every" => self.audit_every = num(field, value)?,
            "max_iters" => self.max_iters = num(field, value)?,
            "log_every" => self.log_every = num(field, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "target_eps" => {
                self.target_eps = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(num(field, value)?)
                }
            }
            "wall_clock" => self.wall_clock = num(field, value)?,
            _ => {
                return Err(Error::config(
                    field,
                    format!("unknown key; valid keys are {}", CONFIG_KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    /// Applies `--key=value` (or `key=value`) overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let body = o.trim_start_matches('-');
            let (key, value) = body.split_once('=').ok_or_else(|| {
                Error::config(o, "overrides must be written as --key=value")
            })?;
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.instance;
        if p.agents < 2 {
            return Err(Error::config("agents", "need at least 2 agents"));
        }
        if p.rows_per_agent == 0 {
            return Err(Error::config("rows_per_agent", "must be positive"));
        }
        if p.rank == 0 || p.rank >= p.dim {
            return Err(Error::config("rank", format!("must satisfy 1 <= rank < dim = {}", p.dim)));
        }
        if !(p.eigengap > 0.0 && p.eigengap <= 1.0) {
            return Err(Error::config("eigengap", "must lie in (0, 1]"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be positive"));
        }
        if let Some(eps) = self.target_eps {
            if !(eps > 0.0) {
                return Err(Error::config("target_eps", "must be positive"));
            }
        }
        self.algo_config()
            .validate()
            .map_err(|e| Error::config(field_of(&e), e.to_string()))
    }

    pub fn algo_config(&self) -> AlgoConfig {
        AlgoConfig {
            alpha: self.alpha,
            beta: self.beta,
            t: self.t,
            schedule: self.schedule,
            algorithm: match self.algorithm {
                AlgorithmKind::Drsgt => Algorithm::Drsgt,
                AlgorithmKind::Drsgd => Algorithm::Drsgd {
                    beta0: self.beta0,
                    decay: self.beta_decay,
                },
            },
            init: self.init,
            seed: self.seed,
            audit_every: self.audit_every,
        }
    }

    /// Canonical `key = value` listing of every field.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("name", self.name.clone());
        put("agents", self.instance.agents.to_string());
        put("rows_per_agent", self.instance.rows_per_agent.to_string());
        put("dim", self.instance.dim.to_string());
        put("rank", self.instance.rank.to_string());
        put("eigengap", self.instance.eigengap.to_string());
        put("instance_seed", self.instance.seed.to_string());
        put(
            "instance_cache",
            self.instance_cache
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("topology", self.topology.to_string());
        put(
            "algorithm",
            match self.algorithm {
                AlgorithmKind::Drsgt => "drsgt",
                AlgorithmKind::Drsgd => "drsgd",
            }
            .into(),
        );
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        put("beta0", self.beta0.to_string());
        put("beta_decay", self.beta_decay.to_string());
        put("t", self.t.to_string());
        put("schedule", self.schedule.to_string());
        put("oracle", self.oracle.to_string());
        put(
            "init",
            match self.init {
                InitMode::Common => "common",
                InitMode::Independent => "independent",
            }
            .into(),
        );
        put("seed", self.seed.to_string());
        put("audit_every", self.audit_every.to_string());
        put("max_iters", self.max_iters.to_string());
        put("log_every", self.log_every.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put(
            "target_eps",
            self.target_eps.map(|e| e.to_string()).unwrap_or_else(|| "none".into()),
        );
        put("wall_clock", self.wall_clock.to_string());
        m
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output_dir.join(format!("{}.csv", self.name))
    }
}

fn field_of(e: &Error) -> &'static str {
    match e {
        Error::Schedule(_) => "schedule",
        Error::Parameter(msg) if msg.starts_with("alpha") => "alpha",
        Error::Parameter(msg) if msg.starts_with("beta0") => "beta0",
        Error::Parameter(msg) if msg.starts_with("beta decay") => "beta_decay",
        Error::Parameter(msg) if msg.starts_with("beta") => "beta",
        Error::Parameter(msg) if msg.starts_with('t') => "t",
        _ => "config",
    }
}

/// Result of one run, also echoed into the sweep manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub iterations: u64,
    pub samples: SampleCount,
    pub comm_rounds: u128,
    /// `min_k ‖grad f(X̂_k)‖_F²` over every iteration of the run.
    pub min_grad_norm_sq: f64,
    /// First iteration with `‖grad f(X̂_k)‖_F² ≤ target_eps`, when requested.
    pub reached_target_at: Option<u64>,
    pub final_row: MetricsRow,
    pub rows_written: u64,
    /// Single-sample gradient variance estimated at `X*`, averaged over agents.
    pub sigma_sq_estimate: f64,
    pub sigma2: f64,
    pub t_min: u32,
    pub max_tracker_norm: f64,
    pub max_tracking_gap: f64,
}

/// Builds (or loads from cache) the instance described by `config`.
pub fn load_or_generate_instance(config: &ExperimentConfig) -> Result<PcaProblem<f64>> {
    match &config.instance_cache {
        Some(path) if path.exists() => {
            let problem = PcaProblem::load(path)?;
            if problem.n_agents() != config.instance.agents
                || problem.shape() != (config.instance.dim, config.instance.rank)
            {
                return Err(Error::config(
                    "instance_cache",
                    format!("{} does not match the configured instance shape", path.display()),
                ));
            }
            Ok(problem)
        }
        Some(path) => {
            let problem = PcaProblem::generate(&config.instance)?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            problem.save(path)?;
            Ok(problem)
        }
        None => PcaProblem::generate(&config.instance),
    }
}

/// Runs one experiment, writing its CSV under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let problem = Arc::new(load_or_generate_instance(config)?);
    run_to_file(config, problem)
}

fn run_to_file(config: &ExperimentConfig, problem: Arc<PcaProblem<f64>>) -> Result<ExperimentSummary> {
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let path = config.csv_path();
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let summary = run_experiment_with(config, problem, &mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Runs one experiment on an already built instance, streaming CSV rows to
/// `out`.
pub fn run_experiment_with<W: Write + ?Sized>(
    config: &ExperimentConfig,
    problem: Arc<PcaProblem<f64>>,
    out: &mut W,
) -> Result<ExperimentSummary> {
    config.validate()?;
    let net = Arc::new(build_topology::<f64>(&config.topology, config.instance.agents)?);
    if net.n_agents() != problem.n_agents() {
        return Err(Error::config("agents", "instance and topology disagree on the agent count"));
    }
    match config.oracle {
        OracleKind::RowSampling => drive(config, problem.clone(), net, RowSampling::new(problem), out),
        OracleKind::FullBatch => drive(config, problem.clone(), net, FullBatch::new(problem), out),
        OracleKind::SyntheticNoise { sigma } => {
            let oracle = SyntheticNoise::new(problem.clone(), sigma)?;
            drive(config, problem, net, oracle, out)
        }
    }
}

fn drive<O: GradientOracle<f64>, W: Write + ?Sized>(
    config: &ExperimentConfig,
    problem: Arc<PcaProblem<f64>>,
    net: Arc<NetworkSpec<f64>>,
    oracle: O,
    out: &mut W,
) -> Result<ExperimentSummary> {
    let io = |e| Error::io(config.csv_path(), e);
    let sigma_sq_estimate = estimate_sigma_sq(&oracle, &problem, config.seed)?;
    let diag = net.spectral_diagnostics(config.t);
    let mut engine = Engine::new(oracle, net, config.algo_config())?;

    writeln!(out, "# schema={CSV_SCHEMA}").map_err(io)?;
    writeln!(out, "{CSV_HEADER}").map_err(io)?;

    let started = Instant::now();
    let mut min_grad_norm_sq = f64::INFINITY;
    let mut reached_target_at = None;
    let mut last_row = None;
    let mut rows_written = 0u64;
    let max_iters = config.max_iters;
    let summary = engine.run(max_iters, &mut |snap: Snapshot<'_, f64>| {
        let wall_ms = if config.wall_clock {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let row = compute_metrics_or_sentinel(&problem, &snap.points(), snap.counters, wall_ms)?;
        let k = row.k;
        let g2 = row.grad_norm * row.grad_norm;
        if g2 < min_grad_norm_sq {
            min_grad_norm_sq = g2;
        }
        let hit = config.target_eps.is_some_and(|eps| g2 <= eps);
        if hit && reached_target_at.is_none() {
            reached_target_at = Some(k);
        }
        if k % config.log_every == 0 || k == max_iters || hit {
            writeln!(out, "{}", row.to_csv_line()).map_err(io)?;
            rows_written += 1;
        }
        last_row = Some(row);
        Ok(if hit {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    })?;

    Ok(ExperimentSummary {
        name: config.name.clone(),
        iterations: summary.iterations,
        samples: summary.samples,
        comm_rounds: summary.comm_rounds,
        min_grad_norm_sq,
        reached_target_at,
        final_row: last_row.expect("the observer sees at least the initial state"),
        rows_written,
        sigma_sq_estimate,
        sigma2: diag.sigma2,
        t_min: diag.t_min,
        max_tracker_norm: summary.max_tracker_norm,
        max_tracking_gap: summary.max_tracking_gap,
    })
}

const SIGMA_DRAWS: usize = 200;

/// Uses its own random stream, so it never shifts the run's samples.
fn estimate_sigma_sq<O: GradientOracle<f64>>(
    oracle: &O,
    problem: &PcaProblem<f64>,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut total = 0.0;
    for agent in 0..problem.n_agents() {
        total += empirical_variance(oracle, agent, problem.x_star(), 1, SIGMA_DRAWS, &mut rng)?;
    }
    Ok(total / problem.n_agents() as f64)
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub label: String,
    pub status: String,
    pub csv: String,
    pub config: BTreeMap<String, String>,
    pub summary: Option<ExperimentSummary>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SweepManifest {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.status != "ok").count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            let line = serde_json::to_string(e)
                .map_err(|err| Error::config("manifest", err.to_string()))?;
            text.push_str(&line);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|err| Error::config("manifest", err.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Schedule(Vec<SampleSchedule>),
    Beta(Vec<f64>),
    Topology(Vec<Topology>),
    Seed(Vec<u64>),
}

impl SweepAxis {
    /// Parses `--axis` and a `;`-separated value list.
    pub fn parse(axis: &str, values: &[String]) -> Result<Self> {
        let values = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty());
        let bad = |v: &str| Error::config("values", format!("cannot parse `{v}` for axis `{axis}`"));
        Ok(match axis {
            "schedule" => SweepAxis::Schedule(
                values.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?,
            ),
            "beta" => SweepAxis::Beta(values.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
            "topology" => SweepAxis::Topology(
                values.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?,
            ),
            "seed" => SweepAxis::Seed(values.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
            other => {
                return Err(Error::config(
                    "axis",
                    format!("unknown axis `{other}`; expected schedule, beta, topology or seed"),
                ))
            }
        })
    }

    /// One config per value, named `<base>-<index>`.
    pub fn expand(&self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        fn each<V: Clone>(
            base: &ExperimentConfig,
            values: &[V],
            apply: impl Fn(&mut ExperimentConfig, V),
            label: impl Fn(&V) -> String,
        ) -> Vec<(String, ExperimentConfig)> {
            values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut c = base.clone();
                    apply(&mut c, v.clone());
                    c.name = format!("{}-{i:03}", base.name);
                    (label(v), c)
                })
                .collect()
        }
        match self {
            SweepAxis::Schedule(v) => each(base, v, |c, s| c.schedule = s, |s| s.to_string()),
            SweepAxis::Beta(v) => each(base, v, |c, b| c.beta = b, |b| format!("beta={b}")),
            SweepAxis::Topology(v) => each(base, v, |c, t| c.topology = t, |t| t.to_string()),
            SweepAxis::Seed(v) => each(base, v, |c, s| c.seed = s, |s| format!("seed={s}")),
        }
    }
}

/// Runs `base` once per axis value into `out_dir`, with `jobs` worker threads.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: &SweepAxis,
    out_dir: &Path,
    jobs: usize,
) -> Result<SweepManifest> {
    let runs = axis
        .expand(base)
        .into_iter()
        .map(|(label, mut c)| {
            c.output_dir = out_dir.to_path_buf();
            (label, c)
        })
        .collect();
    run_batch(runs, out_dir, jobs)
}

/// Runs labelled configs in parallel, sharing one instance per distinct set
/// of instance parameters, and writes `manifest.jsonl` into `out_dir`.
/// Individual failures are recorded in the manifest rather than aborting.
pub fn run_batch(
    runs: Vec<(String, ExperimentConfig)>,
    out_dir: &Path,
    jobs: usize,
) -> Result<SweepManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut instances: HashMap<String, Arc<PcaProblem<f64>>> = HashMap::new();
    let mut prepared = Vec::with_capacity(runs.len());
    for (label, config) in runs {
        let key = format!("{:?}|{:?}", config.instance, config.instance_cache);
        let problem = match instances.get(&key) {
            Some(p) => Ok(p.clone()),
            None => config.validate().and_then(|_| load_or_generate_instance(&config)).map(|p| {
                let p = Arc::new(p);
                instances.insert(key, p.clone());
                p
            }),
        };
        prepared.push((label, config, problem));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let entries: Vec<ManifestEntry> = pool.install(|| {
        prepared
            .into_par_iter()
            .enumerate()
            .map(|(i, (label, config, problem))| {
                let result = problem.and_then(|p| run_to_file(&config, p));
                let csv = config
                    .csv_path()
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let (status, summary, error) = match result {
                    Ok(s) => ("ok".to_string(), Some(s), None),
                    Err(e) => ("error".to_string(), None, Some(e.to_string())),
                };
                ManifestEntry {
                    run_id: format!("run-{i:03}"),
                    label,
                    status,
                    csv,
                    config: config.to_map(),
                    summary,
                    error,
                }
            })
            .collect()
    });
    let manifest = SweepManifest { entries };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub const FIGURE_IDS: &[&str] = &["fig1", "fig2", "fig5"];

/// Built-in labelled configs for the three convergence figures.
///
/// * `fig1`: DRSGT with `N_k = k+1` against DRSGD, ring, `t = 1`.
/// * `fig2`: DRSGT with `N_k = ⌈q^{−k}⌉`, `q ∈ {0.85, 0.9, 0.95}`.
/// * `fig5`: DRSGT with `N_k ∈ {1, k+1, ⌈0.9^{−k}⌉}`.
pub fn figure_configs(id: &str, base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut base = base.clone();
    base.topology = Topology::Ring;
    base.t = 1;
    base.alpha = 1.0;
    base.beta = 0.1;
    base.oracle = OracleKind::RowSampling;
    base.algorithm = AlgorithmKind::Drsgt;
    let with = |name: &str, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        c.name = format!("{id}-{name}");
        f(&mut c);
        c
    };
    let schedule_run = |label: &str, name: &str, s: SampleSchedule| {
        (label.to_string(), with(name, &|c| c.schedule = s))
    };
    match id {
        "fig1" => Ok(vec![
            schedule_run("DRSGT", "drsgt", SampleSchedule::Polynomial(1.0)),
            (
                "DRSGD".to_string(),
                with("drsgd", &|c| c.algorithm = AlgorithmKind::Drsgd),
            ),
        ]),
        "fig2" => Ok(vec![
            schedule_run("N_k=ceil(0.85^-k)", "geo085", SampleSchedule::Geometric(0.85)),
            schedule_run("N_k=ceil(0.9^-k)", "geo090", SampleSchedule::Geometric(0.9)),
            schedule_run("N_k=ceil(0.95^-k)", "geo095", SampleSchedule::Geometric(0.95)),
        ]),
        "fig5" => Ok(vec![
            schedule_run("N_k=1", "const1", SampleSchedule::Constant(1)),
            schedule_run("N_k=k+1", "poly1", SampleSchedule::Polynomial(1.0)),
            schedule_run("N_k=ceil(0.9^-k)", "geo090", SampleSchedule::Geometric(0.9)),
        ]),
        other => Err(Error::config(
            "figure",
            format!("unknown figure `{other}`; valid ids are {}", FIGURE_IDS.join(", ")),
        )),
    }
}
