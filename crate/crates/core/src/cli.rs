//! Command-line front end for the `drsgt` binary.
//!
//! Exit codes: 0 on success, 2 for configuration, topology or I/O problems,
//! 3 when the simulator aborts with a numerical fault.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{
    default_output_dir, figure_configs, load_or_generate_instance, run_batch, run_experiment,
    run_sweep, ExperimentConfig, ManifestEntry, SweepAxis, SweepManifest, MANIFEST_FILE,
};
use crate::network::{parse_edge_list, NetworkSpec, Topology};
use crate::oracle::{empirical_variance, PcaProblem, RowSampling};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FAULT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "drsgt", version, about = "Decentralized Riemannian stochastic gradient tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment. Trailing `--key=value` arguments override the file.
    Run {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run a config once per value of one axis (schedule, beta, topology, seed).
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Values separated by `;`, e.g. `constant:1;polynomial:1`.
        #[arg(long, value_delimiter = ';', allow_hyphen_values = true)]
        values: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Print mixing diagnostics for a topology.
    ValidateGraph {
        /// ring, complete, star, erdos_renyi:<p>:<seed>, explicit or explicit:<i-j,...>.
        kind: String,
        /// Number of agents, or an edge-list file for `explicit`.
        arg: Option<String>,
        #[arg(long, default_value_t = 1)]
        t: u32,
    },
    /// Describe a cached instance file or the instance a config would generate.
    InspectInstance {
        path: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Regenerate the data series behind one of the built-in figures.
    ReplicateFigure {
        figure: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit status reported for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_fault() {
        EXIT_FAULT
    } else {
        EXIT_USAGE
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides, out),
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
            jobs,
            overrides,
        } => {
            let mut base = ExperimentConfig::load(&config)?;
            base.apply_overrides(&overrides)?;
            let axis = SweepAxis::parse(&axis, &values)?;
            let dir = out_dir.unwrap_or_else(|| base.output_dir.clone());
            let manifest = run_sweep(&base, &axis, &dir, jobs)?;
            report_manifest(&manifest, &dir, out, err)
        }
        Command::ValidateGraph { kind, arg, t } => cmd_validate_graph(&kind, arg.as_deref(), t, out, err),
        Command::InspectInstance { path, overrides } => cmd_inspect(&path, &overrides, out),
        Command::ReplicateFigure {
            figure,
            out_dir,
            config,
            jobs,
            overrides,
        } => {
            let mut base = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            base.apply_overrides(&overrides)?;
            let dir = out_dir.unwrap_or_else(|| default_output_dir().join(&figure));
            let runs = figure_configs(&figure, &base)?
                .into_iter()
                .map(|(label, mut c)| {
                    c.output_dir = dir.clone();
                    (label, c)
                })
                .collect();
            let manifest = run_batch(runs, &dir, jobs)?;
            report_manifest(&manifest, &dir, out, err)
        }
    }
}

fn cmd_run(path: &Path, overrides: &[String], out: &mut dyn Write) -> Result<u8> {
    let mut config = ExperimentConfig::load(path)?;
    config.apply_overrides(overrides)?;
    let summary = run_experiment(&config)?;
    let entry = ManifestEntry {
        run_id: "run-000".into(),
        label: config.name.clone(),
        status: "ok".into(),
        csv: format!("{}.csv", config.name),
        config: config.to_map(),
        summary: Some(summary.clone()),
        error: None,
    };
    SweepManifest {
        entries: vec![entry],
    }
    .write(&config.output_dir.join(MANIFEST_FILE))?;
    let row = &summary.final_row;
    let line = format!(
        "{}: k={} samples={} comm_rounds={} f_gap={:.6e} grad_norm={:.6e} consensus={:.6e} ds={:.6e} min_grad_norm_sq={:.6e} sigma_sq_est={:.6e}{}",
        config.csv_path().display(),
        row.k,
        summary.samples,
        summary.comm_rounds,
        row.f_gap,
        row.grad_norm,
        row.consensus,
        row.ds,
        summary.min_grad_norm_sq,
        summary.sigma_sq_estimate,
        match summary.reached_target_at {
            Some(k) => format!(" target reached at k={k}"),
            None => String::new(),
        }
    );
    writeln!(out, "{line}").map_err(|e| Error::io("stdout", e))?;
    Ok(EXIT_OK)
}

fn report_manifest(
    manifest: &SweepManifest,
    dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8> {
    let io = |e| Error::io("stdout", e);
    for e in &manifest.entries {
        match (&e.summary, &e.error) {
            (Some(s), _) => writeln!(
                out,
                "{} [{}] {} grad_norm={:.6e} f_gap={:.6e}",
                e.run_id, e.label, e.csv, s.final_row.grad_norm, s.final_row.f_gap
            )
            .map_err(io)?,
            (None, err_msg) => writeln!(
                err,
                "{} [{}] failed: {}",
                e.run_id,
                e.label,
                err_msg.as_deref().unwrap_or("unknown error")
            )
            .map_err(io)?,
        }
    }
    writeln!(
        out,
        "{} runs, {} failed; manifest at {}",
        manifest.entries.len(),
        manifest.failures(),
        dir.join(MANIFEST_FILE).display()
    )
    .map_err(io)?;
    Ok(if manifest.failures() == 0 {
        EXIT_OK
    } else {
        EXIT_USAGE
    })
}

fn cmd_validate_graph(
    kind: &str,
    arg: Option<&str>,
    t: u32,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8> {
    let io = |e| Error::io("stdout", e);
    let agents = match arg {
        Some(a) => match a.parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) if kind == "explicit" => None,
            Err(_) => return Err(Error::Topology(format!("expected an agent count, got `{a}`"))),
        },
        None => None,
    };
    let span = |edges: &[(usize, usize)]| edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let net: NetworkSpec<f64> = if kind == "explicit" {
        let path = arg
            .filter(|_| agents.is_none())
            .ok_or_else(|| Error::Topology("`explicit` needs an edge-list file".into()))?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let edges = parse_edge_list(&text)?;
        NetworkSpec::metropolis(span(&edges), &edges)?
    } else {
        let topology: Topology = kind.parse()?;
        let n = match (&topology, agents) {
            (_, Some(n)) => n,
            (Topology::Explicit(edges), None) => span(edges),
            (_, None) => return Err(Error::Topology(format!("`{kind}` needs an agent count"))),
        };
        crate::network::build_topology(&topology, n)?
    };
    let d = net.spectral_diagnostics(t);
    writeln!(out, "agents = {}", net.n_agents()).map_err(io)?;
    writeln!(out, "edges = {}", net.n_edges()).map_err(io)?;
    writeln!(out, "sigma2 = {:.12}", d.sigma2).map_err(io)?;
    writeln!(out, "t = {}", d.t).map_err(io)?;
    writeln!(out, "L_t = {:.12}", d.l_t).map_err(io)?;
    writeln!(out, "t_min = {}", d.t_min).map_err(io)?;
    if !d.meets_bound() {
        writeln!(
            err,
            "warning: t = {} is below the theoretical bound t_min = {}",
            d.t, d.t_min
        )
        .map_err(io)?;
    }
    Ok(EXIT_OK)
}

fn cmd_inspect(path: &Path, overrides: &[String], out: &mut dyn Write) -> Result<u8> {
    let io = |e| Error::io("stdout", e);
    let problem = if is_instance_cache(path)? {
        PcaProblem::<f64>::load(path)?
    } else {
        let mut config = ExperimentConfig::load(path)?;
        config.apply_overrides(overrides)?;
        load_or_generate_instance(&config)?
    };
    let problem = Arc::new(problem);
    let s = problem.smoothness();
    let spectrum = problem.spectrum();
    let (n, r) = problem.shape();
    let gap = spectrum[r - 1] - spectrum[r];
    let oracle = RowSampling::new(problem.clone());
    let mut rng = crate::engine::agent_rng(0, u64::MAX);
    let mut sigma_sq = 0.0;
    for agent in 0..problem.n_agents() {
        sigma_sq += empirical_variance(&oracle, agent, problem.x_star(), 1, 200, &mut rng)?;
    }
    sigma_sq /= problem.n_agents() as f64;
    writeln!(out, "agents = {}", problem.n_agents()).map_err(io)?;
    writeln!(
        out,
        "rows_per_agent = {}",
        (0..problem.n_agents())
            .map(|i| problem.rows(i).to_string())
            .collect::<Vec<_>>()
            .join(",")
    )
    .map_err(io)?;
    writeln!(out, "dim = {n}").map_err(io)?;
    writeln!(out, "rank = {r}").map_err(io)?;
    writeln!(
        out,
        "spectrum = {}",
        spectrum.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
    )
    .map_err(io)?;
    writeln!(out, "eigengap = {gap:.6}").map_err(io)?;
    writeln!(out, "f_star = {:.12}", problem.f_star()).map_err(io)?;
    writeln!(out, "L = {:.6}", s.l).map_err(io)?;
    writeln!(out, "L_g = {:.6}", s.l_g).map_err(io)?;
    writeln!(out, "L_G = {:.6}", s.l_big_g).map_err(io)?;
    writeln!(out, "sample_bound = {:.6}", problem.sample_bound()).map_err(io)?;
    writeln!(out, "gradient_bound = {:.6}", problem.gradient_bound()).map_err(io)?;
    writeln!(out, "sigma_sq_estimate = {sigma_sq:.6e}").map_err(io)?;
    Ok(EXIT_OK)
}

fn is_instance_cache(path: &Path) -> Result<bool> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    match file.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == crate::oracle::CACHE_MAGIC),
        Err(_) => Ok(false),
    }
}
