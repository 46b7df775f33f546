//! `midbf` command-line driver.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use midbf_core::butterfly::ButterflyFactorization;
use midbf_core::experiment::{
    build_problem, random_vector_seeded, recover_phase, run_on_problem, scaling_sweep, ExperimentConfig, MetricsReport,
    ProblemKind, SweepReport, REPORT_VERSION,
};
use midbf_core::kernels::{Scenario, SpherePoints};
use midbf_core::Error;
use midbf_cli::io;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "midbf", version, about = "Phase recovery and butterfly factorization of oscillatory kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover the phase from indirect access and write its low-rank factors.
    Recover(RecoverArgs),
    /// Recover, compress and butterfly-factorize; write the factorization.
    Factorize(FactorizeArgs),
    /// Apply a stored factorization to a vector.
    Apply(ApplyArgs),
    /// Run the full pipeline once and report errors and timings.
    Bench(BenchArgs),
    /// Run the pipeline over several sizes and fit log-log slopes.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Fio2d,
    Nufft,
    Helmholtz,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpherePointsArg {
    Vertices,
    FaceCenters,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    #[default]
    Json,
    Csv,
}

/// Problem and algorithm parameters. Flags override values from `--config`.
#[derive(Args)]
struct ProblemArgs {
    /// JSON file with an experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Points per dimension (fio2d: n² grid points, nufft: n³ random points).
    #[arg(long)]
    n: Option<usize>,
    /// Icosphere refinement level (helmholtz).
    #[arg(long)]
    mesh_level: Option<usize>,
    #[arg(long, value_enum)]
    sphere_points: Option<SpherePointsArg>,
    /// Rank of the phase factorization.
    #[arg(long)]
    rank_phase: Option<usize>,
    /// Maximum ID rank of the butterfly factorization.
    #[arg(long)]
    rank_bf: Option<usize>,
    /// Discontinuity threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Raise the threshold until at most this many discontinuities remain.
    #[arg(long)]
    tau_cap: Option<usize>,
    #[arg(long)]
    oversample_q: Option<usize>,
    #[arg(long)]
    oversample_t: Option<usize>,
    /// Leaf capacity (default 8^d).
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Relative tolerance of the adaptive ID rank.
    #[arg(long)]
    eps: Option<f64>,
    /// Use the fixed rank instead of the adaptive one.
    #[arg(long)]
    fixed_rank: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// 1: entry access, 2: products with K and Kᵀ, 3: exact phase rows.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    scenario: Option<u8>,
}

#[derive(Args)]
struct OutputArgs {
    /// Report destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: ReportFormat,
}

#[derive(Args)]
struct RecoverArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Destination of the row factor U (`.bin` or CSV).
    #[arg(long)]
    u_out: Option<PathBuf>,
    /// Destination of the column factor V (`.bin` or CSV).
    #[arg(long)]
    v_out: Option<PathBuf>,
}

#[derive(Args)]
struct FactorizeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Destination of the binary factorization.
    #[arg(long)]
    out: PathBuf,
    /// Report destination (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: ReportFormat,
}

#[derive(Args)]
struct ApplyArgs {
    /// Binary factorization written by `factorize`.
    #[arg(long)]
    factorization: PathBuf,
    /// Input vector (`.bin` or CSV); random when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed of the random input vector.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply the transpose.
    #[arg(long)]
    transpose: bool,
    /// Destination of the result vector (`.bin` or CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: ReportFormat,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Exit with status 3 when ε^b or ε^K exceeds this value.
    #[arg(long)]
    fail_above: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Values of `n` (or mesh levels for helmholtz).
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Exit with status 3 when any ε^b or ε^K exceeds this value.
    #[arg(long)]
    fail_above: Option<f64>,
}

enum Failure {
    Config(String),
    Numerical(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Input(_) | Error::Dimension(_) => Self::Config(e.to_string()),
            Error::IllConditioned { .. } | Error::Disconnected { .. } => Self::Numerical(e.to_string()),
            Error::Format(_) | Error::Io(_) => Self::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl ProblemArgs {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let f = File::open(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_reader(BufReader::new(f)).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(k) = self.kernel {
            c.kernel = match k {
                KernelArg::Fio2d => ProblemKind::Fio2d,
                KernelArg::Nufft => ProblemKind::Nufft,
                KernelArg::Helmholtz => ProblemKind::Helmholtz,
            };
        }
        if let Some(s) = self.sphere_points {
            c.sphere_points = match s {
                SpherePointsArg::Vertices => SpherePoints::Vertices,
                SpherePointsArg::FaceCenters => SpherePoints::FaceCenters,
            };
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(n, mesh_level, rank_phase, rank_bf, tau, oversample_q, oversample_t, seed);
        if self.tau_cap.is_some() {
            c.tau_cap = self.tau_cap;
        }
        if self.leaf_size.is_some() {
            c.leaf_size = self.leaf_size;
        }
        if self.eps.is_some() {
            c.eps = self.eps;
        }
        if self.fixed_rank {
            c.eps = None;
        }
        if let Some(s) = self.scenario {
            c.scenario = Scenario::from_number(s)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut s = std::io::stdout().lock();
            s.write_all(text.as_bytes())?;
            s.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Flatten a JSON object into CSV columns; nested values are written as JSON.
fn csv_table<T: Serialize>(rows: &[T]) -> CliResult<String> {
    let values: Vec<serde_json::Value> = rows.iter().map(|r| serde_json::to_value(r).expect("report serializes")).collect();
    let mut header: Vec<String> = Vec::new();
    let mut flat_rows = Vec::new();
    for v in &values {
        let mut flat = Vec::new();
        flatten("", v, &mut flat);
        if header.is_empty() {
            header = flat.iter().map(|(k, _)| k.clone()).collect();
        }
        flat_rows.push(flat.into_iter().map(|(_, x)| x).collect::<Vec<_>>());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_fail = |e: csv::Error| Failure::Other(e.to_string());
    w.write_record(&header).map_err(csv_fail)?;
    for r in flat_rows {
        w.write_record(&r).map_err(csv_fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        serde_json::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        serde_json::Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn render<T: Serialize>(rows: &[T], single: bool, format: ReportFormat) -> CliResult<String> {
    match format {
        ReportFormat::Json if single => Ok(to_json(&rows[0])),
        ReportFormat::Json => Ok(to_json(&rows)),
        ReportFormat::Csv => csv_table(rows),
    }
}

#[derive(Serialize)]
struct RecoverReport {
    version: u32,
    config: ExperimentConfig,
    n_rows: usize,
    n_cols: usize,
    rank: usize,
    tau_used: Option<f64>,
    n_dr: usize,
    n_dc: usize,
    t_path: f64,
    t_rec: f64,
}

fn cmd_recover(a: &RecoverArgs) -> CliResult<()> {
    let cfg = a.problem.config()?;
    let problem = build_problem(&cfg)?;
    let pf = recover_phase(&cfg, &problem)?;
    if let Some(p) = &a.u_out {
        io::write_real_matrix(p, &pf.phase.u)?;
    }
    if let Some(p) = &a.v_out {
        io::write_real_matrix(p, &pf.phase.v)?;
    }
    let report = RecoverReport {
        version: REPORT_VERSION,
        n_rows: pf.phase.nrows(),
        n_cols: pf.phase.ncols(),
        rank: pf.phase.rank(),
        tau_used: pf.tau.is_finite().then_some(pf.tau),
        n_dr: pf.row_discontinuities,
        n_dc: pf.col_discontinuities,
        t_path: pf.t_path.as_secs_f64(),
        t_rec: pf.t_rec.as_secs_f64(),
        config: cfg,
    };
    emit(a.output.out.as_deref(), &render(&[report], true, a.output.format)?)
}

fn cmd_factorize(a: &FactorizeArgs) -> CliResult<()> {
    let cfg = a.problem.config()?;
    let problem = build_problem(&cfg)?;
    let out = run_on_problem(&cfg, &problem)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    out.factorization.write_to(&mut w)?;
    w.flush()?;
    emit(a.report.as_deref(), &render(&[out.report], true, a.format)?)
}

#[derive(Serialize)]
struct ApplyReport {
    version: u32,
    n_in: usize,
    n_out: usize,
    transpose: bool,
    t_app: f64,
    output_norm: f64,
}

fn cmd_apply(a: &ApplyArgs) -> CliResult<()> {
    let fac = ButterflyFactorization::read_from(&mut BufReader::new(File::open(&a.factorization)?))?;
    let n_in = if a.transpose { fac.nrows } else { fac.ncols };
    let x = match &a.input {
        Some(p) => io::read_complex_vector(p)?,
        None => random_vector_seeded(a.seed, n_in),
    };
    let start = Instant::now();
    let y = if a.transpose { fac.apply_transpose(&x)? } else { fac.apply(&x)? };
    let t_app = start.elapsed().as_secs_f64();
    let report = ApplyReport {
        version: REPORT_VERSION,
        n_in,
        n_out: y.len(),
        transpose: a.transpose,
        t_app,
        output_norm: y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
    };
    match &a.out {
        Some(p) => {
            io::write_complex_vector(p, &y)?;
            emit(None, &render(&[report], true, a.format)?)
        }
        None => emit(None, &render(&[report], true, a.format)?),
    }
}

fn check_threshold(reports: &[MetricsReport], limit: Option<f64>) -> CliResult<()> {
    let Some(limit) = limit else { return Ok(()) };
    for r in reports {
        let worst = r.eps_b.max(r.eps_k);
        if !(worst <= limit) {
            return Err(Failure::Numerical(format!(
                "N={}: eps_b={:.3e}, eps_K={:.3e} exceed {limit:.3e}",
                r.n_rows, r.eps_b, r.eps_k
            )));
        }
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let cfg = a.problem.config()?;
    let problem = build_problem(&cfg)?;
    let out = run_on_problem(&cfg, &problem)?;
    emit(a.output.out.as_deref(), &render(std::slice::from_ref(&out.report), true, a.output.format)?)?;
    check_threshold(&[out.report], a.fail_above)
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let base = a.problem.config()?;
    let cfgs: Vec<ExperimentConfig> = a
        .sizes
        .iter()
        .map(|&s| {
            let mut c = base.clone();
            if c.kernel == ProblemKind::Helmholtz {
                c.mesh_level = s;
            } else {
                c.n = s;
            }
            c
        })
        .collect();
    let sweep: SweepReport = scaling_sweep(&cfgs)?;
    let text = match a.output.format {
        ReportFormat::Json => to_json(&sweep),
        ReportFormat::Csv => {
            eprintln!("slopes: {}", serde_json::to_string(&sweep.slopes).expect("slopes serialize"));
            csv_table(&sweep.reports)?
        }
    };
    emit(a.output.out.as_deref(), &text)?;
    check_threshold(&sweep.reports, a.fail_above)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Recover(a) => cmd_recover(a),
        Command::Factorize(a) => cmd_factorize(a),
        Command::Apply(a) => cmd_apply(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
