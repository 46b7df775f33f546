//! End-to-end pipeline (recovery, phase compression, butterfly build and
//! apply), the sampled error metrics, and size sweeps.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::butterfly::{factorize_points, ButterflyFactorization, IdbfConfig};
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::kernels::{helmholtz_h, sphere_halves, KernelAccessor, KernelKind, PhaseKernel, Scenario, SpherePoints};
use crate::linalg::{rand_perm, spectral_norm};
use crate::phase_md::{low_rank_phase_factorization, LowRankPhase, PhaseConfig, TauRule};

/// Version of the JSON report layout.
pub const REPORT_VERSION: u32 = 1;
/// Rows (and columns) sampled by the error metrics.
pub const METRIC_SAMPLES: usize = 256;

/// Built-in test problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Generalized Radon transform on the `n × n` grid of `[0,1)²`.
    Fio2d,
    /// `x·ξ` on `n³` random points of `[0,1)³` on each side.
    Nufft,
    /// `h|x − ξ|` between the two halves of a refined icosphere.
    Helmholtz,
}

impl ProblemKind {
    pub fn dim(self) -> usize {
        match self {
            Self::Fio2d => 2,
            Self::Nufft | Self::Helmholtz => 3,
        }
    }
}

/// Parameters of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kernel: ProblemKind,
    /// Points per dimension (grid and random problems).
    pub n: usize,
    /// Icosphere refinement level (sphere problem).
    pub mesh_level: usize,
    pub sphere_points: SpherePoints,
    /// Rank `r` of the phase factorization.
    pub rank_phase: usize,
    /// Maximum butterfly ID rank `k`.
    pub rank_bf: usize,
    /// Discontinuity threshold.
    pub tau: f64,
    /// When set, raise `tau` until at most this many discontinuities remain.
    pub tau_cap: Option<usize>,
    pub oversample_q: usize,
    pub oversample_t: usize,
    /// Leaf capacity; `None` means `8^d`.
    pub leaf_size: Option<usize>,
    /// Adaptive ID tolerance; `None` keeps the rank fixed at `k`.
    pub eps: Option<f64>,
    pub seed: u64,
    pub scenario: Scenario,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kernel: ProblemKind::Fio2d,
            n: 16,
            mesh_level: 3,
            sphere_points: SpherePoints::FaceCenters,
            rank_phase: 20,
            rank_bf: 30,
            tau: 0.25,
            tau_cap: None,
            oversample_q: 2,
            oversample_t: 5,
            leaf_size: None,
            eps: Some(1e-9),
            seed: 0,
            scenario: Scenario::Matvec,
        }
    }
}

impl ExperimentConfig {
    pub fn leaf_size(&self) -> usize {
        self.leaf_size.unwrap_or(1 << (3 * self.kernel.dim()))
    }

    pub fn idbf(&self) -> IdbfConfig {
        IdbfConfig { k: self.rank_bf, t: self.oversample_t, n0: self.leaf_size(), eps: self.eps, seed: self.seed }
    }

    pub fn phase_config(&self) -> PhaseConfig {
        let tau = match self.tau_cap {
            Some(cap) => TauRule::Escalate { cap },
            None => TauRule::Fixed(self.tau),
        };
        PhaseConfig { rank: self.rank_phase, q_oversample: self.oversample_q, tau }
    }

    /// Checks that do not need the point sets.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("rank-phase", self.rank_phase),
            ("rank-bf", self.rank_bf),
            ("oversample-q", self.oversample_q),
            ("oversample-t", self.oversample_t),
            ("leaf-size", self.leaf_size()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.tau > 0.0 && self.tau <= 0.5) {
            return Err(Error::Config(format!("tau {} outside (0, 1/2]", self.tau)));
        }
        self.idbf().validate()
    }
}

/// Point sets and hidden kernel of an experiment.
#[derive(Clone, Debug)]
pub struct Problem {
    pub kernel: Arc<PhaseKernel>,
}

impl Problem {
    pub fn x(&self) -> &PointSet {
        &self.kernel.x
    }

    pub fn omega(&self) -> &PointSet {
        &self.kernel.omega
    }

    pub fn accessor(&self, scenario: Scenario) -> KernelAccessor {
        KernelAccessor::new(self.kernel.clone(), scenario)
    }
}

fn random_points<R: Rng>(rng: &mut R, dim: usize, count: usize) -> Result<PointSet> {
    PointSet::new(dim, (0..dim * count).map(|_| rng.gen::<f64>()).collect())
}

/// Build the point sets and the kernel for `cfg`.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    cfg.validate()?;
    let (kind, x, omega) = match cfg.kernel {
        ProblemKind::Fio2d => {
            let g = PointSet::grid(2, cfg.n)?;
            (KernelKind::Fio2d, g.clone(), g)
        }
        ProblemKind::Nufft => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_901E75);
            let count = cfg.n.pow(3);
            let x = random_points(&mut rng, 3, count)?;
            let o = random_points(&mut rng, 3, count)?;
            (KernelKind::Nufft, x, o)
        }
        ProblemKind::Helmholtz => {
            let (x, o) = sphere_halves(cfg.mesh_level, cfg.sphere_points)?;
            (KernelKind::Helmholtz { h: helmholtz_h(x.len()) }, x, o)
        }
    };
    let n_min = x.len().min(omega.len());
    if cfg.rank_phase > n_min {
        return Err(Error::Config(format!("phase rank {} exceeds the problem size {n_min}", cfg.rank_phase)));
    }
    Ok(Problem { kernel: Arc::new(PhaseKernel::new(kind, x, omega)?) })
}

/// Random vector with real and imaginary parts uniform in `[-1, 1)`.
pub fn random_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

/// [`random_vector`] from a seeded generator.
pub fn random_vector_seeded(seed: u64, n: usize) -> Vec<Complex64> {
    random_vector(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

/// `sqrt(Σ_S |g_fast − g_direct|² / Σ_S |g_direct|²)` over the sampled rows.
pub fn metric_eps_b<D>(g_fast: &[Complex64], rows: &[usize], direct: D) -> f64
where
    D: Fn(usize) -> Complex64 + Sync,
{
    let (num, den) = rows
        .par_iter()
        .map(|&i| {
            let d = direct(i);
            ((g_fast[i] - d).norm_sqr(), d.norm_sqr())
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if den == 0.0 {
        return num.sqrt();
    }
    (num / den).sqrt()
}

/// Spectral-norm relative error of `exp(2πi UVᵀ)` against `exp(2πi Φ)` on the
/// sampled rows and columns.
pub fn metric_eps_k<P>(phase: &LowRankPhase, exact: P, rows: &[usize], cols: &[usize]) -> f64
where
    P: Fn(usize, usize) -> f64,
{
    let tau = std::f64::consts::TAU;
    let k_true = DMatrix::from_fn(rows.len(), cols.len(), |a, b| Complex64::from_polar(1.0, tau * exact(rows[a], cols[b])));
    let k_app = DMatrix::from_fn(rows.len(), cols.len(), |a, b| phase.kernel_entry(rows[a], cols[b]));
    let den = spectral_norm(&k_true);
    let num = spectral_norm(&(k_app - &k_true));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Timings and errors of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub config: ExperimentConfig,
    /// Rows of the kernel matrix.
    pub n_rows: usize,
    pub n_cols: usize,
    pub eps_b: f64,
    pub eps_k: f64,
    pub t_path: f64,
    pub t_rec: f64,
    pub t_fac: f64,
    pub t_app: f64,
    /// Estimated direct summation time for all rows.
    pub t_d: f64,
    pub t_d_over_t_app: f64,
    pub tau_used: Option<f64>,
    pub n_dr: usize,
    pub n_dc: usize,
    pub depth: usize,
    pub h: usize,
    pub factor_count: usize,
    pub nnz_per_factor: Vec<usize>,
    pub nnz_total: usize,
    /// Bytes of block payload plus block tables and permutations.
    pub memory_bytes: usize,
    /// Products with `K` or `Kᵀ` requested from the hidden operator.
    pub matvecs: u64,
}

/// Entry evaluator for `exp(2πi UVᵀ)` with contiguous factor rows.
pub struct KernelEntries {
    ut: DMatrix<f64>,
    vt: DMatrix<f64>,
}

impl KernelEntries {
    pub fn new(phase: &LowRankPhase) -> Self {
        Self { ut: phase.u.transpose(), vt: phase.v.transpose() }
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        let p = self.ut.column(i).dot(&self.vt.column(j));
        Complex64::from_polar(1.0, std::f64::consts::TAU * p)
    }
}

/// Artifacts of a run besides the report.
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub phase: LowRankPhase,
    pub factorization: ButterflyFactorization,
}

/// Memory of a factorization in bytes.
pub fn memory_bytes(f: &ButterflyFactorization) -> usize {
    let blocks: usize = f.factors.iter().map(|x| x.blocks.len()).sum();
    16 * f.nnz() + 32 * blocks + 8 * (f.row_perm.len() + f.col_perm.len())
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Phase recovery and compression only.
pub fn recover_phase(cfg: &ExperimentConfig, problem: &Problem) -> Result<crate::phase_md::PhaseFactorization> {
    let accessor = problem.accessor(cfg.scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    low_rank_phase_factorization(&accessor, problem.x(), problem.omega(), &cfg.phase_config(), &mut rng)
}

/// Run the whole pipeline on a prepared problem.
pub fn run_on_problem(cfg: &ExperimentConfig, problem: &Problem) -> Result<ExperimentOutput> {
    let accessor = problem.accessor(cfg.scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pf = low_rank_phase_factorization(&accessor, problem.x(), problem.omega(), &cfg.phase_config(), &mut rng)?;
    let matvecs = accessor.matvec_count();

    let phase = pf.phase;
    let start = Instant::now();
    let entries = KernelEntries::new(&phase);
    let fac = factorize_points(&|i, j| entries.entry(i, j), problem.x(), problem.omega(), &cfg.idbf())?;
    let t_fac = start.elapsed();

    let (m, n) = (problem.kernel.nrows(), problem.kernel.ncols());
    let f = random_vector(&mut rng, n);
    let start = Instant::now();
    let g = fac.apply(&f)?;
    let t_app = start.elapsed();

    let rows = rand_perm(&mut rng, m, METRIC_SAMPLES);
    let start = Instant::now();
    let kernel = &problem.kernel;
    let eps_b = metric_eps_b(&g, &rows, |i| kernel.direct_row_sum(i, &f));
    let t_d = secs(start.elapsed()) * m as f64 / rows.len() as f64;

    let s_rows = rand_perm(&mut rng, m, METRIC_SAMPLES);
    let s_cols = rand_perm(&mut rng, n, METRIC_SAMPLES);
    let eps_k = metric_eps_k(&phase, |i, j| kernel.phase(i, j), &s_rows, &s_cols);

    let nnz_per_factor: Vec<usize> = fac.factors.iter().map(|x| x.nnz()).collect();
    let t_app_s = secs(t_app);
    let report = MetricsReport {
        version: REPORT_VERSION,
        config: cfg.clone(),
        n_rows: m,
        n_cols: n,
        eps_b,
        eps_k,
        t_path: secs(pf.t_path),
        t_rec: secs(pf.t_rec),
        t_fac: secs(t_fac),
        t_app: t_app_s,
        t_d,
        t_d_over_t_app: if t_app_s > 0.0 { t_d / t_app_s } else { f64::INFINITY },
        tau_used: pf.tau.is_finite().then_some(pf.tau),
        n_dr: pf.row_discontinuities,
        n_dc: pf.col_discontinuities,
        depth: fac.depth,
        h: fac.h,
        factor_count: fac.factors.len(),
        nnz_total: nnz_per_factor.iter().sum(),
        nnz_per_factor,
        memory_bytes: memory_bytes(&fac),
        matvecs,
    };
    Ok(ExperimentOutput { report, phase, factorization: fac })
}

/// Build the problem and run the pipeline.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let problem = build_problem(cfg)?;
    run_on_problem(cfg, &problem)
}

/// Least-squares slope of `log y` against `log x`; `None` when fewer than two
/// usable points exist.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Fitted log-log slopes against `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSlopes {
    pub t_path: Option<f64>,
    pub t_rec: Option<f64>,
    pub t_fac: Option<f64>,
    pub t_app: Option<f64>,
    pub memory: Option<f64>,
    pub nnz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: u32,
    pub reports: Vec<MetricsReport>,
    pub slopes: SweepSlopes,
}

/// Slopes of the stage times and the memory across `reports`.
pub fn fit_slopes(reports: &[MetricsReport]) -> SweepSlopes {
    let n: Vec<f64> = reports.iter().map(|r| r.n_rows as f64).collect();
    let col = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    SweepSlopes {
        t_path: loglog_slope(&n, &col(|r| r.t_path)),
        t_rec: loglog_slope(&n, &col(|r| r.t_rec)),
        t_fac: loglog_slope(&n, &col(|r| r.t_fac)),
        t_app: loglog_slope(&n, &col(|r| r.t_app)),
        memory: loglog_slope(&n, &col(|r| r.memory_bytes as f64)),
        nnz: loglog_slope(&n, &col(|r| r.nnz_total as f64)),
    }
}

/// Run every configuration in order and fit the slopes.
pub fn scaling_sweep(cfgs: &[ExperimentConfig]) -> Result<SweepReport> {
    let reports = cfgs.iter().map(|c| run_experiment(c).map(|o| o.report)).collect::<Result<Vec<_>>>()?;
    let slopes = fit_slopes(&reports);
    Ok(SweepReport { version: REPORT_VERSION, reports, slopes })
}
