//! Phase recovery on scattered points in 2D/3D along Delaunay-MST recovery
//! paths, and the low-rank factorization of the recovered phase.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{recovery_path, split_path, PointSet, RecoveryPath};
use crate::linalg::{rand_perm, rsvd};
use crate::wrapped::{wrapped_phase, PhaseAccessor};

/// Default first-difference threshold along recovery paths.
pub const TAU_MD: f64 = 0.25;
/// Increment applied by [`escalate_tau`].
pub const TAU_STEP: f64 = 1.0 / 40.0;
/// Upper limit reached by [`escalate_tau`].
pub const TAU_MAX: f64 = 0.5;
/// Default cap on detected discontinuities before escalating the threshold.
pub const DEFAULT_DISCONTINUITY_CAP: usize = 32;

const NO_DETECT: f64 = 1.0;

/// Unwrapped vector and the detected discontinuity nodes (root first).
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredMD {
    pub v: Vec<f64>,
    pub d: Vec<usize>,
}

/// Unwrap `u` along `path` starting from `v[root] = anchor`. Only nodes on the
/// path are written. Returns the nodes whose first difference reached `tau`.
fn unwrap_along(u: &[f64], v: &mut [f64], anchor: f64, path: &RecoveryPath, tau: f64) -> Vec<usize> {
    v[path.root] = anchor;
    let mut d = Vec::new();
    for &[bg, ed] in &path.rows {
        v[ed] = u[ed] - (u[ed] - v[bg]).round();
        if (v[ed] - v[bg]).abs() >= tau {
            d.push(ed);
        }
    }
    d
}

/// Recover `v` with `mod(v, 1) = u` by rounding first differences along `path`.
pub fn recover_vector_md(u: &[f64], tau: f64, path: &RecoveryPath) -> Result<RecoveredMD> {
    if let Some(p) = u.iter().position(|x| !(0.0..1.0).contains(x)) {
        return Err(Error::Input(format!("u[{p}] = {} is outside [0, 1)", u[p])));
    }
    if path.node_count() != u.len() {
        return Err(Error::Dimension(format!("path covers {} nodes, vector has {}", path.node_count(), u.len())));
    }
    path.validate(u.len())?;
    let mut v = u.to_vec();
    let mut d = vec![path.root];
    d.extend(unwrap_along(u, &mut v, u[path.root], path, tau));
    Ok(RecoveredMD { v, d })
}

/// Split of rows and columns into smooth pieces.
#[derive(Clone, Debug)]
pub struct BlockPartitionMD {
    pub row_breaks: Vec<usize>,
    pub col_breaks: Vec<usize>,
    pub row_paths: Vec<RecoveryPath>,
    pub col_paths: Vec<RecoveryPath>,
    pub rows_per_block: Vec<Vec<usize>>,
    pub cols_per_block: Vec<Vec<usize>>,
    row_owner: Vec<usize>,
    col_owner: Vec<usize>,
}

impl BlockPartitionMD {
    fn new(
        p1: &RecoveryPath,
        p2: &RecoveryPath,
        row_breaks: Vec<usize>,
        col_breaks: Vec<usize>,
        rows: &[usize],
        cols: &[usize],
        m: usize,
        n: usize,
    ) -> Result<Self> {
        let row_paths = split_path(p1, &row_breaks)?;
        let col_paths = split_path(p2, &col_breaks)?;
        let owners = |paths: &[RecoveryPath], len: usize| {
            let mut o = vec![0usize; len];
            for (s, p) in paths.iter().enumerate() {
                for x in p.nodes() {
                    o[x] = s;
                }
            }
            o
        };
        let row_owner = owners(&row_paths, m);
        let col_owner = owners(&col_paths, n);
        let mut rows_per_block = vec![Vec::new(); row_paths.len()];
        for &i in rows {
            rows_per_block[row_owner[i]].push(i);
        }
        let mut cols_per_block = vec![Vec::new(); col_paths.len()];
        for &j in cols {
            cols_per_block[col_owner[j]].push(j);
        }
        Ok(Self { row_breaks, col_breaks, row_paths, col_paths, rows_per_block, cols_per_block, row_owner, col_owner })
    }

    pub fn row_block_of(&self, i: usize) -> usize {
        self.row_owner[i]
    }

    pub fn col_block_of(&self, j: usize) -> usize {
        self.col_owner[j]
    }
}

/// Recovered phase matrix, able to produce any row or column on demand from
/// the stored sub-root rows and columns.
#[derive(Clone, Debug)]
pub struct RecoveredPhaseMD {
    pub partition: BlockPartitionMD,
    /// Recovered sampled rows (input rows plus row break nodes).
    pub rows: Vec<(usize, Vec<f64>)>,
    /// Recovered sampled columns (input columns plus column break nodes).
    pub cols: Vec<(usize, Vec<f64>)>,
    subroot_rows: Vec<Vec<f64>>,
    subroot_cols: Vec<Vec<f64>>,
    m: usize,
    n: usize,
}

impl RecoveredPhaseMD {
    /// Detected row discontinuities, excluding the path root.
    pub fn row_discontinuities(&self) -> usize {
        self.partition.row_breaks.len() - 1
    }

    /// Detected column discontinuities, excluding the path root.
    pub fn col_discontinuities(&self) -> usize {
        self.partition.col_breaks.len() - 1
    }

    /// Recovered row `i`.
    pub fn recover_row<A: PhaseAccessor + ?Sized>(&self, phase: &A, i: usize) -> Vec<f64> {
        let u = phase.row(i);
        let mut v = u.clone();
        for (t, path) in self.partition.col_paths.iter().enumerate() {
            unwrap_along(&u, &mut v, self.subroot_cols[t][i], path, NO_DETECT);
        }
        v
    }

    /// Recovered column `j`.
    pub fn recover_col<A: PhaseAccessor + ?Sized>(&self, phase: &A, j: usize) -> Vec<f64> {
        let u = phase.col(j);
        let mut v = u.clone();
        for (s, path) in self.partition.row_paths.iter().enumerate() {
            unwrap_along(&u, &mut v, self.subroot_rows[s][j], path, NO_DETECT);
        }
        v
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }
}

fn dedup_append(base: &[usize], extra: &[usize]) -> Vec<usize> {
    let mut out = base.to_vec();
    for &x in extra {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Discontinuities detected on column `cols[0]` along `p1` and on row
/// `rows[0]` along `p2`; both lists start with the path root.
pub fn detect_breaks<A: PhaseAccessor + ?Sized>(
    phase: &A,
    rows: &[usize],
    cols: &[usize],
    p1: &RecoveryPath,
    p2: &RecoveryPath,
    tau: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let d_r = recover_vector_md(&phase.col(cols[0]), tau, p1)?.d;
    let d_c = recover_vector_md(&phase.row(rows[0]), tau, p2)?.d;
    Ok((d_r, d_c))
}

fn check_samples<A: PhaseAccessor + ?Sized>(phase: &A, rows: &[usize], cols: &[usize]) -> Result<()> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Input("row and column samples must be nonempty".into()));
    }
    if rows.iter().any(|&i| i >= phase.nrows()) || cols.iter().any(|&j| j >= phase.ncols()) {
        return Err(Error::Input("sample index out of range".into()));
    }
    Ok(())
}

/// Blockwise recovery with precomputed recovery paths for the row points
/// (`p1`) and column points (`p2`).
pub fn recover_matrix_md_with_paths<A: PhaseAccessor + ?Sized>(
    phase: &A,
    rows: &[usize],
    cols: &[usize],
    p1: &RecoveryPath,
    p2: &RecoveryPath,
    tau: f64,
) -> Result<RecoveredPhaseMD> {
    check_samples(phase, rows, cols)?;
    let (m, n) = (phase.nrows(), phase.ncols());
    if p1.node_count() != m || p2.node_count() != n {
        return Err(Error::Dimension("recovery paths do not match the matrix shape".into()));
    }
    let (d_r, d_c) = detect_breaks(phase, rows, cols, p1, p2, tau)?;
    let rows_all = dedup_append(rows, &d_r);
    let cols_all = dedup_append(cols, &d_c);
    let partition = BlockPartitionMD::new(p1, p2, d_r, d_c, &rows_all, &cols_all, m, n)?;

    // Sub-root row of block s and sub-root column of block t share the raw
    // wrapped value at their crossing as anchor.
    let subroot_rows: Vec<Vec<f64>> = partition
        .row_paths
        .par_iter()
        .map(|rp| {
            let u = phase.row(rp.root);
            let mut v = u.clone();
            for cp in &partition.col_paths {
                unwrap_along(&u, &mut v, u[cp.root], cp, NO_DETECT);
            }
            v
        })
        .collect();
    let subroot_cols: Vec<Vec<f64>> = partition
        .col_paths
        .par_iter()
        .enumerate()
        .map(|(_, cp)| {
            let u = phase.col(cp.root);
            let mut v = u.clone();
            for (s, rp) in partition.row_paths.iter().enumerate() {
                unwrap_along(&u, &mut v, subroot_rows[s][cp.root], rp, NO_DETECT);
            }
            v
        })
        .collect();

    let mut out = RecoveredPhaseMD { partition, rows: Vec::new(), cols: Vec::new(), subroot_rows, subroot_cols, m, n };
    let rec_rows: Vec<_> = rows_all.par_iter().map(|&i| (i, out.recover_row(phase, i))).collect();
    let rec_cols: Vec<_> = cols_all.par_iter().map(|&j| (j, out.recover_col(phase, j))).collect();
    out.rows = rec_rows;
    out.cols = rec_cols;
    Ok(out)
}

/// Blockwise recovery of sampled rows and columns of a wrapped phase matrix
/// whose rows are indexed by `x1` and columns by `x2`.
pub fn recover_matrix_md<A: PhaseAccessor + ?Sized>(
    phase: &A,
    rows: &[usize],
    cols: &[usize],
    x1: &PointSet,
    x2: &PointSet,
    tau: f64,
) -> Result<RecoveredPhaseMD> {
    let p1 = recovery_path(x1)?;
    let p2 = recovery_path(x2)?;
    recover_matrix_md_with_paths(phase, rows, cols, &p1, &p2, tau)
}

/// Outcome of [`escalate_tau`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauChoice {
    pub tau: f64,
    pub row_discontinuities: usize,
    pub col_discontinuities: usize,
    pub escalations: usize,
}

/// Raise the threshold from 1/4 in steps of 1/40 (at most up to 1/2) while
/// more than `cap` discontinuities are detected.
pub fn escalate_tau<A: PhaseAccessor + ?Sized>(
    phase: &A,
    rows: &[usize],
    cols: &[usize],
    p1: &RecoveryPath,
    p2: &RecoveryPath,
    cap: usize,
) -> Result<TauChoice> {
    check_samples(phase, rows, cols)?;
    let steps = ((TAU_MAX - TAU_MD) / TAU_STEP).round() as usize;
    let mut k = 0;
    loop {
        let tau = TAU_MD + k as f64 * TAU_STEP;
        let (d_r, d_c) = detect_breaks(phase, rows, cols, p1, p2, tau)?;
        let (nr, nc) = (d_r.len() - 1, d_c.len() - 1);
        if nr + nc <= cap || k == steps {
            return Ok(TauChoice { tau, row_discontinuities: nr, col_discontinuities: nc, escalations: k });
        }
        k += 1;
    }
}

/// Row/column access to an oscillatory kernel matrix.
pub trait KernelAccess: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn kernel_row(&self, i: usize) -> Vec<Complex64>;
    fn kernel_col(&self, j: usize) -> Vec<Complex64>;
    /// Exact (unwrapped) phase rows and columns, when the source provides them.
    fn exact_phase(&self) -> Option<&dyn ExactPhase> {
        None
    }
}

/// Direct access to rows and columns of the phase itself.
pub trait ExactPhase: Sync {
    fn phase_row(&self, i: usize) -> Vec<f64>;
    fn phase_col(&self, j: usize) -> Vec<f64>;
}

/// Wrapped phase `(1/2π)·Im(log K)` of a kernel accessor.
pub struct WrappedKernel<'a, K: KernelAccess + ?Sized>(pub &'a K);

impl<K: KernelAccess + ?Sized> PhaseAccessor for WrappedKernel<'_, K> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        self.0.kernel_row(i).into_iter().map(wrapped_phase).collect()
    }
    fn col(&self, j: usize) -> Vec<f64> {
        self.0.kernel_col(j).into_iter().map(wrapped_phase).collect()
    }
}

/// `Ψ ≈ U Vᵀ` with `V` already scaled by the singular values.
#[derive(Clone, Debug)]
pub struct LowRankPhase {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRankPhase {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    /// `Ψ(i, j) = U(i,:)·V(j,:)`.
    pub fn phase(&self, i: usize, j: usize) -> f64 {
        (0..self.u.ncols()).map(|k| self.u[(i, k)] * self.v[(j, k)]).sum()
    }

    /// `exp(2πi Ψ(i, j))`.
    pub fn kernel_entry(&self, i: usize, j: usize) -> Complex64 {
        Complex64::from_polar(1.0, std::f64::consts::TAU * self.phase(i, j))
    }
}

/// How the discontinuity threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauRule {
    Fixed(f64),
    Escalate { cap: usize },
}

/// Settings of [`low_rank_phase_factorization`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseConfig {
    pub rank: usize,
    pub q_oversample: usize,
    pub tau: TauRule,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { rank: 20, q_oversample: 2, tau: TauRule::Fixed(TAU_MD) }
    }
}

/// Result of [`low_rank_phase_factorization`] with stage timings.
#[derive(Clone, Debug)]
pub struct PhaseFactorization {
    pub phase: LowRankPhase,
    pub tau: f64,
    pub row_discontinuities: usize,
    pub col_discontinuities: usize,
    /// Recovery path construction.
    pub t_path: Duration,
    /// Phase recovery and the randomized SVD.
    pub t_rec: Duration,
}

/// Sample `r·q` rows and columns, recover them (unless the source exposes the
/// exact phase), and compress the recovered phase with the sampled SVD.
pub fn low_rank_phase_factorization<K, G>(
    kernel: &K,
    x1: &PointSet,
    x2: &PointSet,
    cfg: &PhaseConfig,
    rng: &mut G,
) -> Result<PhaseFactorization>
where
    K: KernelAccess + ?Sized,
    G: Rng + ?Sized,
{
    let (m, n) = (kernel.nrows(), kernel.ncols());
    if x1.len() != m || x2.len() != n {
        return Err(Error::Config(format!("point sets of size {} and {} for a {m}x{n} kernel", x1.len(), x2.len())));
    }
    let r = cfg.rank;
    if r == 0 || r > m.min(n) {
        return Err(Error::Config(format!("phase rank {r} must lie in 1..={}", m.min(n))));
    }
    let q = cfg.q_oversample.max(1);
    let rows = rand_perm(rng, m, r * q);
    let cols = rand_perm(rng, n, r * q);

    if let Some(exact) = kernel.exact_phase() {
        let start = Instant::now();
        let svd = rsvd(m, n, |i| exact.phase_row(i), |j| exact.phase_col(j), &rows, &cols, r, q, rng)?;
        return Ok(PhaseFactorization {
            phase: scale_v(svd),
            tau: f64::NAN,
            row_discontinuities: 0,
            col_discontinuities: 0,
            t_path: Duration::ZERO,
            t_rec: start.elapsed(),
        });
    }

    let start = Instant::now();
    let (p1, p2) = rayon::join(|| recovery_path(x1), || recovery_path(x2));
    let (p1, p2) = (p1?, p2?);
    let t_path = start.elapsed();

    let start = Instant::now();
    let wrapped = WrappedKernel(kernel);
    let tau = match cfg.tau {
        TauRule::Fixed(t) => t,
        TauRule::Escalate { cap } => escalate_tau(&wrapped, &rows, &cols, &p1, &p2, cap)?.tau,
    };
    let rec = recover_matrix_md_with_paths(&wrapped, &rows, &cols, &p1, &p2, tau)?;
    let row_cache: HashMap<usize, &Vec<f64>> = rec.rows.iter().map(|(i, v)| (*i, v)).collect();
    let col_cache: HashMap<usize, &Vec<f64>> = rec.cols.iter().map(|(j, v)| (*j, v)).collect();
    let svd = rsvd(
        m,
        n,
        |i| row_cache.get(&i).map_or_else(|| rec.recover_row(&wrapped, i), |v| (*v).clone()),
        |j| col_cache.get(&j).map_or_else(|| rec.recover_col(&wrapped, j), |v| (*v).clone()),
        &rows,
        &cols,
        r,
        q,
        rng,
    )?;
    Ok(PhaseFactorization {
        phase: scale_v(svd),
        tau,
        row_discontinuities: rec.row_discontinuities(),
        col_discontinuities: rec.col_discontinuities(),
        t_path,
        t_rec: start.elapsed(),
    })
}

fn scale_v(svd: crate::linalg::LowRankSvd<f64>) -> LowRankPhase {
    let mut v = svd.v;
    for (k, s) in svd.sigma.iter().enumerate() {
        v.column_mut(k).scale_mut(*s);
    }
    LowRankPhase { u: svd.u, v }
}
