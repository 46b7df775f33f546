//! Dense linear algebra: column-pivoted QR, truncated SVD, pseudo-inverse,
//! the sampled randomized SVD, and interpolative decompositions.
//!
//! Matrices are `nalgebra::DMatrix` values and therefore column-major. All
//! routines are generic over real (`f64`) and complex (`Complex64`) scalars.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Complex dense matrix, column-major.
pub type DenseMatrix = DMatrix<Complex64>;

/// Scalar types accepted by the dense routines.
pub trait Scalar: ComplexField<RealField = f64> + Copy {}
impl<T: ComplexField<RealField = f64> + Copy> Scalar for T {}

/// Relative singular value cutoff used by [`pinv`] inside [`rsvd`].
pub const PINV_CUTOFF: f64 = 1e-12;

/// `A(:, perm) = Q R`, with `Q` having orthonormal columns and `R` upper
/// trapezoidal with a real, non-negative, non-increasing diagonal.
#[derive(Clone, Debug)]
pub struct PivotedQr<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub perm: Vec<usize>,
}

impl<T: Scalar> PivotedQr<T> {
    /// Real diagonal of `R`.
    pub fn diag(&self) -> Vec<f64> {
        (0..self.r.nrows().min(self.r.ncols()))
            .map(|i| self.r[(i, i)].real())
            .collect()
    }
}

fn unit_phase<T: Scalar>(x: T) -> T {
    let m = x.modulus();
    if m == 0.0 {
        T::one()
    } else {
        x.unscale(m)
    }
}

fn check_finite<T: Scalar>(a: &DMatrix<T>) -> Result<()> {
    if a.iter().all(|x| x.modulus().is_finite()) {
        Ok(())
    } else {
        Err(Error::Input("matrix has non-finite entries".into()))
    }
}

/// Householder QR with column pivoting.
///
/// At every step the remaining column of largest norm is moved to the front;
/// ties go to the lowest column index. With `max_rank` the factorization stops
/// after that many steps and `Q`, `R` are truncated accordingly.
pub fn pivoted_qr<T: Scalar>(a: &DMatrix<T>, max_rank: Option<usize>) -> Result<PivotedQr<T>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::Dimension(format!("pivoted_qr on empty {m}x{n} matrix")));
    }
    check_finite(a)?;
    let steps = max_rank.map_or(m.min(n), |k| k.min(m).min(n));
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(steps);
    let mut scales: Vec<T> = Vec::with_capacity(steps);

    for j in 0..steps {
        let mut best = j;
        let mut best_norm = -1.0;
        for c in j..n {
            let mut s = 0.0;
            for i in j..m {
                s += w[(i, c)].modulus_squared();
            }
            if s > best_norm {
                best_norm = s;
                best = c;
            }
        }
        if best != j {
            w.swap_columns(j, best);
            perm.swap(j, best);
        }

        let alpha = best_norm.sqrt();
        let mut v: Vec<T> = (j..m).map(|i| w[(i, j)]).collect();
        if alpha == 0.0 {
            reflectors.push(Vec::new());
            scales.push(T::one());
            continue;
        }
        let phase = unit_phase(v[0]);
        v[0] += phase.scale(alpha);
        let vnorm2: f64 = v.iter().map(|x| x.modulus_squared()).sum();
        // H = I - 2 v v^H / (v^H v)
        for c in j..n {
            let mut dot = T::zero();
            for (t, vi) in v.iter().enumerate() {
                dot += vi.conjugate() * w[(j + t, c)];
            }
            let f = dot.scale(2.0 / vnorm2);
            for (t, vi) in v.iter().enumerate() {
                w[(j + t, c)] -= *vi * f;
            }
        }
        // Rotate row j so that the diagonal is real and non-negative.
        let s = -phase.conjugate();
        for c in j..n {
            w[(j, c)] *= s;
        }
        w[(j, j)] = T::from_real(alpha);
        for i in (j + 1)..m {
            w[(i, j)] = T::zero();
        }
        reflectors.push(v);
        scales.push(s);
    }

    let mut q = DMatrix::<T>::zeros(m, steps);
    for j in 0..steps {
        q[(j, j)] = T::one();
    }
    for j in (0..steps).rev() {
        let v = &reflectors[j];
        if v.is_empty() {
            continue;
        }
        let vnorm2: f64 = v.iter().map(|x| x.modulus_squared()).sum();
        for c in 0..steps {
            let mut dot = T::zero();
            for (t, vi) in v.iter().enumerate() {
                dot += vi.conjugate() * q[(j + t, c)];
            }
            let f = dot.scale(2.0 / vnorm2);
            for (t, vi) in v.iter().enumerate() {
                q[(j + t, c)] -= *vi * f;
            }
        }
    }
    for (j, s) in scales.iter().enumerate() {
        let cs = s.conjugate();
        for i in 0..m {
            q[(i, j)] *= cs;
        }
    }
    let r = w.rows(0, steps).into_owned();
    Ok(PivotedQr { q, r, perm })
}

/// Rank-`r` SVD `A ≈ U diag(sigma) Vᵀ` (plain transpose; `V` holds the
/// conjugated right singular vectors in the complex case).
#[derive(Clone, Debug)]
pub struct LowRankSvd<T: Scalar> {
    pub u: DMatrix<T>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> LowRankSvd<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Entry `(U Σ Vᵀ)(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> T {
        let mut acc = T::zero();
        for (k, s) in self.sigma.iter().enumerate() {
            acc += self.u[(i, k)] * self.v[(j, k)].scale(*s);
        }
        acc
    }

    /// Dense reconstruction `U Σ Vᵀ`.
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).iter_mut().for_each(|x| *x = x.scale(*s));
        }
        us * self.v.transpose()
    }
}

/// Full thin SVD sorted by descending singular value.
fn sorted_svd<T: Scalar>(a: &DMatrix<T>) -> (DMatrix<T>, Vec<f64>, DMatrix<T>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]).then(x.cmp(&y)));
    let u = u.select_columns(order.iter());
    let v = vt.transpose().select_columns(order.iter());
    let s = order.iter().map(|&i| s[i]).collect();
    (u, s, v)
}

/// Best rank-`r` approximation from a dense SVD.
pub fn truncated_svd<T: Scalar>(m: &DMatrix<T>, r: usize) -> Result<LowRankSvd<T>> {
    let mn = m.nrows().min(m.ncols());
    if r > mn {
        return Err(Error::Dimension(format!("rank {r} exceeds min dimension {mn}")));
    }
    check_finite(m)?;
    if r == 0 {
        return Ok(LowRankSvd {
            u: DMatrix::zeros(m.nrows(), 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(m.ncols(), 0),
        });
    }
    let (u, s, v) = sorted_svd(m);
    Ok(LowRankSvd {
        u: u.columns(0, r).into_owned(),
        sigma: s[..r].to_vec(),
        v: v.columns(0, r).into_owned(),
    })
}

/// Moore-Penrose pseudo-inverse dropping singular values below
/// `rel_cutoff * sigma_max`. Returns the inverse and the number of kept values.
pub fn pinv<T: Scalar>(a: &DMatrix<T>, rel_cutoff: f64) -> (DMatrix<T>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(n, m), 0);
    }
    let (u, s, v) = sorted_svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let kept = s.iter().take_while(|&&x| x > rel_cutoff * smax && x > 0.0).count();
    // A = U S conj(V)ᵀ  =>  A⁺ = conj(V) S⁻¹ Uᴴ
    let mut out = DMatrix::<T>::zeros(n, m);
    for k in 0..kept {
        let inv = 1.0 / s[k];
        for j in 0..m {
            let uc = u[(j, k)].conjugate().scale(inv);
            for i in 0..n {
                out[(i, j)] += v[(i, k)].conjugate() * uc;
            }
        }
    }
    (out, kept)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm<T: Scalar>(a: &DMatrix<T>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &x| acc.max(x))
}

/// `count` distinct indices drawn uniformly from `0..n` (all of them if
/// `count >= n`), in sampling order.
pub fn rand_perm<R: Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<usize> {
    sample(rng, n, count.min(n)).into_vec()
}

/// Sampled randomized SVD of an `m x n` matrix known through row and column
/// evaluators.
///
/// Only the rows in `rows`, the columns in `cols`, `r` pivot rows/columns and
/// `r` extra random rows are ever evaluated. `rows` and `cols` must each hold
/// at least `r * q_oversample` indices.
#[allow(clippy::too_many_arguments)]
pub fn rsvd<T, FR, FC, G>(
    m: usize,
    n: usize,
    mut row_eval: FR,
    mut col_eval: FC,
    rows: &[usize],
    cols: &[usize],
    r: usize,
    q_oversample: usize,
    rng: &mut G,
) -> Result<LowRankSvd<T>>
where
    T: Scalar,
    FR: FnMut(usize) -> Vec<T>,
    FC: FnMut(usize) -> Vec<T>,
    G: Rng + ?Sized,
{
    if m == 0 || n == 0 {
        return Err(Error::Dimension("rsvd on empty matrix".into()));
    }
    let r = r.min(m).min(n);
    let need = (r * q_oversample.max(1)).min(m).min(n);
    if rows.len() < need || cols.len() < need {
        return Err(Error::Dimension(format!(
            "rsvd needs at least {need} sampled rows and columns, got {} and {}",
            rows.len(),
            cols.len()
        )));
    }
    if r == 0 {
        return truncated_svd(&DMatrix::<T>::zeros(m, n.min(1)), 0).map(|mut s| {
            s.v = DMatrix::zeros(n, 0);
            s
        });
    }

    let eval_rows = |idx: &[usize], f: &mut FR| -> Result<DMatrix<T>> {
        let mut out = DMatrix::<T>::zeros(idx.len(), n);
        for (a, &i) in idx.iter().enumerate() {
            let row = f(i);
            if row.len() != n {
                return Err(Error::Dimension(format!("row {i} has length {}", row.len())));
            }
            for (j, x) in row.into_iter().enumerate() {
                out[(a, j)] = x;
            }
        }
        Ok(out)
    };
    let eval_cols = |idx: &[usize], f: &mut FC| -> Result<DMatrix<T>> {
        let mut out = DMatrix::<T>::zeros(m, idx.len());
        for (b, &j) in idx.iter().enumerate() {
            let col = f(j);
            if col.len() != m {
                return Err(Error::Dimension(format!("column {j} has length {}", col.len())));
            }
            for (i, x) in col.into_iter().enumerate() {
                out[(i, b)] = x;
            }
        }
        Ok(out)
    };

    let a_rows = eval_rows(rows, &mut row_eval)?;
    let pi_col: Vec<usize> = pivoted_qr(&a_rows, Some(r))?.perm[..r].to_vec();
    let a_cols = eval_cols(cols, &mut col_eval)?;
    let pi_row: Vec<usize> = pivoted_qr(&a_cols.transpose(), Some(r))?.perm[..r].to_vec();

    let a_picol = eval_cols(&pi_col, &mut col_eval)?;
    let all_zero = a_rows.iter().chain(a_cols.iter()).all(|x| x.is_zero());
    let q_col = pivoted_qr(&a_picol, Some(r))?.q;
    let a_pirow = eval_rows(&pi_row, &mut row_eval)?;
    let q_row = pivoted_qr(&a_pirow.transpose(), Some(r))?.q;

    if all_zero {
        // Every sampled entry vanishes: report the zero matrix with
        // orthonormal (arbitrary) singular vectors.
        return Ok(LowRankSvd { u: q_col, sigma: vec![0.0; r], v: q_row });
    }

    let s_row = rand_perm(rng, m, r);
    let s_col = rand_perm(rng, n, r);
    let i_set: Vec<usize> = pi_row.iter().chain(s_row.iter()).copied().collect();
    let j_set: Vec<usize> = pi_col.iter().chain(s_col.iter()).copied().collect();

    let a_srow = eval_rows(&s_row, &mut row_eval)?;
    let mut a_ij = DMatrix::<T>::zeros(i_set.len(), j_set.len());
    for (b, &j) in j_set.iter().enumerate() {
        for a in 0..r {
            a_ij[(a, b)] = a_pirow[(a, j)];
            a_ij[(r + a, b)] = a_srow[(a, j)];
        }
    }

    let qc_i = q_col.select_rows(i_set.iter());
    let qr_j_t = q_row.select_rows(j_set.iter()).transpose();
    let (p1, k1) = pinv(&qc_i, PINV_CUTOFF);
    let (p2, k2) = pinv(&qr_j_t, PINV_CUTOFF);
    let kept = k1.min(k2);
    if kept < q_col.ncols().min(q_row.ncols()) {
        return Err(Error::IllConditioned { kept, requested: r });
    }
    let mid = p1 * a_ij * p2;
    let small = truncated_svd(&mid, r)?;
    Ok(LowRankSvd {
        u: &q_col * small.u,
        sigma: small.sigma,
        v: &q_row * small.v,
    })
}

/// Which side an interpolative decomposition interpolates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Row,
    Column,
}

/// Interpolative decomposition.
///
/// Column side: `K ≈ K(:, skeleton) · interp` with `interp` of size `k x n`.
/// Row side: `K ≈ interp · K(skeleton, :)` with `interp` of size `m x k`.
#[derive(Clone, Debug)]
pub struct InterpDecomp<T: Scalar> {
    pub skeleton: Vec<usize>,
    pub interp: DMatrix<T>,
    pub side: Side,
}

impl<T: Scalar> InterpDecomp<T> {
    pub fn rank(&self) -> usize {
        self.skeleton.len()
    }

    /// Largest interpolation coefficient magnitude.
    pub fn max_coefficient(&self) -> f64 {
        self.interp.iter().fold(0.0, |a, x| a.max(x.modulus()))
    }
}

/// `min{k : R(k,k) <= eps * R(1,1)}` (1-based), or `diag.len()` when the
/// diagonal never drops that far.
pub fn adaptive_rank(diag: &[f64], eps: f64) -> usize {
    let Some(&r11) = diag.first() else { return 0 };
    diag.iter()
        .position(|&d| d <= eps * r11)
        .map_or(diag.len(), |p| p + 1)
}

/// Column ID of an explicitly sampled block `sample = K(s, :)`.
///
/// The rank is `k` (or the adaptive rank when `eps` is given, never above `k`),
/// reduced further if the pivoted diagonal reaches exact numerical zero.
pub fn column_id_of<T: Scalar>(sample: &DMatrix<T>, k: usize, eps: Option<f64>) -> Result<InterpDecomp<T>> {
    let (s, n) = sample.shape();
    if n == 0 {
        return Err(Error::Dimension("column ID of a matrix without columns".into()));
    }
    if s == 0 || k == 0 {
        return Ok(InterpDecomp { skeleton: Vec::new(), interp: DMatrix::zeros(0, n), side: Side::Column });
    }
    let qr = pivoted_qr(sample, Some(k))?;
    let diag = qr.diag();
    let mut rank = match eps {
        Some(e) => adaptive_rank(&diag, e),
        None => diag.len(),
    };
    let r11 = diag.first().copied().unwrap_or(0.0);
    let floor = 64.0 * f64::EPSILON * r11;
    while rank > 0 && (diag[rank - 1] <= floor || diag[rank - 1] == 0.0) {
        rank -= 1;
    }
    let mut interp = DMatrix::<T>::zeros(rank, n);
    if rank > 0 {
        let r11m = qr.r.view((0, 0), (rank, rank)).into_owned();
        let r12 = qr.r.view((0, rank), (rank, n - rank)).into_owned();
        let t = r11m
            .solve_upper_triangular(&r12)
            .ok_or_else(|| Error::Input("singular leading block in ID".into()))?;
        for j in 0..rank {
            interp[(j, qr.perm[j])] = T::one();
        }
        for j in rank..n {
            let c = qr.perm[j];
            for i in 0..rank {
                interp[(i, c)] = t[(i, j - rank)];
            }
        }
    }
    Ok(InterpDecomp { skeleton: qr.perm[..rank].to_vec(), interp, side: Side::Column })
}

/// Row ID of an explicitly sampled block `sample = K(:, s)`; the transpose
/// dual of [`column_id_of`].
pub fn row_id_of<T: Scalar>(sample: &DMatrix<T>, k: usize, eps: Option<f64>) -> Result<InterpDecomp<T>> {
    let c = column_id_of(&sample.transpose(), k, eps)?;
    Ok(InterpDecomp { skeleton: c.skeleton, interp: c.interp.transpose(), side: Side::Row })
}

/// Indices of grid points nearest to `count` first-kind Chebyshev nodes of
/// the grid's `[min, max]` interval. Ties go to the lower index; a node whose
/// nearest point is taken snaps to the nearest free point. Sorted output.
pub fn mock_chebyshev_rows(grid: &[f64], count: usize) -> Result<Vec<usize>> {
    let m = grid.len();
    if count > m {
        return Err(Error::Dimension(format!("requested {count} points from a grid of {m}")));
    }
    if count == m {
        return Ok((0..m).collect());
    }
    let (lo, hi) = (grid[0], grid[m - 1]);
    let mut taken = vec![false; m];
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let theta = (2 * i - 1) as f64 * std::f64::consts::PI / (2 * count) as f64;
        let x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * theta.cos();
        let mut best: Option<usize> = None;
        for (j, &g) in grid.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => (g - x).abs() < (grid[b] - x).abs(),
            };
            if better {
                best = Some(j);
            }
        }
        let b = best.expect("count < m leaves a free point");
        taken[b] = true;
        out.push(b);
    }
    out.sort_unstable();
    Ok(out)
}

fn pick_rows<G: Rng + ?Sized>(m: usize, count: usize, grid: Option<&[f64]>, rng: &mut G) -> Result<Vec<usize>> {
    let count = count.min(m);
    match grid {
        Some(g) => {
            if g.len() != m {
                return Err(Error::Dimension(format!("grid of length {} for {m} rows", g.len())));
            }
            mock_chebyshev_rows(g, count)
        }
        None => {
            let mut s = rand_perm(rng, m, count);
            s.sort_unstable();
            Ok(s)
        }
    }
}

/// Column ID `K ≈ K(:, q) V` of an `m x n` matrix from `t*k` sampled rows.
///
/// `row_block_eval(s)` returns `K(s, :)`. Rows are picked by mock-Chebyshev
/// selection on `grid` (sorted row coordinates) when given, otherwise at random.
#[allow(clippy::too_many_arguments)]
pub fn cid<T, F, G>(
    mut row_block_eval: F,
    m: usize,
    n: usize,
    k: usize,
    t: usize,
    grid: Option<&[f64]>,
    eps_adaptive: Option<f64>,
    rng: &mut G,
) -> Result<InterpDecomp<T>>
where
    T: Scalar,
    F: FnMut(&[usize]) -> DMatrix<T>,
    G: Rng + ?Sized,
{
    let s = pick_rows(m, t.max(1) * k, grid, rng)?;
    let block = row_block_eval(&s);
    if block.shape() != (s.len(), n) {
        return Err(Error::Dimension("row block evaluator returned wrong shape".into()));
    }
    column_id_of(&block, k, eps_adaptive)
}

/// Row ID `K ≈ U K(q, :)`; the transpose dual of [`cid`].
/// `col_block_eval(s)` returns `K(:, s)`.
#[allow(clippy::too_many_arguments)]
pub fn rid<T, F, G>(
    mut col_block_eval: F,
    m: usize,
    n: usize,
    k: usize,
    t: usize,
    grid: Option<&[f64]>,
    eps_adaptive: Option<f64>,
    rng: &mut G,
) -> Result<InterpDecomp<T>>
where
    T: Scalar,
    F: FnMut(&[usize]) -> DMatrix<T>,
    G: Rng + ?Sized,
{
    let s = pick_rows(n, t.max(1) * k, grid, rng)?;
    let block = col_block_eval(&s);
    if block.shape() != (m, s.len()) {
        return Err(Error::Dimension("column block evaluator returned wrong shape".into()));
    }
    row_id_of(&block, k, eps_adaptive)
}
