//! Multidimensional interpolative-decomposition butterfly factorization.
//!
//! Both point sets are organized in `2^d`-trees of equal depth `L` whose
//! nodes are contiguous ranges of a Z-ordered permutation of the points. The
//! factorization is `K ≈ U^L ⋯ U^h S^h V^h ⋯ V^L` with `h = ⌈L/2⌉`.
//!
//! Intermediate spaces hold one skeleton block per node pair. On the row side
//! the level-`ℓ` space is indexed by `(A, B)` with `A` at level `ℓ` of the row
//! tree and `B` at level `L-ℓ` of the column tree, ordered `B`-major; the
//! column side swaps the roles and is ordered `A`-major. With these orders all
//! factor blocks are contiguous.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::linalg::{column_id_of, mock_chebyshev_rows, rand_perm, row_id_of};

/// Largest tree depth considered.
const MAX_DEPTH: usize = 20;

/// Node of a [`ComplementaryTree`]; `start..end` indexes the permuted points.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub start: usize,
    pub end: usize,
    /// Child code `t`: bit `d-1-a` is set when the node lies in the upper half
    /// of its parent along axis `a`.
    pub code: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Bisection tree with Z-ordered nodes and empty nodes removed.
#[derive(Clone, Debug)]
pub struct ComplementaryTree {
    pub dim: usize,
    pub n0: usize,
    /// `levels[ℓ]` lists the nodes of level `ℓ` in Z-order.
    pub levels: Vec<Vec<TreeNode>>,
    /// `perm[p]` is the original index of the point at position `p`.
    pub perm: Vec<usize>,
    /// Points in permuted order.
    pub points: PointSet,
}

impl ComplementaryTree {
    /// Depth `L` (number of bisection levels below the root).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Ancestor of node `i` of level `level` located `up` levels higher.
    pub fn ancestor(&self, level: usize, mut i: usize, up: usize) -> usize {
        for l in (level - up + 1..=level).rev() {
            i = self.levels[l][i].parent.expect("non-root node has a parent");
        }
        i
    }

    /// Largest leaf size.
    pub fn max_leaf(&self) -> usize {
        self.levels.last().map_or(0, |l| l.iter().map(TreeNode::len).max().unwrap_or(0))
    }
}

fn depth_for(points: &PointSet, n0: usize) -> usize {
    let per_level = 1usize << points.dim();
    let mut l = 0;
    let mut cap = n0;
    while cap < points.len() && l < MAX_DEPTH {
        cap = cap.saturating_mul(per_level);
        l += 1;
    }
    l
}

/// Tree with the smallest depth `L` such that `N ≤ n0·2^{dL}`, i.e. leaves
/// hold at most `n0` points on average.
pub fn build_tree(points: &PointSet, n0: usize) -> ComplementaryTree {
    build_tree_with_depth(points, n0, depth_for(points, n0))
}

/// Common depth for a pair of trees, set by the larger point set.
pub fn common_depth(x: &PointSet, omega: &PointSet, n0: usize) -> usize {
    depth_for(x, n0).max(depth_for(omega, n0))
}

/// Tree of exactly `depth` bisection levels over the bounding box of `points`.
pub fn build_tree_with_depth(points: &PointSet, n0: usize, depth: usize) -> ComplementaryTree {
    let d = points.dim();
    let n = points.len();
    let (lo, hi) = points.bounding_box();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut levels = vec![vec![TreeNode { start: 0, end: n, code: 0, parent: None, children: Vec::new(), lo, hi }]];
    for l in 0..depth {
        let mut next = Vec::new();
        for (pi, node) in levels[l].iter_mut().enumerate() {
            let mid: Vec<f64> = node.lo.iter().zip(&node.hi).map(|(a, b)| 0.5 * (a + b)).collect();
            let code_of = |p: usize| -> usize {
                let x = points.point(p);
                (0..d).fold(0, |acc, a| (acc << 1) | usize::from(x[a] >= mid[a]))
            };
            let slice = &mut perm[node.start..node.end];
            slice.sort_by_key(|&p| code_of(p));
            let mut s = node.start;
            for t in 0..(1usize << d) {
                let mut e = s;
                while e < node.end && code_of(perm[e]) == t {
                    e += 1;
                }
                if e > s {
                    let (mut clo, mut chi) = (node.lo.clone(), node.hi.clone());
                    for a in 0..d {
                        if (t >> (d - 1 - a)) & 1 == 1 {
                            clo[a] = mid[a];
                        } else {
                            chi[a] = mid[a];
                        }
                    }
                    node.children.push(next.len());
                    next.push(TreeNode { start: s, end: e, code: t, parent: Some(pi), children: Vec::new(), lo: clo, hi: chi });
                }
                s = e;
            }
        }
        levels.push(next);
    }
    let permuted = points.subset(&perm);
    ComplementaryTree { dim: d, n0, levels, perm, points: permuted }
}

/// Settings of the butterfly construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdbfConfig {
    /// Maximum ID rank.
    pub k: usize,
    /// ID oversampling: `t·k` rows/columns are sampled per ID.
    pub t: usize,
    /// Leaf capacity.
    pub n0: usize,
    /// Relative tolerance of the adaptive rank; `None` uses the fixed rank `k`.
    pub eps: Option<f64>,
    pub seed: u64,
}

impl IdbfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t == 0 || self.n0 == 0 {
            return Err(Error::Config("k, t and n0 must be positive".into()));
        }
        if self.n0 < self.k {
            return Err(Error::Config(format!("leaf size {} is below the rank {}", self.n0, self.k)));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!("adaptive tolerance {e} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Dense block of a [`ButterflyFactor`].
#[derive(Clone, Debug, PartialEq)]
pub struct FactorBlock {
    pub row_start: usize,
    pub col_start: usize,
    pub data: DMatrix<Complex64>,
}

/// Block-sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ButterflyFactor {
    pub nrows: usize,
    pub ncols: usize,
    pub blocks: Vec<FactorBlock>,
}

impl ButterflyFactor {
    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    /// `y = F x`.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.product(x, false)
    }

    /// `y = Fᵀ x` (plain transpose).
    pub fn apply_transpose(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.product(x, true)
    }

    fn product(&self, x: &[Complex64], transpose: bool) -> Vec<Complex64> {
        let out_len = if transpose { self.ncols } else { self.nrows };
        let parts: Vec<(usize, Vec<Complex64>)> = self
            .blocks
            .par_iter()
            .map(|b| {
                let (r, c) = b.data.shape();
                if transpose {
                    let mut y = vec![Complex64::new(0.0, 0.0); c];
                    for (jj, yj) in y.iter_mut().enumerate() {
                        let col = b.data.column(jj);
                        *yj = (0..r).map(|ii| col[ii] * x[b.row_start + ii]).sum();
                    }
                    (b.col_start, y)
                } else {
                    let mut y = vec![Complex64::new(0.0, 0.0); r];
                    for jj in 0..c {
                        let xj = x[b.col_start + jj];
                        let col = b.data.column(jj);
                        for (ii, yi) in y.iter_mut().enumerate() {
                            *yi += col[ii] * xj;
                        }
                    }
                    (b.row_start, y)
                }
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); out_len];
        for (start, y) in parts {
            for (k, v) in y.into_iter().enumerate() {
                out[start + k] += v;
            }
        }
        out
    }

    /// Dense copy (small problems and tests).
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for b in &self.blocks {
            let (r, c) = b.data.shape();
            m.view_mut((b.row_start, b.col_start), (r, c)).copy_from(&b.data);
        }
        m
    }
}

/// `K ≈ U^L ⋯ U^h S^h V^h ⋯ V^L` together with the point permutations.
#[derive(Clone, Debug, PartialEq)]
pub struct ButterflyFactorization {
    pub nrows: usize,
    pub ncols: usize,
    pub depth: usize,
    pub h: usize,
    /// Original row index of each permuted position.
    pub row_perm: Vec<usize>,
    /// Original column index of each permuted position.
    pub col_perm: Vec<usize>,
    /// Factors from left to right.
    pub factors: Vec<ButterflyFactor>,
}

impl ButterflyFactorization {
    pub fn nnz(&self) -> usize {
        self.factors.iter().map(ButterflyFactor::nnz).sum()
    }

    /// `g = K f` in the original index order.
    pub fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        if f.len() != self.ncols {
            return Err(Error::Dimension(format!("vector of length {} for {} columns", f.len(), self.ncols)));
        }
        let mut y: Vec<Complex64> = self.col_perm.iter().map(|&j| f[j]).collect();
        for fac in self.factors.iter().rev() {
            y = fac.apply(&y);
        }
        let mut g = vec![Complex64::new(0.0, 0.0); self.nrows];
        for (p, &i) in self.row_perm.iter().enumerate() {
            g[i] = y[p];
        }
        Ok(g)
    }

    /// `f = Kᵀ g` in the original index order.
    pub fn apply_transpose(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        if g.len() != self.nrows {
            return Err(Error::Dimension(format!("vector of length {} for {} rows", g.len(), self.nrows)));
        }
        let mut y: Vec<Complex64> = self.row_perm.iter().map(|&i| g[i]).collect();
        for fac in &self.factors {
            y = fac.apply_transpose(&y);
        }
        let mut f = vec![Complex64::new(0.0, 0.0); self.ncols];
        for (p, &j) in self.col_perm.iter().enumerate() {
            f[j] = y[p];
        }
        Ok(f)
    }

    /// Dense product of all factors in the original ordering (tests only).
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = self.factors.last().expect("at least one factor").to_dense();
        for fac in self.factors.iter().rev().skip(1) {
            m = fac.to_dense() * m;
        }
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (p, &i) in self.row_perm.iter().enumerate() {
            for (q, &j) in self.col_perm.iter().enumerate() {
                out[(i, j)] = m[(p, q)];
            }
        }
        out
    }
}

/// Skeletons of one level of one side; indexed `[outer][inner]`.
struct SideLevel {
    skel: Vec<Vec<Vec<usize>>>,
    interp: Vec<Vec<DMatrix<Complex64>>>,
    offsets: Vec<Vec<usize>>,
    total: usize,
}

fn task_seed(seed: u64, side: u64, level: usize, outer: usize, inner: usize) -> u64 {
    let mut z = seed
        ^ side.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (level as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (outer as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
        ^ (inner as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Up to `count` positions of `range`, chosen by tensor mock-Chebyshev
/// selection when the points form a full tensor grid, else at random.
fn sample_positions<R: Rng>(points: &PointSet, range: std::ops::Range<usize>, count: usize, rng: &mut R) -> Vec<usize> {
    let len = range.len();
    if count >= len {
        return range.collect();
    }
    let d = points.dim();
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); d];
    for p in range.clone() {
        for (a, &x) in points.point(p).iter().enumerate() {
            axes[a].push(x);
        }
    }
    for ax in &mut axes {
        ax.sort_by(f64::total_cmp);
        ax.dedup();
    }
    let tensor = axes.iter().map(Vec::len).product::<usize>() == len;
    if tensor {
        let per_axis = (count as f64).powf(1.0 / d as f64).ceil() as usize;
        let chosen: Vec<Vec<f64>> = axes
            .iter()
            .map(|ax| {
                let c = per_axis.min(ax.len());
                mock_chebyshev_rows(ax, c).expect("count within axis size").into_iter().map(|i| ax[i]).collect()
            })
            .collect();
        let picked: Vec<usize> = range
            .clone()
            .filter(|&p| points.point(p).iter().enumerate().all(|(a, x)| chosen[a].binary_search_by(|v| v.total_cmp(x)).is_ok()))
            .collect();
        if picked.len() >= count.min(len) {
            return picked;
        }
    }
    let mut s: Vec<usize> = rand_perm(rng, len, count).into_iter().map(|i| range.start + i).collect();
    s.sort_unstable();
    s
}

fn offsets_of(skel: &[Vec<Vec<usize>>]) -> (Vec<Vec<usize>>, usize) {
    let mut total = 0;
    let offsets = skel
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| {
                    let o = total;
                    total += s.len();
                    o
                })
                .collect()
        })
        .collect();
    (offsets, total)
}

/// Entry evaluator in permuted coordinates.
struct Permuted<'a, F: Fn(usize, usize) -> Complex64 + Sync> {
    entry: &'a F,
    rows: &'a [usize],
    cols: &'a [usize],
}

impl<F: Fn(usize, usize) -> Complex64 + Sync> Permuted<'_, F> {
    fn block(&self, r: &[usize], c: &[usize]) -> DMatrix<Complex64> {
        DMatrix::from_fn(r.len(), c.len(), |a, b| (self.entry)(self.rows[r[a]], self.cols[c[b]]))
    }
}

/// Build one side of the factorization for levels `L` down to `h`.
///
/// `own` is the tree whose nodes are being skeletonized; `other` supplies the
/// complementary nodes. `row_side` selects row IDs (U factors) or column IDs
/// (V factors).
fn build_side<F: Fn(usize, usize) -> Complex64 + Sync>(
    own: &ComplementaryTree,
    other: &ComplementaryTree,
    eval: &Permuted<'_, F>,
    cfg: &IdbfConfig,
    h: usize,
    row_side: bool,
) -> Result<Vec<SideLevel>> {
    let depth = own.depth();
    let count = cfg.t * cfg.k;
    let mut out: Vec<SideLevel> = Vec::new();
    for l in (h..=depth).rev() {
        let own_nodes = &own.levels[l];
        let other_nodes = &other.levels[depth - l];
        let prev = out.last();
        let samples: Vec<Vec<usize>> = other_nodes
            .par_iter()
            .enumerate()
            .map(|(b, node)| {
                let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, u64::from(row_side), l, b, usize::MAX));
                sample_positions(&other.points, node.range(), count, &mut rng)
            })
            .collect();
        let tasks: Vec<(usize, usize)> =
            (0..other_nodes.len()).flat_map(|b| (0..own_nodes.len()).map(move |a| (b, a))).collect();
        let results: Vec<Result<(Vec<usize>, DMatrix<Complex64>)>> = tasks
            .par_iter()
            .map(|&(b, a)| {
                let node = &own_nodes[a];
                let cand: Vec<usize> = if l == depth {
                    node.range().collect()
                } else {
                    let prev = prev.expect("finer level built first");
                    let pb = other_nodes[b].parent.expect("non-root complementary node");
                    node.children.iter().flat_map(|&c| prev.skel[pb][c].iter().copied()).collect()
                };
                let samples = &samples[b];
                if cand.is_empty() || samples.is_empty() {
                    return Ok((Vec::new(), DMatrix::zeros(0, 0)));
                }
                if row_side {
                    let blk = eval.block(&cand, samples);
                    let id = row_id_of(&blk, cfg.k, cfg.eps)?;
                    Ok((id.skeleton.iter().map(|&s| cand[s]).collect(), id.interp))
                } else {
                    let blk = eval.block(samples, &cand);
                    let id = column_id_of(&blk, cfg.k, cfg.eps)?;
                    Ok((id.skeleton.iter().map(|&s| cand[s]).collect(), id.interp))
                }
            })
            .collect();
        let mut skel = vec![vec![Vec::new(); own_nodes.len()]; other_nodes.len()];
        let mut interp = vec![vec![DMatrix::zeros(0, 0); own_nodes.len()]; other_nodes.len()];
        for (&(b, a), res) in tasks.iter().zip(results) {
            let (s, w) = res?;
            skel[b][a] = s;
            interp[b][a] = w;
        }
        let (offsets, total) = offsets_of(&skel);
        out.push(SideLevel { skel, interp, offsets, total });
    }
    Ok(out)
}

/// Assemble the factors of one side. Returned in order `ℓ = L, …, h`.
fn side_factors(own: &ComplementaryTree, other: &ComplementaryTree, levels: &[SideLevel], row_side: bool) -> Vec<ButterflyFactor> {
    let depth = own.depth();
    let mut factors = Vec::with_capacity(levels.len());
    for (idx, lev) in levels.iter().enumerate() {
        let l = depth - idx;
        let own_nodes = &own.levels[l];
        let other_nodes = &other.levels[depth - l];
        let mut blocks = Vec::new();
        let fine_len = if l == depth { own.len() } else { levels[idx - 1].total };
        for b in 0..other_nodes.len() {
            for a in 0..own_nodes.len() {
                let w = &lev.interp[b][a];
                if w.is_empty() {
                    continue;
                }
                let fine_start = if l == depth {
                    own_nodes[a].start
                } else {
                    let pb = other_nodes[b].parent.expect("non-root complementary node");
                    levels[idx - 1].offsets[pb][own_nodes[a].children[0]]
                };
                let coarse_start = lev.offsets[b][a];
                let (row_start, col_start) = if row_side { (fine_start, coarse_start) } else { (coarse_start, fine_start) };
                blocks.push(FactorBlock { row_start, col_start, data: w.clone() });
            }
        }
        let (nrows, ncols) = if row_side { (fine_len, lev.total) } else { (lev.total, fine_len) };
        factors.push(ButterflyFactor { nrows, ncols, blocks });
    }
    factors
}

/// Butterfly factorization stopping at level `h` (`⌈L/2⌉ ≤ h ≤ L`).
///
/// `entry(i, j)` evaluates `K` in the original indexing. `h = L` gives the
/// single-level leaf/root skeletonization, `h = L-1` one splitting step.
pub fn factorize_to_level<F>(
    entry: &F,
    tx: &ComplementaryTree,
    tw: &ComplementaryTree,
    cfg: &IdbfConfig,
    h: usize,
) -> Result<ButterflyFactorization>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    cfg.validate()?;
    let depth = tx.depth();
    if tw.depth() != depth {
        return Err(Error::Config(format!("tree depths differ: {} and {}", depth, tw.depth())));
    }
    if tx.dim != tw.dim {
        return Err(Error::Config("trees of different dimension".into()));
    }
    if h > depth || 2 * h < depth {
        return Err(Error::Config(format!("stopping level {h} outside [{}, {depth}]", depth.div_ceil(2))));
    }
    let eval = Permuted { entry, rows: &tx.perm, cols: &tw.perm };
    let (u_levels, v_levels) = rayon::join(
        || build_side(tx, tw, &eval, cfg, h, true),
        || {
            let t_eval = Permuted { entry, rows: &tx.perm, cols: &tw.perm };
            build_side(tw, tx, &t_eval, cfg, h, false)
        },
    );
    let (u_levels, v_levels) = (u_levels?, v_levels?);

    let uh = u_levels.last().expect("at least one level");
    let vh = v_levels.last().expect("at least one level");
    let (nx, nw) = (tx.levels[h].len(), tw.levels[h].len());
    let up = 2 * h - depth;
    let pairs: Vec<(usize, usize)> = (0..nx).flat_map(|a| (0..nw).map(move |b| (a, b))).collect();
    let s_blocks: Vec<FactorBlock> = pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let bu = tw.ancestor(h, b, up);
            let av = tx.ancestor(h, a, up);
            let rs = &uh.skel[bu][a];
            let cs = &vh.skel[av][b];
            if rs.is_empty() || cs.is_empty() {
                return None;
            }
            Some(FactorBlock { row_start: uh.offsets[bu][a], col_start: vh.offsets[av][b], data: eval.block(rs, cs) })
        })
        .collect();
    let s = ButterflyFactor { nrows: uh.total, ncols: vh.total, blocks: s_blocks };

    let mut factors = side_factors(tx, tw, &u_levels, true);
    factors.push(s);
    let mut v = side_factors(tw, tx, &v_levels, false);
    v.reverse();
    factors.extend(v);
    Ok(ButterflyFactorization {
        nrows: tx.len(),
        ncols: tw.len(),
        depth,
        h,
        row_perm: tx.perm.clone(),
        col_perm: tw.perm.clone(),
        factors,
    })
}

/// Full recursive factorization, stopping at `h = ⌈L/2⌉`.
pub fn idbf_factorize<F>(entry: &F, tx: &ComplementaryTree, tw: &ComplementaryTree, cfg: &IdbfConfig) -> Result<ButterflyFactorization>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    factorize_to_level(entry, tx, tw, cfg, tx.depth().div_ceil(2))
}

/// One-level skeletonization `K ≈ U S V` between leaves and roots.
pub fn lrcs<F>(entry: &F, tx: &ComplementaryTree, tw: &ComplementaryTree, cfg: &IdbfConfig) -> Result<ButterflyFactorization>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    factorize_to_level(entry, tx, tw, cfg, tx.depth())
}

/// One matrix-splitting step on top of the leaf skeletonization.
pub fn mscs<F>(entry: &F, tx: &ComplementaryTree, tw: &ComplementaryTree, cfg: &IdbfConfig) -> Result<ButterflyFactorization>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    let depth = tx.depth();
    if depth < 2 {
        return Err(Error::Config("matrix splitting needs trees of depth at least 2".into()));
    }
    factorize_to_level(entry, tx, tw, cfg, depth - 1)
}

/// Build both trees with a common depth and factorize.
pub fn factorize_points<F>(entry: &F, x: &PointSet, omega: &PointSet, cfg: &IdbfConfig) -> Result<ButterflyFactorization>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    cfg.validate()?;
    let depth = common_depth(x, omega, cfg.n0);
    let tx = build_tree_with_depth(x, cfg.n0, depth);
    let tw = build_tree_with_depth(omega, cfg.n0, depth);
    idbf_factorize(entry, &tx, &tw, cfg)
}

const MAGIC: &[u8; 8] = b"MIDBFv01";
const FORMAT_VERSION: u32 = 1;

fn write_usizes<W: Write>(w: &mut W, v: &[usize]) -> Result<()> {
    w.write_u64::<LittleEndian>(v.len() as u64)?;
    for &x in v {
        w.write_u64::<LittleEndian>(x as u64)?;
    }
    Ok(())
}

fn read_usizes<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    (0..n).map(|_| Ok(r.read_u64::<LittleEndian>()? as usize)).collect()
}

impl ButterflyFactorization {
    /// Binary container.
    ///
    /// Layout (little-endian): magic `MIDBFv01`, `u32` version, `u64` rows,
    /// cols, L, h, factor count; row and column permutations (`u64` length then
    /// entries); per factor: `u64` rows, cols, block count, then per block
    /// `u64` row start, row length, col start, col length. The payload follows:
    /// all block entries in factor/block order, column-major, as `f64` pairs
    /// (re, im).
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        for x in [self.nrows, self.ncols, self.depth, self.h, self.factors.len()] {
            w.write_u64::<LittleEndian>(x as u64)?;
        }
        write_usizes(w, &self.row_perm)?;
        write_usizes(w, &self.col_perm)?;
        for f in &self.factors {
            for x in [f.nrows, f.ncols, f.blocks.len()] {
                w.write_u64::<LittleEndian>(x as u64)?;
            }
            for b in &f.blocks {
                for x in [b.row_start, b.data.nrows(), b.col_start, b.data.ncols()] {
                    w.write_u64::<LittleEndian>(x as u64)?;
                }
            }
        }
        for f in &self.factors {
            for b in &f.blocks {
                for z in b.data.iter() {
                    w.write_f64::<LittleEndian>(z.re)?;
                    w.write_f64::<LittleEndian>(z.im)?;
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`ButterflyFactorization::write_to`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a butterfly container".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let mut hdr = [0usize; 5];
        for x in &mut hdr {
            *x = r.read_u64::<LittleEndian>()? as usize;
        }
        let [nrows, ncols, depth, h, nf] = hdr;
        let row_perm = read_usizes(r)?;
        let col_perm = read_usizes(r)?;
        if row_perm.len() != nrows || col_perm.len() != ncols {
            return Err(Error::Format("permutation length mismatch".into()));
        }
        let mut tables = Vec::with_capacity(nf);
        for _ in 0..nf {
            let fr = r.read_u64::<LittleEndian>()? as usize;
            let fc = r.read_u64::<LittleEndian>()? as usize;
            let nb = r.read_u64::<LittleEndian>()? as usize;
            let mut blocks = Vec::with_capacity(nb);
            for _ in 0..nb {
                let mut t = [0usize; 4];
                for x in &mut t {
                    *x = r.read_u64::<LittleEndian>()? as usize;
                }
                if t[0] + t[1] > fr || t[2] + t[3] > fc {
                    return Err(Error::Format("block outside factor bounds".into()));
                }
                blocks.push(t);
            }
            tables.push((fr, fc, blocks));
        }
        let mut factors = Vec::with_capacity(nf);
        for (fr, fc, blocks) in tables {
            let mut out = Vec::with_capacity(blocks.len());
            for [rs, rl, cs, cl] in blocks {
                let mut data = DMatrix::zeros(rl, cl);
                for z in data.iter_mut() {
                    let re = r.read_f64::<LittleEndian>()?;
                    let im = r.read_f64::<LittleEndian>()?;
                    *z = Complex64::new(re, im);
                }
                out.push(FactorBlock { row_start: rs, col_start: cs, data });
            }
            factors.push(ButterflyFactor { nrows: fr, ncols: fc, blocks: out });
        }
        Ok(Self { nrows, ncols, depth, h, row_perm, col_perm, factors })
    }
}
