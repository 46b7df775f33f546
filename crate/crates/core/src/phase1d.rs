//! Phase unwrapping on uniform 1D grids by third-difference rounding, and the
//! blockwise row/column recovery built on top of it.
//!
//! Indices are 0-based throughout; the discontinuity list always starts with 0.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::wrapped::PhaseAccessor;

/// Default third-difference threshold.
pub const TAU_1D: f64 = 1.0 / 16.0;

/// Threshold used in the recovery passes, where detection is disabled.
const NO_DETECT: f64 = 1.0;

/// Unwrapped vector and the detected discontinuity positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Recovered1D {
    pub v: Vec<f64>,
    pub d: Vec<usize>,
}

fn check_wrapped(u: &[f64]) -> Result<()> {
    match u.iter().position(|x| !(0.0..1.0).contains(x)) {
        Some(p) => Err(Error::Input(format!("u[{p}] = {} is outside [0, 1)", u[p]))),
        None => Ok(()),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("threshold must be positive, got {tau}")))
    }
}

/// Recover `v` with `mod(v, 1) = u` by minimizing third differences.
///
/// With `flag = true` the entries at positions 1 and 2 are not re-anchored at
/// the start of the vector (they are trusted as given). Vectors shorter than
/// four entries are returned unchanged.
pub fn recover_vector_1d(u: &[f64], tau: f64, flag: bool) -> Result<Recovered1D> {
    check_wrapped(u)?;
    check_tau(tau)?;
    if u.len() < 4 {
        return Ok(Recovered1D { v: u.to_vec(), d: vec![0] });
    }
    let seed_len = if flag { 3 } else { 1 };
    Ok(recover_vector_1d_seeded(u, &u[..seed_len], tau, flag))
}

/// Same recursion with the leading entries of `v` replaced by `seed`.
///
/// `seed[0]` is the anchor; with `flag = true` up to three leading entries are
/// taken from `seed` and left untouched. Any length is accepted.
pub fn recover_vector_1d_seeded(u: &[f64], seed: &[f64], tau: f64, flag: bool) -> Recovered1D {
    let n = u.len();
    let mut v = u.to_vec();
    for (k, &s) in seed.iter().enumerate().take(n) {
        v[k] = s;
    }
    let mut d = vec![0usize];
    if n == 0 {
        return Recovered1D { v, d };
    }
    let mut c = 0;
    while c < d.len() {
        let st = d[c];
        let first_block = st == 0;
        let keep = if flag && first_block { seed.len() } else { 1 };
        if st + 1 < n && keep <= 1 {
            v[st + 1] = u[st + 1] - (u[st + 1] - v[st]).round();
        }
        if st + 2 < n && keep <= 2 {
            v[st + 2] = u[st + 2] - (u[st + 2] - 2.0 * v[st + 1] + v[st]).round();
        }
        for a in (st + 3)..n {
            v[a] = u[a] - (u[a] - 3.0 * v[a - 1] + 3.0 * v[a - 2] - v[a - 3]).round();
            let third = v[a] - 3.0 * v[a - 1] + 3.0 * v[a - 2] - v[a - 3];
            if third.abs() >= tau && a + 4 <= n {
                d.push(a);
                v[a] = u[a] - (u[a] - v[a - 1]).round();
                break;
            }
        }
        c += 1;
    }
    Recovered1D { v, d }
}

/// Contiguous block structure induced by row and column break lists.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition1D {
    pub m: usize,
    pub n: usize,
    pub row_breaks: Vec<usize>,
    pub col_breaks: Vec<usize>,
    /// Sampled rows falling in each row block.
    pub rows_per_block: Vec<Vec<usize>>,
    /// Sampled columns falling in each column block.
    pub cols_per_block: Vec<Vec<usize>>,
}

fn block_range(breaks: &[usize], total: usize, s: usize) -> Range<usize> {
    let end = breaks.get(s + 1).copied().unwrap_or(total);
    breaks[s]..end
}

fn block_of(breaks: &[usize], i: usize) -> usize {
    breaks.partition_point(|&b| b <= i) - 1
}

impl BlockPartition1D {
    pub fn new(m: usize, n: usize, row_breaks: Vec<usize>, col_breaks: Vec<usize>, rows: &[usize], cols: &[usize]) -> Self {
        let mut rows_per_block = vec![Vec::new(); row_breaks.len()];
        for &i in rows {
            rows_per_block[block_of(&row_breaks, i)].push(i);
        }
        let mut cols_per_block = vec![Vec::new(); col_breaks.len()];
        for &j in cols {
            cols_per_block[block_of(&col_breaks, j)].push(j);
        }
        Self { m, n, row_breaks, col_breaks, rows_per_block, cols_per_block }
    }

    pub fn n_row_blocks(&self) -> usize {
        self.row_breaks.len()
    }

    pub fn n_col_blocks(&self) -> usize {
        self.col_breaks.len()
    }

    pub fn row_block(&self, s: usize) -> Range<usize> {
        block_range(&self.row_breaks, self.m, s)
    }

    pub fn col_block(&self, t: usize) -> Range<usize> {
        block_range(&self.col_breaks, self.n, t)
    }

    pub fn row_block_of(&self, i: usize) -> usize {
        block_of(&self.row_breaks, i)
    }

    pub fn col_block_of(&self, j: usize) -> usize {
        block_of(&self.col_breaks, j)
    }
}

/// Result of the blockwise 1D matrix recovery.
///
/// Holds the three leading rows and columns of every block, which anchor the
/// recovery of any further row or column, plus the recovered sampled rows and
/// columns (the inputs extended by the detected break indices).
#[derive(Clone, Debug)]
pub struct Recovered1DMatrix {
    pub partition: BlockPartition1D,
    pub rows: Vec<(usize, Vec<f64>)>,
    pub cols: Vec<(usize, Vec<f64>)>,
    anchor_rows: HashMap<usize, Vec<f64>>,
    anchor_cols: HashMap<usize, Vec<f64>>,
}

fn leading(r: Range<usize>) -> Range<usize> {
    r.start..r.end.min(r.start + 3)
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

impl Recovered1DMatrix {
    /// Recovered row `i`, computed from the stored anchors.
    pub fn recover_row<A: PhaseAccessor + ?Sized>(&self, phase: &A, i: usize) -> Vec<f64> {
        if let Some(r) = self.anchor_rows.get(&i) {
            return r.clone();
        }
        let u = phase.row(i);
        let mut out = vec![0.0; u.len()];
        for t in 0..self.partition.n_col_blocks() {
            let cb = self.partition.col_block(t);
            let seed: Vec<f64> = leading(cb.clone()).map(|c| self.anchor_cols[&c][i]).collect();
            let rec = recover_vector_1d_seeded(&u[cb.clone()], &seed, NO_DETECT, true);
            out[cb].copy_from_slice(&rec.v);
        }
        out
    }

    /// Recovered column `j`, computed from the stored anchors.
    pub fn recover_col<A: PhaseAccessor + ?Sized>(&self, phase: &A, j: usize) -> Vec<f64> {
        if let Some(c) = self.anchor_cols.get(&j) {
            return c.clone();
        }
        let u = phase.col(j);
        let mut out = vec![0.0; u.len()];
        for s in 0..self.partition.n_row_blocks() {
            let rb = self.partition.row_block(s);
            let seed: Vec<f64> = leading(rb.clone()).map(|r| self.anchor_rows[&r][j]).collect();
            let rec = recover_vector_1d_seeded(&u[rb.clone()], &seed, NO_DETECT, true);
            out[rb].copy_from_slice(&rec.v);
        }
        out
    }
}

/// Blockwise recovery of sampled rows and columns of a wrapped phase matrix.
///
/// Breaks are detected on column `cols[0]` and row `rows[0]` with threshold
/// `tau`. In each block the leading row is recovered first, then the three
/// leading columns, then rows two and three; every sampled row and column is
/// finally recovered from those anchors.
pub fn recover_matrix_1d<A: PhaseAccessor + ?Sized>(
    phase: &A,
    rows: &[usize],
    cols: &[usize],
    tau: f64,
) -> Result<Recovered1DMatrix> {
    check_tau(tau)?;
    let (m, n) = (phase.nrows(), phase.ncols());
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Input("row and column samples must be nonempty".into()));
    }
    if let Some(&i) = rows.iter().find(|&&i| i >= m) {
        return Err(Error::Input(format!("row index {i} out of range {m}")));
    }
    if let Some(&j) = cols.iter().find(|&&j| j >= n) {
        return Err(Error::Input(format!("column index {j} out of range {n}")));
    }

    let d_r = recover_vector_1d(&phase.col(cols[0]), tau, false)?.d;
    let d_c = recover_vector_1d(&phase.row(rows[0]), tau, false)?.d;
    let rows_all = dedup_append(rows, &d_r);
    let cols_all = dedup_append(cols, &d_c);
    let partition = BlockPartition1D::new(m, n, d_r, d_c, &rows_all, &cols_all);

    let mut anchor_rows: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut anchor_cols: HashMap<usize, Vec<f64>> = HashMap::new();
    for s in 0..partition.n_row_blocks() {
        let rb = partition.row_block(s);
        for r in leading(rb.clone()) {
            anchor_rows.insert(r, phase.row(r));
        }
    }
    for t in 0..partition.n_col_blocks() {
        for c in leading(partition.col_block(t)) {
            anchor_cols.insert(c, phase.col(c));
        }
    }

    for s in 0..partition.n_row_blocks() {
        let rb = partition.row_block(s);
        let r0 = rb.start;
        for t in 0..partition.n_col_blocks() {
            let cb = partition.col_block(t);
            // Leading row, anchored at its own first entry.
            let u = anchor_rows[&r0][cb.clone()].to_vec();
            let rec = recover_vector_1d_seeded(&u, &u[..1], NO_DETECT, false);
            anchor_rows.get_mut(&r0).unwrap()[cb.clone()].copy_from_slice(&rec.v);
            // Leading columns, anchored on the recovered leading row.
            for c in leading(cb.clone()) {
                let seed = [anchor_rows[&r0][c]];
                let col = anchor_cols.get_mut(&c).unwrap();
                let rec = recover_vector_1d_seeded(&col[rb.clone()], &seed, NO_DETECT, false);
                col[rb.clone()].copy_from_slice(&rec.v);
            }
            // Rows two and three, anchored on the leading columns.
            for r in leading(rb.clone()).skip(1) {
                let seed: Vec<f64> = leading(cb.clone()).map(|c| anchor_cols[&c][r]).collect();
                let row = anchor_rows.get_mut(&r).unwrap();
                let rec = recover_vector_1d_seeded(&row[cb.clone()], &seed, NO_DETECT, true);
                row[cb.clone()].copy_from_slice(&rec.v);
            }
        }
    }

    let mut out = Recovered1DMatrix { partition, rows: Vec::new(), cols: Vec::new(), anchor_rows, anchor_cols };
    let rec_rows: Vec<(usize, Vec<f64>)> = rows_all.par_iter().map(|&i| (i, out.recover_row(phase, i))).collect();
    let rec_cols: Vec<(usize, Vec<f64>)> = cols_all.par_iter().map(|&j| (j, out.recover_col(phase, j))).collect();
    out.rows = rec_rows;
    out.cols = rec_cols;
    Ok(out)
}
