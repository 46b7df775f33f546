//! Wrapped (mod-1) phase values and row/column access to them.

use num_complex::Complex64;

/// `x mod 1` mapped into `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// `(1/2π)·Im(log z)` on the principal branch, shifted into `[0, 1)`.
pub fn wrapped_phase(z: Complex64) -> f64 {
    let t = z.arg() / std::f64::consts::TAU;
    if t < 0.0 {
        wrap(t + 1.0)
    } else {
        wrap(t)
    }
}

/// Read access to the rows and columns of a wrapped phase matrix.
///
/// Implementations must return values in `[0, 1)` and be consistent across
/// calls; concurrent reads must be safe.
pub trait PhaseAccessor: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn row(&self, i: usize) -> Vec<f64>;
    fn col(&self, j: usize) -> Vec<f64>;
}

/// Wrapped view of an explicit dense real matrix (tests, small problems).
#[derive(Clone, Debug)]
pub struct DensePhase {
    pub values: nalgebra::DMatrix<f64>,
}

impl DensePhase {
    pub fn new(values: nalgebra::DMatrix<f64>) -> Self {
        Self { values }
    }
}

impl PhaseAccessor for DensePhase {
    fn nrows(&self) -> usize {
        self.values.nrows()
    }
    fn ncols(&self) -> usize {
        self.values.ncols()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().map(|&x| wrap(x)).collect()
    }
    fn col(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().map(|&x| wrap(x)).collect()
    }
}

/// Wrapped view of a phase function evaluated entrywise.
pub struct FnPhase<F: Fn(usize, usize) -> f64 + Sync> {
    pub m: usize,
    pub n: usize,
    pub f: F,
}

impl<F: Fn(usize, usize) -> f64 + Sync> PhaseAccessor for FnPhase<F> {
    fn nrows(&self) -> usize {
        self.m
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|j| wrap((self.f)(i, j))).collect()
    }
    fn col(&self, j: usize) -> Vec<f64> {
        (0..self.m).map(|i| wrap((self.f)(i, j))).collect()
    }
}
