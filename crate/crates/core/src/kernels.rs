//! Built-in phase functions, the icosphere mesh, and simulated indirect
//! access to `K = exp(2πiΦ)` (entries, matvecs, or exact phase rows).

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::phase_md::{ExactPhase, KernelAccess, LowRankPhase};

/// `(2 + sin 2πx₁ · sin 2πx₂) / 16`.
pub fn fio_c1(x: &[f64]) -> f64 {
    (2.0 + (TAU * x[0]).sin() * (TAU * x[1]).sin()) / 16.0
}

/// `(2 + cos 2πx₁ · cos 2πx₂) / 16`.
pub fn fio_c2(x: &[f64]) -> f64 {
    (2.0 + (TAU * x[0]).cos() * (TAU * x[1]).cos()) / 16.0
}

/// Generalized Radon transform phase `x·ξ + sqrt(c₁²ξ₁² + c₂²ξ₂²)`.
pub fn fio2d_phase(x: &[f64], xi: &[f64]) -> f64 {
    let (c1, c2) = (fio_c1(x), fio_c2(x));
    x[0] * xi[0] + x[1] * xi[1] + (c1 * c1 * xi[0] * xi[0] + c2 * c2 * xi[1] * xi[1]).sqrt()
}

/// Fourier phase `x·ξ`.
pub fn nufft_phase(x: &[f64], xi: &[f64]) -> f64 {
    x.iter().zip(xi).map(|(a, b)| a * b).sum()
}

/// Helmholtz wave number `h = sqrt(N) / 10`.
pub fn helmholtz_h(n: usize) -> f64 {
    (n as f64).sqrt() / 10.0
}

/// Oscillatory part of the Helmholtz Green's function, `h·|x − ξ|`.
pub fn helmholtz_phase(x: &[f64], xi: &[f64], n: usize) -> f64 {
    helmholtz_h(n) * x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Triangulated unit sphere from a refined icosahedron.
#[derive(Clone, Debug)]
pub struct SphereMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub level: usize,
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / r, p[1] / r, p[2] / r]
}

/// Icosahedron with vertices at the poles, refined `level` times by edge
/// midpoints projected onto the sphere.
pub fn sphere_mesh(level: usize) -> SphereMesh {
    let z = 1.0 / 5f64.sqrt();
    let rho = 2.0 / 5f64.sqrt();
    let mut vertices = vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
    for k in 0..5 {
        let a = TAU * k as f64 / 5.0;
        vertices.push([rho * a.cos(), rho * a.sin(), z]);
    }
    for k in 0..5 {
        let a = TAU * k as f64 / 5.0 + PI / 5.0;
        vertices.push([rho * a.cos(), rho * a.sin(), -z]);
    }
    let up = |k: usize| 2 + k % 5;
    let lo = |k: usize| 7 + k % 5;
    let mut triangles = Vec::with_capacity(20);
    for k in 0..5 {
        triangles.push([0, up(k), up(k + 1)]);
        triangles.push([up(k), lo(k), up(k + 1)]);
        triangles.push([up(k + 1), lo(k), lo(k + 1)]);
        triangles.push([1, lo(k + 1), lo(k)]);
    }
    for _ in 0..level {
        let mut mid: std::collections::HashMap<(usize, usize), usize> = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        for t in &triangles {
            let ab = midpoint(t[0], t[1], &mut vertices);
            let bc = midpoint(t[1], t[2], &mut vertices);
            let ca = midpoint(t[2], t[0], &mut vertices);
            next.push([t[0], ab, ca]);
            next.push([ab, t[1], bc]);
            next.push([ca, bc, t[2]]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }
    SphereMesh { vertices, triangles, level }
}

impl SphereMesh {
    /// Face centroids projected onto the sphere.
    pub fn face_centers(&self) -> Vec<[f64; 3]> {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                normalize([a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]])
            })
            .collect()
    }

    /// Number of distinct edges.
    pub fn edge_count(&self) -> usize {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e.len()
    }
}

/// Points of the mesh used for the two hemispheres.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpherePoints {
    Vertices,
    FaceCenters,
}

/// Tolerance for treating a coordinate as zero in the hemisphere split.
const EQUATOR_TOL: f64 = 1e-12;

fn upper_half(p: &[f64; 3]) -> bool {
    for a in [2, 1, 0] {
        if p[a] > EQUATOR_TOL {
            return true;
        }
        if p[a] < -EQUATOR_TOL {
            return false;
        }
    }
    true
}

/// Split mesh points into `(X, Ω)` by the sign of the third coordinate. Points
/// on the equator are assigned by the second, then the first coordinate.
pub fn sphere_halves(level: usize, which: SpherePoints) -> Result<(PointSet, PointSet)> {
    let mesh = sphere_mesh(level);
    let pts = match which {
        SpherePoints::Vertices => mesh.vertices.clone(),
        SpherePoints::FaceCenters => mesh.face_centers(),
    };
    let (mut x, mut o) = (Vec::new(), Vec::new());
    for p in pts {
        if upper_half(&p) {
            x.extend(p);
        } else {
            o.extend(p);
        }
    }
    Ok((PointSet::new(3, x)?, PointSet::new(3, o)?))
}

/// Phase function families.
#[derive(Clone)]
pub enum KernelKind {
    Fio2d,
    Nufft,
    /// `h·|x − ξ|` with the given `h`.
    Helmholtz { h: f64 },
    /// Phase given by a low-rank factorization over the point indices.
    LowRank(Arc<LowRankPhase>),
    /// Arbitrary phase of the two points.
    Custom(Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fio2d => write!(f, "Fio2d"),
            Self::Nufft => write!(f, "Nufft"),
            Self::Helmholtz { h } => write!(f, "Helmholtz {{ h: {h} }}"),
            Self::LowRank(p) => write!(f, "LowRank(rank {})", p.rank()),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A phase function bound to row points `x` and column points `omega`.
#[derive(Clone, Debug)]
pub struct PhaseKernel {
    pub kind: KernelKind,
    pub x: PointSet,
    pub omega: PointSet,
}

impl PhaseKernel {
    pub fn new(kind: KernelKind, x: PointSet, omega: PointSet) -> Result<Self> {
        if x.dim() != omega.dim() {
            return Err(Error::Config("row and column points differ in dimension".into()));
        }
        match &kind {
            KernelKind::Fio2d if x.dim() != 2 => return Err(Error::Config("fio2d needs 2D points".into())),
            KernelKind::LowRank(p) if p.nrows() != x.len() || p.ncols() != omega.len() => {
                return Err(Error::Config("low-rank phase does not match the point sets".into()))
            }
            _ => {}
        }
        Ok(Self { kind, x, omega })
    }

    pub fn nrows(&self) -> usize {
        self.x.len()
    }

    pub fn ncols(&self) -> usize {
        self.omega.len()
    }

    /// `Φ(x_i, ξ_j)`.
    pub fn phase(&self, i: usize, j: usize) -> f64 {
        let (x, xi) = (self.x.point(i), self.omega.point(j));
        match &self.kind {
            KernelKind::Fio2d => fio2d_phase(x, xi),
            KernelKind::Nufft => nufft_phase(x, xi),
            KernelKind::Helmholtz { h } => {
                h * x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            KernelKind::LowRank(p) => p.phase(i, j),
            KernelKind::Custom(f) => f(x, xi),
        }
    }

    /// `exp(2πi Φ(x_i, ξ_j))`.
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        Complex64::from_polar(1.0, TAU * self.phase(i, j))
    }

    pub fn phase_row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols()).map(|j| self.phase(i, j)).collect()
    }

    pub fn phase_col(&self, j: usize) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.phase(i, j)).collect()
    }

    /// Direct sum `(K f)(i)` for one row.
    pub fn direct_row_sum(&self, i: usize, f: &[Complex64]) -> Complex64 {
        f.iter().enumerate().map(|(j, fj)| self.entry(i, j) * fj).sum()
    }

    /// Direct dense product `K f`. Zero entries of `f` are skipped, so
    /// products with basis vectors cost one column.
    pub fn direct_matvec(&self, f: &[Complex64]) -> Vec<Complex64> {
        let nz = nonzeros(f);
        (0..self.nrows()).into_par_iter().map(|i| nz.iter().map(|&(j, fj)| self.entry(i, j) * fj).sum()).collect()
    }

    /// Direct dense product `Kᵀ g`, skipping zero entries of `g`.
    pub fn direct_matvec_transpose(&self, g: &[Complex64]) -> Vec<Complex64> {
        let nz = nonzeros(g);
        (0..self.ncols()).into_par_iter().map(|j| nz.iter().map(|&(i, gi)| self.entry(i, j) * gi).sum()).collect()
    }
}

fn nonzeros(f: &[Complex64]) -> Vec<(usize, Complex64)> {
    f.iter().enumerate().filter(|(_, z)| z.re != 0.0 || z.im != 0.0).map(|(j, &z)| (j, z)).collect()
}

/// Access patterns for the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Arbitrary entries of `K`.
    Entry = 1,
    /// Only products with `K` and `Kᵀ`.
    Matvec = 2,
    /// Rows and columns of the phase itself.
    PhaseRows = 3,
}

impl Scenario {
    pub fn from_number(s: u8) -> Result<Self> {
        match s {
            1 => Ok(Self::Entry),
            2 => Ok(Self::Matvec),
            3 => Ok(Self::PhaseRows),
            _ => Err(Error::Config(format!("scenario must be 1, 2 or 3, got {s}"))),
        }
    }
}

/// Indirect access to a kernel under one of the three scenarios. The
/// underlying phase is hidden from callers except in [`Scenario::PhaseRows`].
#[derive(Debug)]
pub struct KernelAccessor {
    kernel: Arc<PhaseKernel>,
    scenario: Scenario,
    matvecs: AtomicU64,
}

impl KernelAccessor {
    pub fn new(kernel: Arc<PhaseKernel>, scenario: Scenario) -> Self {
        Self { kernel, scenario, matvecs: AtomicU64::new(0) }
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    /// Number of products with `K` or `Kᵀ` performed so far.
    pub fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    /// Entry access, available only in the entry scenario.
    pub fn entry(&self, i: usize, j: usize) -> Option<Complex64> {
        (self.scenario == Scenario::Entry).then(|| self.kernel.entry(i, j))
    }

    /// `K f`; the simulated external operator is a direct sum.
    pub fn matvec(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        if f.len() != self.kernel.ncols() {
            return Err(Error::Dimension(format!("vector of length {} for {} columns", f.len(), self.kernel.ncols())));
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        Ok(self.kernel.direct_matvec(f))
    }

    /// `Kᵀ g`.
    pub fn matvec_transpose(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        if g.len() != self.kernel.nrows() {
            return Err(Error::Dimension(format!("vector of length {} for {} rows", g.len(), self.kernel.nrows())));
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        Ok(self.kernel.direct_matvec_transpose(g))
    }

    fn basis(n: usize, k: usize) -> Vec<Complex64> {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[k] = Complex64::new(1.0, 0.0);
        e
    }
}

impl KernelAccess for KernelAccessor {
    fn nrows(&self) -> usize {
        self.kernel.nrows()
    }

    fn ncols(&self) -> usize {
        self.kernel.ncols()
    }

    fn kernel_row(&self, i: usize) -> Vec<Complex64> {
        match self.scenario {
            Scenario::Matvec => self.matvec_transpose(&Self::basis(self.nrows(), i)).expect("shape checked"),
            _ => (0..self.ncols()).map(|j| self.kernel.entry(i, j)).collect(),
        }
    }

    fn kernel_col(&self, j: usize) -> Vec<Complex64> {
        match self.scenario {
            Scenario::Matvec => self.matvec(&Self::basis(self.ncols(), j)).expect("shape checked"),
            _ => (0..self.nrows()).map(|i| self.kernel.entry(i, j)).collect(),
        }
    }

    fn exact_phase(&self) -> Option<&dyn ExactPhase> {
        (self.scenario == Scenario::PhaseRows).then_some(self as &dyn ExactPhase)
    }
}

impl ExactPhase for KernelAccessor {
    fn phase_row(&self, i: usize) -> Vec<f64> {
        self.kernel.phase_row(i)
    }

    fn phase_col(&self, j: usize) -> Vec<f64> {
        self.kernel.phase_col(j)
    }
}

/// Accessor for `kind` over the given points under `scenario`.
pub fn make_accessor(kind: KernelKind, x: PointSet, omega: PointSet, scenario: Scenario) -> Result<KernelAccessor> {
    Ok(KernelAccessor::new(Arc::new(PhaseKernel::new(kind, x, omega)?), scenario))
}
