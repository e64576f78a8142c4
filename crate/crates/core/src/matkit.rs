//! Dense-matrix helpers shared by the oracle and the learner.
//!
//! `svec` walks the upper triangle row by row, `(0,0), (0,1), .., (0,d-1),
//! (1,1), ..`, scaling off-diagonal entries by `sqrt(2)` so that
//! `svec(A) . svec(B) == tr(A^T B)`.

use std::f64::consts::SQRT_2;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetry tolerance applied when wrapping raw data, relative to `1 + max|a_ij|`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative residual at which the doubling iteration stops.
pub const LYAPUNOV_REL_TOL: f64 = 1e-12;
/// Hard cap on doubling iterations.
pub const LYAPUNOV_MAX_ITER: usize = 200;
/// Acceptance bound on `||P - C - F^T P F||_F / (1 + ||P||_F)`.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after checking it is square and symmetric, then averages the
    /// two triangles so the stored matrix is exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let scale = 1.0 + m.amax();
        let asym = (&m - m.transpose()).amax();
        if !(asym <= SYMMETRY_TOL * scale) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrize(&m))
    }

    /// Returns `(m + m^T) / 2` without a tolerance check.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        SymMatrix((m + m.transpose()) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Symmetric vectorization of a `dim x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvecVector {
    entries: DVector<f64>,
    dim: usize,
}

impl SvecVector {
    /// Wraps raw entries; the length must be `d(d+1)/2` for some `d >= 1`.
    pub fn new(entries: DVector<f64>) -> Result<Self> {
        let len = entries.len();
        let dim = triangular_root(len).ok_or(Error::NotTriangular { len })?;
        Ok(SvecVector { entries, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &DVector<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DVector<f64> {
        self.entries
    }

    pub fn dot(&self, other: &SvecVector) -> f64 {
        self.entries.dot(&other.entries)
    }
}

/// `d(d+1)/2`.
pub fn svec_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Inverse of [`svec_len`], if `len` is triangular and nonzero.
pub fn triangular_root(len: usize) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let d = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (d.saturating_sub(1)..=d + 1).find(|&k| k > 0 && svec_len(k) == len)
}

pub fn svec(m: &SymMatrix) -> SvecVector {
    let d = m.dim();
    let mut out = DVector::zeros(svec_len(d));
    svec_into(m.as_matrix(), out.as_mut_slice());
    SvecVector { entries: out, dim: d }
}

/// `svec` of a raw matrix; only the upper triangle is read.
pub fn svec_raw(m: &DMatrix<f64>) -> Result<SvecVector> {
    check_square(m)?;
    let d = m.nrows();
    let mut out = DVector::zeros(svec_len(d));
    svec_into(m, out.as_mut_slice());
    Ok(SvecVector { entries: out, dim: d })
}

pub(crate) fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    let mut k = 0;
    for i in 0..d {
        out[k] = m[(i, i)];
        k += 1;
        for j in (i + 1)..d {
            out[k] = SQRT_2 * m[(i, j)];
            k += 1;
        }
    }
}

pub fn smat(v: &SvecVector) -> SymMatrix {
    SymMatrix(smat_slice(v.entries.as_slice(), v.dim))
}

pub(crate) fn smat_slice(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        m[(i, i)] = v[k];
        k += 1;
        for j in (i + 1)..d {
            let x = v[k] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(f: &DMatrix<f64>) -> Result<f64> {
    check_square(f)?;
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectral_radius input".into()));
    }
    if f.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(f.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Solves `P = C + F^T P F` for stable `F`.
///
/// Uses the doubling recursion `P <- P + F_k^T P F_k`, `F_{k+1} = F_k^2`, which
/// after `k` rounds sums the first `2^k` terms of `sum_i (F^i)^T C F^i`.
pub fn solve_discrete_lyapunov(f: &DMatrix<f64>, c: &SymMatrix) -> Result<SymMatrix> {
    check_square(f)?;
    if f.nrows() != c.dim() {
        return Err(Error::dim(format!(
            "lyapunov: F is {}x{}, C is {}x{}",
            f.nrows(),
            f.ncols(),
            c.dim(),
            c.dim()
        )));
    }
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }

    let mut p = c.as_matrix().clone();
    let mut fk = f.clone();
    let mut converged = false;
    for _ in 0..LYAPUNOV_MAX_ITER {
        let incr = fk.transpose() * &p * &fk;
        p += &incr;
        let pn = p.norm();
        if !pn.is_finite() {
            return Err(Error::NonFinite("lyapunov iterate".into()));
        }
        if incr.norm() <= LYAPUNOV_REL_TOL * pn.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        fk = &fk * &fk;
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "lyapunov doubling after {LYAPUNOV_MAX_ITER} iterations (rho = {rho})"
        )));
    }

    // A couple of plain fixed-point sweeps clean up round-off from squaring.
    for _ in 0..2 {
        p = c.as_matrix() + f.transpose() * &p * f;
    }
    let p = SymMatrix::symmetrize(&p);
    let residual = lyapunov_residual(f, c, &p);
    if residual > LYAPUNOV_RESIDUAL_TOL * (1.0 + p.norm()) {
        return Err(Error::NoConvergence(format!(
            "lyapunov residual {residual:e} too large"
        )));
    }
    Ok(p)
}

/// `||P - C - F^T P F||_F`.
pub fn lyapunov_residual(f: &DMatrix<f64>, c: &SymMatrix, p: &SymMatrix) -> f64 {
    (p.as_matrix() - c.as_matrix() - f.transpose() * p.as_matrix() * f).norm()
}

/// Entrywise clamp onto `[lo, hi]`.
pub fn project_box(x: &DMatrix<f64>, lo: f64, hi: f64) -> Result<DMatrix<f64>> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("box bounds lo = {lo} >= hi = {hi}")));
    }
    Ok(x.map(|v| v.clamp(lo, hi)))
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}
