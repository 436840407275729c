//! Dense symmetric-matrix kernels shared by the distributions and the filter.
//!
//! Conventions used throughout the crate:
//!
//! * "upper Cholesky" always means `M = U'U` with `U` upper triangular and a
//!   positive diagonal;
//! * the symmetric square root `M^{1/2}` is the unique symmetric positive
//!   definite `R` with `R R = M`, computed by spectral mapping.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance wherever a numerical threshold is needed.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Relative asymmetry accepted when validating untrusted input.
const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive definite matrix.
///
/// Construction through [`SymPosDefMatrix::new`] validates symmetry and
/// positive definiteness. Values produced inside the crate by algebraically
/// PD-preserving operations skip the factorization check.
#[derive(Debug, Clone, PartialEq)]
pub struct SymPosDefMatrix(DMatrix<f64>);

impl SymPosDefMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym / scale));
        }
        let sym = symmetrize(m);
        if sym.clone().cholesky().is_none() {
            return Err(Error::not_pd("Cholesky factorization failed"));
        }
        Ok(SymPosDefMatrix(sym))
    }

    pub fn identity(p: usize) -> Self {
        SymPosDefMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = diag.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::not_pd(format!("diagonal entry {bad} is not positive")));
        }
        Ok(SymPosDefMatrix(DMatrix::from_diagonal(
            &DVector::from_column_slice(diag),
        )))
    }

    /// Wrap a matrix known to be PD by construction; symmetrizes round-off.
    pub(crate) fn assume_pd(m: DMatrix<f64>) -> Self {
        SymPosDefMatrix(symmetrize(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `c * self` for a positive scalar.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::domain(format!("scale factor {c} must be positive")));
        }
        Ok(SymPosDefMatrix(&self.0 * c))
    }

    pub fn log_det(&self) -> f64 {
        match self.0.clone().cholesky() {
            Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            // ill-conditioned but validated: fall back to the spectrum
            None => self.eigen().values.iter().map(|l| l.ln()).sum(),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let ch = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::not_pd("Cholesky factorization failed while inverting"))?;
        Ok(SymPosDefMatrix::assume_pd(ch.inverse()))
    }

    pub fn eigen(&self) -> SymEigen {
        SymEigen::of(&self.0)
    }

    /// `v' M v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }
}

impl Deref for SymPosDefMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// An upper-triangular matrix with a positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriangular(DMatrix<f64>);

impl UpperTriangular {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                if m[(i, j)] != 0.0 {
                    return Err(Error::domain("entry below the diagonal is nonzero"));
                }
            }
            if !(m[(j, j)] > 0.0) {
                return Err(Error::domain("diagonal entry is not positive"));
            }
        }
        Ok(UpperTriangular(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `log |U|`, the sum of the logs of the diagonal.
    pub fn log_det(&self) -> f64 {
        self.0.diagonal().iter().map(|d| d.ln()).sum()
    }

    /// Solves `U X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.0
            .solve_upper_triangular(b)
            .expect("positive diagonal guarantees invertibility")
    }

    /// Solves `U' X = B`.
    pub fn solve_transpose(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.0
            .tr_solve_upper_triangular(b)
            .expect("positive diagonal guarantees invertibility")
    }

    /// Computes `B U^{-1}`.
    pub fn right_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        // B U^{-1} = (U'^{-1} B')'
        self.solve_transpose(&b.transpose()).transpose()
    }
}

/// Symmetric eigendecomposition `M = V diag(values) V'`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Decompose the symmetric part of `m`.
    pub fn of(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(m.clone()));
        SymEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `V diag(f(values)) V'`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(j).scale_mut(fl);
        }
        symmetrize(scaled * self.vectors.transpose())
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }

    fn check_positive(&self) -> Result<()> {
        let p = self.values.len() as f64;
        let thr = p * f64::EPSILON * self.values.amax();
        let min = self.min();
        if !(min > thr) || !min.is_finite() {
            return Err(Error::not_pd(format!(
                "smallest eigenvalue {min:e} is below the resolvable level {thr:e} (largest {:e})",
                self.max()
            )));
        }
        Ok(())
    }
}

/// Symmetric square root of a PD matrix.
pub fn sym_sqrt(m: &SymPosDefMatrix) -> Result<SymPosDefMatrix> {
    let eig = m.eigen();
    eig.check_positive()?;
    Ok(SymPosDefMatrix::assume_pd(eig.map(f64::sqrt)))
}

/// `M^{-1/2}`, the inverse of the symmetric square root.
pub fn sym_inv_sqrt(m: &SymPosDefMatrix) -> Result<SymPosDefMatrix> {
    let eig = m.eigen();
    eig.check_positive()?;
    Ok(SymPosDefMatrix::assume_pd(eig.map(|l| 1.0 / l.sqrt())))
}

/// `(M^{1/2}, M^{-1/2})` from a single eigendecomposition.
pub fn sym_sqrt_pair(m: &SymPosDefMatrix) -> Result<(SymPosDefMatrix, SymPosDefMatrix)> {
    let eig = m.eigen();
    eig.check_positive()?;
    Ok((
        SymPosDefMatrix::assume_pd(eig.map(f64::sqrt)),
        SymPosDefMatrix::assume_pd(eig.map(|l| 1.0 / l.sqrt())),
    ))
}

/// Square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[-rel_tol * scale, 0]` are treated as round-off and
/// clamped to zero; anything more negative is an error.
pub fn psd_sqrt(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let eig = SymEigen::of(m);
    let scale = eig.values.amax().max(1.0);
    let min = eig.min();
    if min < -rel_tol * scale {
        return Err(Error::not_pd(format!(
            "matrix has negative eigenvalue {min:e}"
        )));
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Upper Cholesky factor `U` with `U'U = M`.
pub fn chol_upper(m: &SymPosDefMatrix) -> Result<UpperTriangular> {
    let ch = m
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::not_pd("Cholesky factorization broke down"))?;
    Ok(UpperTriangular(ch.unpack().transpose()))
}

/// Eigenvalues `l > rel_tol * max(1, max|l|)` of a symmetric matrix, in
/// descending order.
pub fn positive_eigenvalues(m: &DMatrix<f64>, rel_tol: f64) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let eig = SymEigen::of(m);
    let thr = rel_tol * eig.values.amax().max(1.0);
    let mut pos: Vec<f64> = eig.values.iter().copied().filter(|&l| l > thr).collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    pos
}

/// Natural log of the scalar gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `log Γ_p(a) = p(p-1)/4 log π + Σ_{j=1..p} log Γ(a + (1-j)/2)`.
pub fn log_multigamma(p: usize, a: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::domain("multivariate gamma needs p >= 1"));
    }
    let pf = p as f64;
    if !(a > (pf - 1.0) / 2.0) {
        return Err(Error::domain(format!(
            "log_multigamma({p}, {a}) requires a > {}",
            (pf - 1.0) / 2.0
        )));
    }
    let mut acc = pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 1..=p {
        acc += ln_gamma(a + (1.0 - j as f64) / 2.0);
    }
    Ok(acc)
}

/// `v v'`.
pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// Row-major lower triangle: `m11, m21, m22, m31, m32, m33, ...`.
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..p {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
