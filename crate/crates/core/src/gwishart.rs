//! Generalized inverted Wishart (GIW) and generalized Wishart (GW) densities,
//! GIW moments and the symmetric point estimator, and the singular matrix
//! beta distribution with its Wishart-based sampler.
//!
//! `X ~ GIW_p(n, A, S)` has density
//!
//! ```text
//! |A|^h |S|^h / (2^{p h} Γ_p(h) |X|^{n/2}) · etr(-A X^{-1/2} S X^{-1/2} / 2),  h = (n-p-1)/2
//! ```
//!
//! and reduces to the inverted Wishart `IW_p(n, S)` (degrees of freedom in the
//! `n = ν + p + 1` convention) when `A = I`, and to `IW_p(n, A)` when `S = I`.
//! `Y = X^{-1}` follows `GW_p(n-p-1, A^{-1}, S^{-1})`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matstat::{
    check_dim, chol_upper, log_multigamma, positive_eigenvalues, sym_sqrt, SymEigen,
    SymPosDefMatrix,
};

/// Rank threshold for sampled matrices, looser than the linear-algebra default.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Parameters of `GIW_p(n, A, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GiwParams {
    n: f64,
    a: SymPosDefMatrix,
    s: SymPosDefMatrix,
}

impl GiwParams {
    pub fn new(n: f64, a: SymPosDefMatrix, s: SymPosDefMatrix) -> Result<Self> {
        check_dim(a.dim(), s.dim())?;
        let p = a.dim() as f64;
        if !(n > 2.0 * p) {
            return Err(Error::domain(format!("GIW degrees of freedom {n} must exceed 2p = {}", 2.0 * p)));
        }
        Ok(GiwParams { n, a, s })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn a(&self) -> &SymPosDefMatrix {
        &self.a
    }

    pub fn s(&self) -> &SymPosDefMatrix {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Parameters of the distribution of `X^{-1}`.
    pub fn inverse_params(&self) -> Result<GwParams> {
        let p = self.dim() as f64;
        GwParams::new(self.n - p - 1.0, self.a.inverse()?, self.s.inverse()?)
    }
}

/// Parameters of `GW_p(ν, A^{-1}, S^{-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct GwParams {
    nu: f64,
    a_inv: SymPosDefMatrix,
    s_inv: SymPosDefMatrix,
}

impl GwParams {
    pub fn new(nu: f64, a_inv: SymPosDefMatrix, s_inv: SymPosDefMatrix) -> Result<Self> {
        check_dim(a_inv.dim(), s_inv.dim())?;
        let p = a_inv.dim() as f64;
        if !(nu > p - 1.0) {
            return Err(Error::domain(format!("GW degrees of freedom {nu} must exceed p - 1 = {}", p - 1.0)));
        }
        Ok(GwParams { nu, a_inv, s_inv })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn a_inv(&self) -> &SymPosDefMatrix {
        &self.a_inv
    }

    pub fn s_inv(&self) -> &SymPosDefMatrix {
        &self.s_inv
    }

    pub fn dim(&self) -> usize {
        self.a_inv.dim()
    }
}

/// Parameters of the (possibly singular) matrix beta `B_p(m/2, n/2)`.
///
/// For `n < p` the matrix `I - B` has rank `n` and the distribution is singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularBetaParams {
    m: f64,
    n: usize,
    p: usize,
}

impl SingularBetaParams {
    pub fn new(m: f64, n: usize, p: usize) -> Result<Self> {
        if p == 0 || n == 0 {
            return Err(Error::domain("matrix beta needs p >= 1 and n >= 1"));
        }
        if !(m > p as f64 - 1.0) {
            return Err(Error::domain(format!("matrix beta m = {m} must exceed p - 1 = {}", p - 1)));
        }
        Ok(SingularBetaParams { m, n, p })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn is_singular(&self) -> bool {
        self.n < self.p
    }

    /// Rank of `I - B` under this distribution.
    pub fn rank(&self) -> usize {
        self.n.min(self.p)
    }

    fn log_norm_const(&self) -> Result<f64> {
        let (m, n, p) = (self.m, self.n as f64, self.p);
        let head = log_multigamma(p, (m + n) / 2.0)? - log_multigamma(p, m / 2.0)?;
        if self.is_singular() {
            Ok((n * n - p as f64 * n) / 2.0 * PI.ln() + head - log_multigamma(self.n, n / 2.0)?)
        } else {
            Ok(head - log_multigamma(p, n / 2.0)?)
        }
    }
}

struct Spectrum {
    log_det: f64,
    inv_sqrt: DMatrix<f64>,
}

fn spectrum(x: &SymPosDefMatrix) -> Result<Spectrum> {
    let eig = x.eigen();
    if !(eig.min() > 0.0) {
        return Err(Error::not_pd(format!("smallest eigenvalue {:e}", eig.min())));
    }
    Ok(Spectrum {
        log_det: eig.values.iter().map(|l| l.ln()).sum(),
        inv_sqrt: eig.map(|l| 1.0 / l.sqrt()),
    })
}

/// `tr(A B)` for symmetric `B`.
fn trace_prod_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Log-density of `GIW_p(n, A, S)` at `X`.
pub fn giw_logpdf(params: &GiwParams, x: &SymPosDefMatrix) -> Result<f64> {
    check_dim(params.dim(), x.dim())?;
    let p = params.dim();
    let pf = p as f64;
    let n = params.n;
    let h = (n - pf - 1.0) / 2.0;
    let sx = spectrum(x)?;
    let inner = &sx.inv_sqrt * params.s.as_matrix() * &sx.inv_sqrt;
    let tr = trace_prod_sym(params.a.as_matrix(), &inner);
    let value = h * (params.a.log_det() + params.s.log_det())
        - pf * h * LN_2
        - log_multigamma(p, h)?
        - n / 2.0 * sx.log_det
        - 0.5 * tr;
    finite(value)
}

/// Log-density of `GW_p(ν, A^{-1}, S^{-1})` at `Y`.
pub fn gw_logpdf(params: &GwParams, y: &SymPosDefMatrix) -> Result<f64> {
    check_dim(params.dim(), y.dim())?;
    let p = params.dim();
    let pf = p as f64;
    let nu = params.nu;
    let a = params.a_inv.inverse()?;
    let s = params.s_inv.inverse()?;
    let eig = y.eigen();
    if !(eig.min() > 0.0) {
        return Err(Error::not_pd(format!("smallest eigenvalue {:e}", eig.min())));
    }
    let log_det_y: f64 = eig.values.iter().map(|l| l.ln()).sum();
    let y_sqrt = eig.map(f64::sqrt);
    let inner = &y_sqrt * s.as_matrix() * &y_sqrt;
    let tr = trace_prod_sym(a.as_matrix(), &inner);
    let value = -nu / 2.0 * (params.a_inv.log_det() + params.s_inv.log_det())
        - pf * nu / 2.0 * LN_2
        - log_multigamma(p, nu / 2.0)?
        + (nu - pf - 1.0) / 2.0 * log_det_y
        - 0.5 * tr;
    finite(value)
}

/// `(E[X^{1/2} S^{-1} X^{1/2}], E[X^{-1/2} S X^{-1/2}]) = (A/(n-2p-2), (n-p-1) A^{-1})`.
pub fn giw_mean_quadforms(params: &GiwParams) -> Result<(SymPosDefMatrix, SymPosDefMatrix)> {
    let pf = params.dim() as f64;
    let denom = params.n - 2.0 * pf - 2.0;
    if !(denom > 0.0) {
        return Err(Error::domain(format!(
            "first moment needs n > 2p + 2, got n = {}",
            params.n
        )));
    }
    let first = params.a.scaled(1.0 / denom)?;
    let second = params.a.inverse()?.scaled(params.n - pf - 1.0)?;
    Ok((first, second))
}

/// `E|X|^ℓ` for `0 < ℓ < (n-2p)/2`.
pub fn giw_logdet_moment(params: &GiwParams, ell: f64) -> Result<f64> {
    let p = params.dim();
    let pf = p as f64;
    let n = params.n;
    if !(ell > 0.0 && ell < (n - 2.0 * pf) / 2.0) {
        return Err(Error::domain(format!(
            "moment order {ell} outside (0, {})",
            (n - 2.0 * pf) / 2.0
        )));
    }
    let log_value = -pf * ell * LN_2 + log_multigamma(p, (n - 2.0 * ell - pf - 1.0) / 2.0)?
        - log_multigamma(p, (n - pf - 1.0) / 2.0)?
        + ell * (params.a.log_det() + params.s.log_det());
    Ok(log_value.exp())
}

/// Symmetric point estimator of a GIW variate:
/// `(S^{1/2} A S^{1/2} + A^{1/2} S A^{1/2}) / (2n - 4p - 4)`.
pub fn giw_estimator(a: &SymPosDefMatrix, s: &SymPosDefMatrix, n: f64) -> Result<SymPosDefMatrix> {
    check_dim(a.dim(), s.dim())?;
    let a_sqrt = sym_sqrt(a)?;
    let s_sqrt = sym_sqrt(s)?;
    giw_estimator_with_roots(a, &a_sqrt, s, &s_sqrt, n)
}

/// As [`giw_estimator`] with both square roots supplied.
pub(crate) fn giw_estimator_with_roots(
    a: &SymPosDefMatrix,
    a_sqrt: &SymPosDefMatrix,
    s: &SymPosDefMatrix,
    s_sqrt: &SymPosDefMatrix,
    n: f64,
) -> Result<SymPosDefMatrix> {
    let pf = a.dim() as f64;
    let denom = 2.0 * n - 4.0 * pf - 4.0;
    if !(denom > 0.0) {
        return Err(Error::domain(format!("estimator needs n > 2p + 2, got n = {n}")));
    }
    let left = s_sqrt.as_matrix() * a.as_matrix() * s_sqrt.as_matrix();
    let right = a_sqrt.as_matrix() * s.as_matrix() * a_sqrt.as_matrix();
    Ok(SymPosDefMatrix::assume_pd((left + right) / denom))
}

/// Log-density of `B ~ B_p(m/2, n/2)`.
///
/// In the singular regime the density is taken with respect to the measure on
/// the manifold `rank(I - B) = n`, and `K` holds the positive eigenvalues of
/// `I - B`.
pub fn singular_beta_logpdf(params: &SingularBetaParams, b: &DMatrix<f64>) -> Result<f64> {
    let p = params.p;
    check_dim(p, b.nrows())?;
    check_dim(p, b.ncols())?;
    let eig_b = SymEigen::of(b);
    if !(eig_b.min() > 0.0) || eig_b.max() > 1.0 + RANK_REL_TOL {
        return Err(Error::domain("beta matrix spectrum must lie in (0, 1]"));
    }
    let complement = DMatrix::identity(p, p) - b;
    let k = positive_eigenvalues(&complement, RANK_REL_TOL);
    if k.len() != params.rank() {
        return Err(Error::RankMismatch {
            expected: params.rank(),
            found: k.len(),
        });
    }
    let (m, n, pf) = (params.m, params.n as f64, p as f64);
    let log_det_b: f64 = eig_b.values.iter().map(|l| l.ln()).sum();
    let log_det_k: f64 = k.iter().map(|l| l.ln()).sum();
    let value = params.log_norm_const()?
        + (n - pf - 1.0) / 2.0 * log_det_k
        + (m - pf - 1.0) / 2.0 * log_det_b;
    finite(value)
}

/// Log-density of `X = A B^{-1} A'` for `B ~ B_p(m/2, n/2)` and nonsingular `A`.
///
/// `B = A' X^{-1} A`, so the positive eigenvalues `L` of `I - A' X^{-1} A`
/// coincide with those of `I - B`. The change of variables contributes
/// `|A|^{p+1} |X|^{-(p+1)}`, which gives
///
/// ```text
/// c · |A|^m · |L|^{(n-p-1)/2} · |X|^{-(m+p+1)/2}
/// ```
///
/// and at `p = 1` is exactly the scalar transform `x = a²/b`.
pub fn transformed_beta_logpdf(
    params: &SingularBetaParams,
    a: &DMatrix<f64>,
    x: &SymPosDefMatrix,
) -> Result<f64> {
    let p = params.p;
    check_dim(p, x.dim())?;
    check_dim(p, a.nrows())?;
    check_dim(p, a.ncols())?;
    let log_abs_det_a = a.clone().lu().determinant().abs().ln();
    if !log_abs_det_a.is_finite() {
        return Err(Error::domain("transform matrix is singular"));
    }
    let x_inv = x.inverse()?;
    let b = a.transpose() * x_inv.as_matrix() * a;
    let complement = DMatrix::identity(p, p) - &b;
    if positive_eigenvalues(&complement, RANK_REL_TOL).is_empty() {
        return Err(Error::domain("I - A'X^{-1}A has no positive eigenvalues"));
    }
    let base = singular_beta_logpdf(params, &b)?;
    let pf = p as f64;
    finite(base + (pf + 1.0) * (log_abs_det_a - x.log_det()))
}

/// Draw from `W_p(df, I_p)` by the Bartlett construction; `df > p - 1` may be
/// non-integer.
pub fn sample_wishart<R: Rng + ?Sized>(rng: &mut R, df: f64, p: usize) -> Result<SymPosDefMatrix> {
    if p == 0 {
        return Err(Error::domain("Wishart dimension must be positive"));
    }
    if !(df > p as f64 - 1.0) {
        return Err(Error::domain(format!("Wishart df {df} must exceed p - 1 = {}", p - 1)));
    }
    let mut l = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::domain(format!("chi-square df: {e}")))?;
        let d: f64 = chi.sample(rng);
        if !(d > 0.0) {
            return Err(Error::not_pd("Bartlett diagonal underflowed to zero"));
        }
        l[(i, i)] = d.sqrt();
        for j in 0..i {
            l[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(SymPosDefMatrix::assume_pd(&l * l.transpose()))
}

/// Draw from `W_p(df, Σ)` as `C W C'` with `Σ = C C'`.
pub fn sample_wishart_scaled<R: Rng + ?Sized>(
    rng: &mut R,
    df: f64,
    scale: &SymPosDefMatrix,
) -> Result<SymPosDefMatrix> {
    let w = sample_wishart(rng, df, scale.dim())?;
    let c = chol_upper(scale)?.as_matrix().transpose();
    Ok(SymPosDefMatrix::assume_pd(&c * w.as_matrix() * c.transpose()))
}

/// Draw `B ~ B_p(m/2, n/2)` by the Wishart construction
/// `A₁ ~ W_p(m, I)`, `A₂ = Σ_{j≤n} Y_j Y_j'`, `C = A₁ + A₂`,
/// `B = 𝒰(C)'^{-1} A₁ 𝒰(C)^{-1}`.
///
/// `B` is formed as `I - W W'` with `W = 𝒰(C)'^{-1} [Y_1 … Y_n]`, which is the
/// same matrix and keeps `rank(I - B) = n` free of cancellation error.
pub fn sample_singular_beta<R: Rng + ?Sized>(
    rng: &mut R,
    params: &SingularBetaParams,
) -> Result<DMatrix<f64>> {
    let p = params.p;
    let a1 = sample_wishart(rng, params.m, p)?;
    let ys = DMatrix::<f64>::from_fn(p, params.n, |_, _| rng.sample(StandardNormal));
    let c = SymPosDefMatrix::assume_pd(a1.as_matrix() + &ys * ys.transpose());
    let u = chol_upper(&c)?;
    let w = u.solve_transpose(&ys);
    let b = DMatrix::identity(p, p) - &w * w.transpose();
    Ok(crate::matstat::symmetrize(b))
}

/// Standard-normal vector of length `p`.
pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(format!("log-density is not finite ({v})")))
    }
}
