//! Forward simulation of the state-space model with multiplicative precision
//! evolution.
//!
//! ```text
//! y_t = θ_t + Σ_t^{1/2} ε_t
//! θ_t = φ θ_{t-1} + Σ_t^{1/2} Ω^{1/2} z_t
//! Σ_t^{-1} = k 𝒰(Σ_{t-1}^{-1})' B_t 𝒰(Σ_{t-1}^{-1}),  B_t ~ B_p(m/2, 1/2)
//! ```
//!
//! The state innovation `Σ_t^{1/2} Ω^{1/2} z_t` has covariance
//! `Σ_t^{1/2} Ω Σ_t^{1/2}`, the same distribution as `Ω_t^{1/2} ω_t`.
//!
//! The precision is a positive martingale, so `log|Σ_t|` drifts upwards
//! almost surely and very long paths eventually leave the `f64` range. The
//! evolution is scale-equivariant; callers simulating far beyond a few
//! thousand steps should renormalize.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filter::{beta_dof_m, discount_k, ModelConfig};
use crate::gwishart::{sample_singular_beta, standard_normal_vec, SingularBetaParams};
use crate::matstat::{check_dim, chol_upper, psd_sqrt, sym_sqrt, SymPosDefMatrix, DEFAULT_REL_TOL};

/// Parameters of the data-generating process.
///
/// Unlike [`ModelConfig`], `Ω` only needs to be positive semidefinite; `Ω = 0`
/// gives the pure volatility model `y_t = θ + Σ_t^{1/2} ε_t`.
#[derive(Debug, Clone)]
pub struct SimModel {
    delta: f64,
    phi: f64,
    omega_sqrt: DMatrix<f64>,
    k: f64,
    beta: SingularBetaParams,
}

impl SimModel {
    pub fn new(delta: f64, phi: f64, omega: &DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() || omega.nrows() == 0 {
            return Err(Error::domain("Omega must be a non-empty square matrix"));
        }
        let p = omega.nrows();
        let k = discount_k(delta, p)?;
        let beta = SingularBetaParams::new(beta_dof_m(delta, p)?, 1, p)?;
        Ok(SimModel {
            delta,
            phi,
            omega_sqrt: psd_sqrt(omega, DEFAULT_REL_TOL)?,
            k,
            beta,
        })
    }

    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        SimModel::new(config.delta, config.phi, config.omega.as_matrix())
    }

    pub fn dim(&self) -> usize {
        self.omega_sqrt.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn beta_params(&self) -> &SingularBetaParams {
        &self.beta
    }
}

/// One precision transition together with the beta draw that produced it.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub sigma: SymPosDefMatrix,
    pub beta: DMatrix<f64>,
}

/// Draw `Σ_t` given `Σ_{t-1}`.
pub fn evolve_precision<R: Rng + ?Sized>(
    rng: &mut R,
    sigma_prev: &SymPosDefMatrix,
    model: &SimModel,
) -> Result<SymPosDefMatrix> {
    Ok(evolve_precision_with_beta(rng, sigma_prev, model)?.sigma)
}

pub fn evolve_precision_with_beta<R: Rng + ?Sized>(
    rng: &mut R,
    sigma_prev: &SymPosDefMatrix,
    model: &SimModel,
) -> Result<Evolution> {
    check_dim(model.dim(), sigma_prev.dim())?;
    let u = chol_upper(&sigma_prev.inverse()?)?;
    let beta = sample_singular_beta(rng, &model.beta)?;
    let prec = u.as_matrix().transpose() * &beta * u.as_matrix() * model.k;
    let sigma = SymPosDefMatrix::assume_pd(prec)
        .inverse()
        .map_err(|_| Error::not_pd("evolved precision is numerically singular"))?;
    Ok(Evolution { sigma, beta })
}

/// A simulated path; `sigmas` holds `Σ_0 … Σ_N`, the other series `t = 1 … N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub ys: Vec<DVector<f64>>,
    pub thetas: Vec<DVector<f64>>,
    pub sigmas: Vec<SymPosDefMatrix>,
    pub seed: Option<u64>,
}

pub fn simulate_path<R: Rng + ?Sized>(
    rng: &mut R,
    model: &SimModel,
    sigma0: &SymPosDefMatrix,
    theta0: &DVector<f64>,
    n_steps: usize,
) -> Result<SimPath> {
    let p = model.dim();
    check_dim(p, sigma0.dim())?;
    check_dim(p, theta0.len())?;
    if n_steps == 0 {
        return Err(Error::domain("simulation needs at least one step"));
    }
    let mut path = SimPath {
        ys: Vec::with_capacity(n_steps),
        thetas: Vec::with_capacity(n_steps),
        sigmas: Vec::with_capacity(n_steps + 1),
        seed: None,
    };
    path.sigmas.push(sigma0.clone());
    let mut theta = theta0.clone();
    for t in 1..=n_steps {
        let mut step = || -> Result<(SymPosDefMatrix, DVector<f64>, DVector<f64>)> {
            let sigma = evolve_precision(rng, &path.sigmas[t - 1], model)?;
            let root = sym_sqrt(&sigma)?;
            let z = standard_normal_vec(rng, p);
            let next_theta = &theta * model.phi + root.as_matrix() * (&model.omega_sqrt * z);
            let eps = standard_normal_vec(rng, p);
            let y = &next_theta + root.as_matrix() * eps;
            Ok((sigma, next_theta, y))
        };
        let (sigma, next_theta, y) = step().map_err(|e| e.at_step(t))?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("simulated observation overflowed").at_step(t));
        }
        theta = next_theta;
        path.sigmas.push(sigma);
        path.thetas.push(theta.clone());
        path.ys.push(y);
    }
    Ok(path)
}

/// [`simulate_path`] driven by a ChaCha8 generator seeded with `seed`.
pub fn simulate_seeded(
    seed: u64,
    model: &SimModel,
    sigma0: &SymPosDefMatrix,
    theta0: &DVector<f64>,
    n_steps: usize,
) -> Result<SimPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = simulate_path(&mut rng, model, sigma0, theta0, n_steps)?;
    path.seed = Some(seed);
    Ok(path)
}
