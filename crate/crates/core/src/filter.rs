//! Sequential volatility filter.
//!
//! The precision evolves as `Σ_t^{-1} = k 𝒰(Σ_{t-1}^{-1})' B_t 𝒰(Σ_{t-1}^{-1})`
//! with `B_t ~ B_p(m/2, 1/2)`, and the level follows a random walk plus noise
//! whose state covariance is `Σ_t^{1/2} Ω Σ_t^{1/2}`. Given the steady-state
//! `Q = P + Ω + I`, the posterior of `Σ_t` stays GIW with degrees of freedom
//! `(1-δ)^{-1} + 2p` and the recursion only needs `(m_t, P_t, S_t)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwishart::giw_estimator_with_roots;
use crate::likelihood::{step_terms, LikelihoodContext};
use crate::matstat::{
    check_dim, outer, sym_inv_sqrt, sym_sqrt, sym_sqrt_pair, SymPosDefMatrix, DEFAULT_REL_TOL,
};

/// Where the one-step forecast mean comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMeanMode {
    /// `f_t = m_{t-1}`.
    #[default]
    PaperVerbatim,
    /// `f_t = φ m_{t-1}`.
    PhiScaled,
}

/// Which `S` whitens the forecast error into `u_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationMode {
    /// `S_{t-1}`, i.e. the one-step forecast covariance.
    #[default]
    ForecastCov,
    /// `S_t`, the posterior sufficient statistic after the update.
    PaperVerbatimSt,
}

/// Fixed hyperparameters of one filter instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub delta: f64,
    pub phi: f64,
    pub omega: SymPosDefMatrix,
    pub m0: DVector<f64>,
    /// `P_0 = p0 I`.
    pub p0: f64,
    pub s0: SymPosDefMatrix,
    pub tol: f64,
    pub forecast_mean_mode: ForecastMeanMode,
    pub standardization_mode: StandardizationMode,
}

impl ModelConfig {
    /// Config with the default priors `m0 = 0`, `p0 = 1000`, `S0 = I`.
    pub fn new(delta: f64, phi: f64, omega: SymPosDefMatrix) -> Result<Self> {
        let p = omega.dim();
        let config = ModelConfig {
            delta,
            phi,
            omega,
            m0: DVector::zeros(p),
            p0: 1000.0,
            s0: SymPosDefMatrix::identity(p),
            tol: DEFAULT_REL_TOL,
            forecast_mean_mode: ForecastMeanMode::default(),
            standardization_mode: StandardizationMode::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_prior(mut self, m0: DVector<f64>, p0: f64, s0: SymPosDefMatrix) -> Result<Self> {
        self.m0 = m0;
        self.p0 = p0;
        self.s0 = s0;
        self.validate()?;
        Ok(self)
    }

    pub fn with_modes(mut self, mean: ForecastMeanMode, standardization: StandardizationMode) -> Self {
        self.forecast_mean_mode = mean;
        self.standardization_mode = standardization;
        self
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if !(self.delta > 2.0 / 3.0 && self.delta < 1.0) {
            return Err(Error::domain(format!(
                "discount factor delta = {} must satisfy 2/3 < delta < 1",
                self.delta
            )));
        }
        if !self.phi.is_finite() {
            return Err(Error::domain("phi must be finite"));
        }
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(Error::domain(format!("p0 = {} must be positive", self.p0)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::domain(format!("tolerance {} must lie in (0, 1)", self.tol)));
        }
        check_dim(p, self.m0.len())?;
        check_dim(p, self.s0.dim())?;
        let eig = self.omega.eigen();
        if !(eig.min() > self.tol * eig.max()) {
            return Err(Error::not_pd(format!(
                "Omega must be positive definite (smallest eigenvalue {:e})",
                eig.min()
            )));
        }
        Ok(())
    }
}

/// `k = {δ(1-p)+p} / {δ(2-p)+p-1}`.
pub fn discount_k(delta: f64, p: usize) -> Result<f64> {
    if !(delta > 2.0 / 3.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta = {delta} must satisfy 2/3 < delta < 1")));
    }
    let pf = p as f64;
    Ok((delta * (1.0 - pf) + pf) / (delta * (2.0 - pf) + pf - 1.0))
}

/// Degrees of freedom `m = δ/(1-δ) + p - 1` of the evolution beta.
pub fn beta_dof_m(delta: f64, p: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok(delta / (1.0 - delta) + p as f64 - 1.0)
}

/// Posterior GIW degrees of freedom `(1-δ)^{-1} + 2p`.
pub fn posterior_df(delta: f64, p: usize) -> f64 {
    1.0 / (1.0 - delta) + 2.0 * p as f64
}

/// One step of `P_t = R_t (R_t + I)^{-1}`, `R_t = φ² P_{t-1} + Ω`.
pub fn p_recursion(phi: f64, omega: &SymPosDefMatrix, p_prev: &SymPosDefMatrix) -> Result<SymPosDefMatrix> {
    check_dim(omega.dim(), p_prev.dim())?;
    let n = omega.dim();
    let r_plus_i = SymPosDefMatrix::assume_pd(
        p_prev.as_matrix() * (phi * phi) + omega.as_matrix() + DMatrix::identity(n, n),
    );
    // R (R+I)^{-1} = I - (R+I)^{-1}, which is symmetric
    let inv = r_plus_i.inverse()?;
    Ok(SymPosDefMatrix::assume_pd(DMatrix::identity(n, n) - inv.as_matrix()))
}

/// Limit of the `P_t` recursion, applied eigenvalue-wise to `Ω`.
///
/// Each eigenvalue `w` of `Ω` maps to the positive root of
/// `φ² P² + (w + 1 - φ²) P - w = 0`.
pub fn limit_p(phi: f64, omega: &SymPosDefMatrix) -> Result<SymPosDefMatrix> {
    let eig = omega.eigen();
    if !(eig.min() > 0.0) {
        return Err(Error::not_pd(format!(
            "Omega has non-positive eigenvalue {:e}",
            eig.min()
        )));
    }
    let phi2 = phi * phi;
    Ok(SymPosDefMatrix::assume_pd(eig.map(|w| {
        let b = w + 1.0 - phi2;
        2.0 * w / (b + (b * b + 4.0 * phi2 * w).sqrt())
    })))
}

/// Iterate the `P_t` recursion from `p0 I` until the max-abs change drops
/// below `tol`.
pub fn iterate_p_to_convergence(
    phi: f64,
    omega: &SymPosDefMatrix,
    p0: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SymPosDefMatrix> {
    let mut p = SymPosDefMatrix::identity(omega.dim()).scaled(p0)?;
    for _ in 0..max_iter {
        let next = p_recursion(phi, omega, &p)?;
        let change = (next.as_matrix() - p.as_matrix()).amax();
        p = next;
        if change < tol {
            return Ok(p);
        }
    }
    Err(Error::domain(format!(
        "P recursion did not converge within {max_iter} iterations"
    )))
}

/// `Q = P + Ω + I` with `P` the limit of the `P_t` recursion.
pub fn steady_q(config: &ModelConfig) -> Result<SymPosDefMatrix> {
    config.validate()?;
    let p = config.dim();
    let lim = limit_p(config.phi, &config.omega)?;
    Ok(SymPosDefMatrix::assume_pd(
        lim.as_matrix() + config.omega.as_matrix() + DMatrix::identity(p, p),
    ))
}

/// Sufficient statistics carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: usize,
    pub m: DVector<f64>,
    pub p: SymPosDefMatrix,
    pub s: SymPosDefMatrix,
    /// Point estimate `Ŝ(Q^{-1}, S_t)` of `Σ_t`; at `t = 0` the prior estimate.
    pub s_star: SymPosDefMatrix,
}

/// One-step predictive `t_p(dof, location, scale)`.
///
/// `covariance = scale / (dof - 2)`, the multivariate-t convention in which
/// the scale matrix is not pre-multiplied by `dof`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDist {
    pub dof: f64,
    pub location: DVector<f64>,
    pub scale: SymPosDefMatrix,
    pub covariance: SymPosDefMatrix,
}

/// Per-step output of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub forecast: ForecastDist,
    /// One-step forecast error `e_t = y_t - f_t`.
    pub e: DVector<f64>,
    /// Standardized forecast error.
    pub u: DVector<f64>,
    /// Posterior point estimate of `Σ_t`.
    pub s_star: SymPosDefMatrix,
    /// This step's contribution to the log-likelihood, constant included.
    /// NaN when `I - k^{-1}...` has no positive eigenvalue (e.g. `e_t = 0`).
    pub loglik: f64,
}

/// Output of a full pass over a series.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub records: Vec<StepRecord>,
    pub state: FilterState,
    /// Sum of the per-step contributions in time order.
    pub loglik: f64,
}

/// A validated configuration with everything that stays fixed across steps.
#[derive(Debug, Clone)]
pub struct VolFilter {
    config: ModelConfig,
    k: f64,
    post_df: f64,
    q_inv: SymPosDefMatrix,
    q_inv_sqrt: SymPosDefMatrix,
    lik: LikelihoodContext,
}

impl VolFilter {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let q = steady_q(&config)?;
        Self::with_q(config, q)
    }

    /// Use a caller-supplied `Q` instead of the steady-state limit.
    pub fn with_q(config: ModelConfig, q: SymPosDefMatrix) -> Result<Self> {
        config.validate()?;
        let p = config.dim();
        check_dim(p, q.dim())?;
        let k = discount_k(config.delta, p)?;
        let q_inv = q.inverse()?;
        let q_inv_sqrt = sym_sqrt(&q_inv)?;
        let lik = LikelihoodContext::new(config.delta, q)?;
        Ok(VolFilter {
            post_df: posterior_df(config.delta, p),
            config,
            k,
            q_inv,
            q_inv_sqrt,
            lik,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn q(&self) -> &SymPosDefMatrix {
        self.lik.q()
    }

    pub fn posterior_df(&self) -> f64 {
        self.post_df
    }

    pub fn likelihood_context(&self) -> &LikelihoodContext {
        &self.lik
    }

    /// `Ŝ(Q^{-1}, S)` with the posterior degrees of freedom.
    pub fn point_estimate(&self, s: &SymPosDefMatrix) -> Result<SymPosDefMatrix> {
        let s_sqrt = sym_sqrt(s)?;
        giw_estimator_with_roots(&self.q_inv, &self.q_inv_sqrt, s, &s_sqrt, self.post_df)
    }

    pub fn init(&self) -> Result<FilterState> {
        let c = &self.config;
        Ok(FilterState {
            t: 0,
            m: c.m0.clone(),
            p: SymPosDefMatrix::identity(c.dim()).scaled(c.p0)?,
            s: c.s0.clone(),
            s_star: self.point_estimate(&c.s0)?,
        })
    }

    /// Forecast covariance factor `(1-δ) / ((3δ-2) k)` applied to `S_{t-1}`.
    fn cov_factor(&self) -> f64 {
        let d = self.config.delta;
        (1.0 - d) / ((3.0 * d - 2.0) * self.k)
    }

    pub fn step(&self, state: &FilterState, y: &DVector<f64>) -> Result<(FilterState, StepRecord)> {
        let c = &self.config;
        let p = c.dim();
        check_dim(p, y.len())?;
        check_dim(p, state.m.len())?;
        let t = state.t + 1;
        let delta = c.delta;

        let f = match c.forecast_mean_mode {
            ForecastMeanMode::PaperVerbatim => state.m.clone(),
            ForecastMeanMode::PhiScaled => &state.m * c.phi,
        };
        let e = y - &f;

        let s = SymPosDefMatrix::assume_pd(state.s.as_matrix() / self.k + outer(&e));
        let p_next = p_recursion(c.phi, &c.omega, &state.p)?;
        let s_sqrt = sym_sqrt(&s)?;
        let s_star = giw_estimator_with_roots(&self.q_inv, &self.q_inv_sqrt, &s, &s_sqrt, self.post_df)?;
        let (ss_sqrt, ss_inv_sqrt) = sym_sqrt_pair(&s_star)?;
        let gain = ss_sqrt.as_matrix() * p_next.as_matrix() * ss_inv_sqrt.as_matrix();
        let m = &f + gain * &e;

        let covariance = state.s.scaled(self.cov_factor())?;
        let whitening = match c.standardization_mode {
            StandardizationMode::ForecastCov => sym_inv_sqrt(&covariance)?,
            StandardizationMode::PaperVerbatimSt => sym_inv_sqrt(&s.scaled(self.cov_factor())?)?,
        };
        let u = whitening.as_matrix() * &e;

        // L_t is empty when e_t = 0 exactly; the contribution is then undefined
        let loglik = match step_terms(&self.lik, &state.s_star, &s_star, &e) {
            Ok(terms) => terms.contribution(&self.lik),
            Err(Error::Domain(_)) => f64::NAN,
            Err(err) => return Err(err),
        };

        let forecast = ForecastDist {
            dof: delta / (1.0 - delta),
            location: f,
            scale: state.s.scaled(1.0 / self.k)?,
            covariance,
        };
        let record = StepRecord {
            t,
            forecast,
            e,
            u,
            s_star: s_star.clone(),
            loglik,
        };
        let next = FilterState {
            t,
            m,
            p: p_next,
            s,
            s_star,
        };
        Ok((next, record))
    }

    pub fn run(&self, ys: &[DVector<f64>]) -> Result<FilterRun> {
        let mut state = self.init()?;
        let mut records = Vec::with_capacity(ys.len());
        let mut loglik = 0.0;
        for y in ys {
            let (next, record) = self.step(&state, y).map_err(|e| e.at_step(state.t + 1))?;
            loglik += record.loglik;
            records.push(record);
            state = next;
        }
        Ok(FilterRun {
            records,
            state,
            loglik,
        })
    }
}

pub fn filter_init(config: &ModelConfig) -> Result<FilterState> {
    VolFilter::new(config.clone())?.init()
}

pub fn filter_step(
    state: &FilterState,
    y: &DVector<f64>,
    config: &ModelConfig,
    q: &SymPosDefMatrix,
) -> Result<(FilterState, StepRecord)> {
    VolFilter::with_q(config.clone(), q.clone())?.step(state, y)
}

pub fn filter_run(ys: &[DVector<f64>], config: &ModelConfig) -> Result<FilterRun> {
    VolFilter::new(config.clone())?.run(ys)
}
