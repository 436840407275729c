//! Closed-form log-likelihood of a volatility path and forecast diagnostics.
//!
//! For a path `Σ_0, …, Σ_N` and forecast errors `e_1, …, e_N`
//!
//! ```text
//! ℓ = c − ½ Σ e_t' Σ_t^{-1/2} Q Σ_t^{-1/2} e_t
//!       − (2δ−1)/(1−δ) Σ log|𝒰(Σ_{t-1}^{-1})|
//!       − p/2 Σ log|L_t|
//!       − (3δ−2)/(2(1−δ)) Σ log|Σ_t|
//! ```
//!
//! where `L_t` collects the positive eigenvalues of
//! `I − k^{-1} 𝒰(Σ_{t-1}^{-1})'^{-1} Σ_t^{-1} 𝒰(Σ_{t-1}^{-1})^{-1}` and
//! `c = N·[−p log π − ½ log|Q| − (p/2) log k + log Γ_p(a₁) − log Γ_p(a₂)]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{discount_k, filter_run, FilterRun, ModelConfig, StepRecord, VolFilter};
use crate::gwishart::RANK_REL_TOL;
use crate::matstat::{check_dim, chol_upper, log_multigamma, positive_eigenvalues, SymPosDefMatrix};

/// Quantities of the likelihood that do not change over time.
#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    delta: f64,
    k: f64,
    q: SymPosDefMatrix,
    const_per_step: f64,
}

impl LikelihoodContext {
    pub fn new(delta: f64, q: SymPosDefMatrix) -> Result<Self> {
        let p = q.dim();
        let k = discount_k(delta, p)?;
        let const_per_step = constant_per_step(delta, p, k, &q)?;
        Ok(LikelihoodContext {
            delta,
            k,
            q,
            const_per_step,
        })
    }

    pub fn q(&self) -> &SymPosDefMatrix {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn constant_per_step(&self) -> f64 {
        self.const_per_step
    }

    fn chol_coef(&self) -> f64 {
        (2.0 * self.delta - 1.0) / (1.0 - self.delta)
    }

    fn sigma_coef(&self) -> f64 {
        (3.0 * self.delta - 2.0) / (2.0 * (1.0 - self.delta))
    }
}

fn constant_per_step(delta: f64, p: usize, k: f64, q: &SymPosDefMatrix) -> Result<f64> {
    let pf = p as f64;
    let a1 = (delta * (1.0 - pf) + pf) / (2.0 * (1.0 - delta));
    let a2 = (delta * (2.0 - pf) + pf - 1.0) / (2.0 * (1.0 - delta));
    Ok(-pf * PI.ln() - 0.5 * q.log_det() - pf / 2.0 * k.ln() + log_multigamma(p, a1)?
        - log_multigamma(p, a2)?)
}

/// Raw per-step ingredients, before the coefficients are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerms {
    /// `e_t' Σ_t^{-1/2} Q Σ_t^{-1/2} e_t`.
    pub quad: f64,
    /// `log|𝒰(Σ_{t-1}^{-1})|`.
    pub log_det_chol_prev: f64,
    /// `log|L_t|`.
    pub log_det_l: f64,
    /// `log|Σ_t|`.
    pub log_det_sigma: f64,
    /// Number of eigenvalues kept in `L_t`.
    pub rank_l: usize,
}

impl StepTerms {
    /// Contribution of this step to the log-likelihood, constant included.
    pub fn contribution(&self, ctx: &LikelihoodContext) -> f64 {
        let p = ctx.dim() as f64;
        ctx.const_per_step - 0.5 * self.quad - ctx.chol_coef() * self.log_det_chol_prev
            - p / 2.0 * self.log_det_l
            - ctx.sigma_coef() * self.log_det_sigma
    }
}

/// Evaluate the step ingredients for the transition `Σ_{t-1} → Σ_t` with
/// forecast error `e_t`.
pub fn step_terms(
    ctx: &LikelihoodContext,
    sigma_prev: &SymPosDefMatrix,
    sigma: &SymPosDefMatrix,
    e: &DVector<f64>,
) -> Result<StepTerms> {
    let p = ctx.dim();
    check_dim(p, sigma_prev.dim())?;
    check_dim(p, sigma.dim())?;
    check_dim(p, e.len())?;

    let u_prev = chol_upper(&sigma_prev.inverse()?)?;
    let eig = sigma.eigen();
    if !(eig.min() > 0.0) {
        return Err(Error::not_pd(format!(
            "volatility matrix has eigenvalue {:e}",
            eig.min()
        )));
    }
    let log_det_sigma: f64 = eig.values.iter().map(|l| l.ln()).sum();
    let inv_sqrt = eig.map(|l| 1.0 / l.sqrt());
    let prec = eig.map(|l| 1.0 / l);

    // I - k^{-1} U'^{-1} Σ_t^{-1} U^{-1}
    let inner = u_prev.right_solve(&u_prev.solve_transpose(&prec));
    let m = DMatrix::identity(p, p) - inner / ctx.k;
    let l = positive_eigenvalues(&m, l_threshold(sigma_prev, eig.min()));
    if l.is_empty() {
        return Err(Error::domain("L_t has no positive eigenvalues"));
    }
    let v = inv_sqrt * e;
    Ok(StepTerms {
        quad: ctx.q.quad_form(&v),
        log_det_chol_prev: u_prev.log_det(),
        log_det_l: l.iter().map(|x| x.ln()).sum(),
        log_det_sigma,
        rank_l: l.len(),
    })
}

/// Relative cut-off for the eigenvalues kept in `L_t`.
///
/// The inner matrix carries round-off of order `p ε ‖Σ_{t-1}‖ ‖Σ_t^{-1}‖`;
/// eigenvalues above that level are genuine and are kept even when smaller
/// than [`RANK_REL_TOL`], which serves as the ceiling. At `p = 1` the single
/// eigenvalue is `e_t² / S_t`, which routinely drops below `1e-8`.
fn l_threshold(sigma_prev: &SymPosDefMatrix, sigma_min_eig: f64) -> f64 {
    let p = sigma_prev.dim() as f64;
    let roundoff = 64.0 * p * f64::EPSILON * sigma_prev.trace() / sigma_min_eig;
    roundoff.min(RANK_REL_TOL)
}

/// Full decomposition of the log-likelihood of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBreakdown {
    pub total: f64,
    pub constant_c: f64,
    pub quad_term: f64,
    pub chol_logdet_term: f64,
    pub lt_term: f64,
    pub sigma_logdet_term: f64,
    pub per_step: Vec<f64>,
}

/// The constant `c` for `n_steps` observations.
pub fn loglik_constant(config: &ModelConfig, q: &SymPosDefMatrix, n_steps: usize) -> Result<f64> {
    config.validate()?;
    check_dim(config.dim(), q.dim())?;
    let k = discount_k(config.delta, config.dim())?;
    Ok(n_steps as f64 * constant_per_step(config.delta, config.dim(), k, q)?)
}

/// Log-likelihood of `Σ_1 … Σ_N` given `Σ_0` (first element of `sigmas`)
/// and the forecast errors.
pub fn loglik_path(
    sigmas: &[SymPosDefMatrix],
    es: &[DVector<f64>],
    config: &ModelConfig,
    q: &SymPosDefMatrix,
) -> Result<LikelihoodBreakdown> {
    config.validate()?;
    check_dim(config.dim(), q.dim())?;
    if sigmas.len() != es.len() + 1 {
        return Err(Error::domain(format!(
            "need N + 1 = {} volatility matrices, got {}",
            es.len() + 1,
            sigmas.len()
        )));
    }
    let ctx = LikelihoodContext::new(config.delta, q.clone())?;
    breakdown(&ctx, sigmas, es)
}

fn breakdown(
    ctx: &LikelihoodContext,
    sigmas: &[SymPosDefMatrix],
    es: &[DVector<f64>],
) -> Result<LikelihoodBreakdown> {
    let p = ctx.dim() as f64;
    let mut out = LikelihoodBreakdown {
        total: 0.0,
        constant_c: es.len() as f64 * ctx.const_per_step,
        quad_term: 0.0,
        chol_logdet_term: 0.0,
        lt_term: 0.0,
        sigma_logdet_term: 0.0,
        per_step: Vec::with_capacity(es.len()),
    };
    for (i, e) in es.iter().enumerate() {
        let terms = step_terms(ctx, &sigmas[i], &sigmas[i + 1], e).map_err(|err| err.at_step(i + 1))?;
        out.quad_term -= 0.5 * terms.quad;
        out.chol_logdet_term -= ctx.chol_coef() * terms.log_det_chol_prev;
        out.lt_term -= p / 2.0 * terms.log_det_l;
        out.sigma_logdet_term -= ctx.sigma_coef() * terms.log_det_sigma;
        let contribution = terms.contribution(ctx);
        out.total += contribution;
        out.per_step.push(contribution);
    }
    Ok(out)
}

/// The volatility path the filter produces: the prior estimate followed by
/// `S_t*` for every step.
pub fn plug_in_path(initial: &SymPosDefMatrix, records: &[StepRecord]) -> Vec<SymPosDefMatrix> {
    std::iter::once(initial.clone())
        .chain(records.iter().map(|r| r.s_star.clone()))
        .collect()
}

/// Log-likelihood evaluated at the filter's posterior point estimates.
pub fn loglik_at_filter_path(ys: &[DVector<f64>], config: &ModelConfig) -> Result<LikelihoodBreakdown> {
    let filter = VolFilter::new(config.clone())?;
    let run = filter.run(ys)?;
    loglik_of_run(&filter, &run)
}

/// Breakdown for a run that has already been computed with `filter`.
pub fn loglik_of_run(filter: &VolFilter, run: &FilterRun) -> Result<LikelihoodBreakdown> {
    let sigmas = plug_in_path(&filter.init()?.s_star, &run.records);
    let es: Vec<_> = run.records.iter().map(|r| r.e.clone()).collect();
    breakdown(filter.likelihood_context(), &sigmas, &es)
}

/// Convenience wrapper returning the total only.
pub fn loglik_total(ys: &[DVector<f64>], config: &ModelConfig) -> Result<f64> {
    Ok(filter_run(ys, config)?.loglik)
}

/// Forecast accuracy measures, one entry per series coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub mse: Vec<f64>,
    pub msse: Vec<f64>,
    pub mad: Vec<f64>,
    pub me: Vec<f64>,
    pub n_obs: usize,
}

pub fn perf_metrics(records: &[StepRecord]) -> Result<PerfReport> {
    let first = records.first().ok_or(Error::EmptyInput)?;
    let errors: Vec<&DVector<f64>> = records.iter().map(|r| &r.e).collect();
    let standardized: Vec<&DVector<f64>> = records.iter().map(|r| &r.u).collect();
    perf_from_errors(&errors, &standardized, first.e.len())
}

/// Same measures from raw `e_t` and `u_t` sequences.
pub fn perf_from_errors(
    errors: &[&DVector<f64>],
    standardized: &[&DVector<f64>],
    p: usize,
) -> Result<PerfReport> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_dim(errors.len(), standardized.len())?;
    let n = errors.len() as f64;
    let mut report = PerfReport {
        mse: vec![0.0; p],
        msse: vec![0.0; p],
        mad: vec![0.0; p],
        me: vec![0.0; p],
        n_obs: errors.len(),
    };
    for (e, u) in errors.iter().zip(standardized) {
        check_dim(p, e.len())?;
        check_dim(p, u.len())?;
        for j in 0..p {
            report.mse[j] += e[j] * e[j];
            report.msse[j] += u[j] * u[j];
            report.mad[j] += e[j].abs();
            report.me[j] += e[j];
        }
    }
    for v in [&mut report.mse, &mut report.msse, &mut report.mad, &mut report.me] {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::steady_q;
    use crate::matstat::ln_gamma;

    fn config(p: usize) -> ModelConfig {
        ModelConfig::new(0.7, 1.0, SymPosDefMatrix::identity(p)).unwrap()
    }

    #[test]
    fn constant_scalar_substitution() {
        let c = config(1);
        let q = steady_q(&c).unwrap();
        let delta: f64 = 0.7;
        let expect = -PI.ln() - 0.5 * q[(0, 0)].ln() - 0.5 * (1.0 / delta).ln()
            + ln_gamma(1.0 / 0.6)
            - ln_gamma(0.7 / 0.6);
        assert!((loglik_constant(&c, &q, 1).unwrap() - expect).abs() < 1e-12);
        assert_eq!(loglik_constant(&c, &q, 0).unwrap(), 0.0);
        let c3 = config(3);
        let q3 = steady_q(&c3).unwrap();
        let one = loglik_constant(&c3, &q3, 17).unwrap();
        let two = loglik_constant(&c3, &q3, 34).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-10 * one.abs());
    }

    #[test]
    fn zero_errors_give_zero_quadratic_term() {
        let c = config(2);
        let q = steady_q(&c).unwrap();
        let s0 = SymPosDefMatrix::identity(2);
        let s1 = SymPosDefMatrix::from_diagonal(&[2.0, 0.9]).unwrap();
        let s2 = SymPosDefMatrix::from_diagonal(&[1.0, 3.0]).unwrap();
        let es = vec![DVector::zeros(2), DVector::zeros(2)];
        let b = loglik_path(&[s0, s1, s2], &es, &c, &q).unwrap();
        assert_eq!(b.quad_term, 0.0);
        let parts = b.constant_c + b.quad_term + b.chol_logdet_term + b.lt_term + b.sigma_logdet_term;
        assert!((b.total - parts).abs() < 1e-9);
    }

    #[test]
    fn path_length_and_degenerate_l() {
        let c = config(1);
        let q = steady_q(&c).unwrap();
        let s = SymPosDefMatrix::identity(1);
        assert!(loglik_path(&[s.clone()], &[DVector::zeros(1)], &c, &q).is_err());
        // Σ_1 = Σ_0 / k makes the L matrix vanish
        let shrunk = s.scaled(0.7).unwrap();
        let err = loglik_path(&[s, shrunk], &[DVector::zeros(1)], &c, &q).unwrap_err();
        assert_eq!(err.step(), Some(1));
    }

    #[test]
    fn perf_single_observation() {
        let e = DVector::from_vec(vec![1.0, -2.0]);
        let u = DVector::from_vec(vec![0.5, 0.25]);
        let r = perf_from_errors(&[&e], &[&u], 2).unwrap();
        assert_eq!(r.me, vec![1.0, -2.0]);
        assert_eq!(r.mse, vec![1.0, 4.0]);
        assert_eq!(r.mad, vec![1.0, 2.0]);
        assert_eq!(r.msse, vec![0.25, 0.0625]);
        let z = DVector::zeros(2);
        let r = perf_from_errors(&[&z, &z], &[&z, &z], 2).unwrap();
        assert!(r.mse.iter().chain(&r.msse).chain(&r.mad).chain(&r.me).all(|x| *x == 0.0));
        assert_eq!(perf_metrics(&[]), Err(Error::EmptyInput));
    }
}
