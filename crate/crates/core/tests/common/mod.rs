//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the density or filter code under test; the oracles
//! are written from the textbook formulas with plain scalar arithmetic or
//! generic nalgebra factorizations.
#![allow(dead_code)]

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use giwvol::SymPosDefMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Well-conditioned random SPD matrix `G G'/p + c I`.
pub fn random_spd<R: Rng>(rng: &mut R, p: usize, ridge: f64) -> SymPosDefMatrix {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymPosDefMatrix::new(&g * g.transpose() / p as f64 + DMatrix::identity(p, p) * ridge).unwrap()
}

pub fn random_diag<R: Rng>(rng: &mut R, p: usize, lo: f64, hi: f64) -> SymPosDefMatrix {
    let d: Vec<f64> = (0..p).map(|_| rng.random_range(lo..hi)).collect();
    SymPosDefMatrix::from_diagonal(&d).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// `ln Γ_p(a)` from its defining product.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln() + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

fn chol_logdet(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().expect("SPD").l();
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverted-Wishart log-density in the convention where `X ~ IW_p(n, Ψ)` has
/// density `∝ |X|^{-n/2} exp(-½ tr(Ψ X^{-1}))`, i.e. `ν = n - p - 1` in the
/// more common parameterization.
pub fn iw_logpdf(n: f64, psi: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let p = x.nrows();
    let nu = n - p as f64 - 1.0;
    let x_inv = x.clone().cholesky().expect("SPD").inverse();
    nu / 2.0 * chol_logdet(psi) - nu * p as f64 / 2.0 * LN_2 - ln_multigamma(p, nu / 2.0)
        - n / 2.0 * chol_logdet(x)
        - 0.5 * (psi * x_inv).trace()
}

/// Wishart `W_p(ν, Σ)` log-density.
pub fn wishart_logpdf(nu: f64, sigma: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let p = y.nrows() as f64;
    let sigma_inv = sigma.clone().cholesky().expect("SPD").inverse();
    (nu - p - 1.0) / 2.0 * chol_logdet(y) - 0.5 * (sigma_inv * y).trace()
        - nu * p / 2.0 * LN_2
        - nu / 2.0 * chol_logdet(sigma)
        - ln_multigamma(y.nrows(), nu / 2.0)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫_0^∞ exp(logf(x)) dx` through `x = e^t`, truncated where the integrand in
/// `t` falls 60 nats below its maximum.
pub fn integrate_positive_line<F: Fn(f64) -> f64>(logf: F, tol: f64) -> f64 {
    let g = |t: f64| logf(t.exp()) + t;
    let grid: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.02).collect();
    let (t_max, g_max) = grid
        .iter()
        .map(|&t| (t, g(t)))
        .filter(|(_, v)| v.is_finite())
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut lo = t_max;
    while g(lo) > g_max - 60.0 {
        lo -= 0.5;
    }
    let mut hi = t_max;
    while g(hi) > g_max - 60.0 {
        hi += 0.5;
    }
    let h = |t: f64| (g(t) - g_max).exp();
    // split at the mode so the peak is resolved
    (simpson(&h, lo, t_max, tol) + simpson(&h, t_max, hi, tol)) * g_max.exp()
}

/// Two-sided one-sample Kolmogorov–Smirnov statistic for sorted data.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov survival function `P(√n D > x)`.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let x = d * (n as f64).sqrt();
    let s: f64 = (1..=100)
        .map(|j| {
            let j = j as f64;
            2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * x * x).exp()
        })
        .sum();
    s.clamp(0.0, 1.0)
}

/// CDF values at each sorted point, by integrating `exp(logf)` from `0`.
pub fn cdf_from_logpdf(sorted: &[f64], logf: impl Fn(f64) -> f64, tol: f64) -> Vec<f64> {
    let total = integrate_positive_line(&logf, tol);
    let f = |x: f64| if x > 0.0 { logf(x).exp() } else { 0.0 };
    // integrate in log-space from a point far in the left tail
    let g = |t: f64| f(t.exp()) * t.exp();
    let mut t_prev = sorted[0].ln() - 40.0;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(sorted.len());
    for &x in sorted {
        let t = x.ln();
        acc += simpson(&g, t_prev, t, tol);
        out.push(acc / total);
        t_prev = t;
    }
    out
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Scalar reference for the filter and its likelihood.
pub struct ScalarOracle {
    pub delta: f64,
    pub phi: f64,
    pub w: f64,
    pub m0: f64,
    pub p0: f64,
    pub s0: f64,
    pub phi_scaled_mean: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarStep {
    pub f: f64,
    pub e: f64,
    pub u: f64,
    pub s_star: f64,
    pub loglik: f64,
    /// The single eigenvalue of `L_t`, `e_t² / S_t`.
    pub l: f64,
}

impl ScalarOracle {
    pub fn new(delta: f64, phi: f64, w: f64) -> Self {
        ScalarOracle { delta, phi, w, m0: 0.0, p0: 1000.0, s0: 1.0, phi_scaled_mean: false }
    }

    pub fn k(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn q(&self) -> f64 {
        let phi2 = self.phi * self.phi;
        // positive root of φ²P² + (w + 1 - φ²)P - w = 0
        let (a, b, c) = (phi2, self.w + 1.0 - phi2, -self.w);
        let p_lim = if a == 0.0 { -c / b } else { (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a) };
        p_lim + self.w + 1.0
    }

    pub fn run(&self, ys: &[f64]) -> Vec<ScalarStep> {
        let d = self.delta;
        let k = self.k();
        let q = self.q();
        let n = 1.0 / (1.0 - d) + 2.0;
        let est = |s: f64| s / q / (n - 4.0);
        let a1 = 1.0 / (2.0 * (1.0 - d));
        let a2 = d / (2.0 * (1.0 - d));
        let c1 = -PI.ln() - 0.5 * q.ln() - 0.5 * k.ln() + ln_gamma(a1) - ln_gamma(a2);

        let (mut m, mut pp, mut s) = (self.m0, self.p0, self.s0);
        let mut sig_prev = est(s);
        let mut out = Vec::with_capacity(ys.len());
        for &y in ys {
            let f = if self.phi_scaled_mean { self.phi * m } else { m };
            let e = y - f;
            let cov = (1.0 - d) * s / ((3.0 * d - 2.0) * k);
            let u = e / cov.sqrt();
            let s_new = s / k + e * e;
            pp = 1.0 - 1.0 / (self.phi * self.phi * pp + self.w + 1.0);
            let sig = est(s_new);
            m = f + pp * e;

            let quad = e * e * q / sig;
            let log_u_prev = -0.5 * sig_prev.ln();
            // 1 - σ_{t-1}/(k σ_t) with σ ∝ S, free of cancellation
            let l = e * e / s_new;
            let loglik = c1 - 0.5 * quad - (2.0 * d - 1.0) / (1.0 - d) * log_u_prev - 0.5 * l.ln()
                - (3.0 * d - 2.0) / (2.0 * (1.0 - d)) * sig.ln();
            out.push(ScalarStep { f, e, u, s_star: sig, loglik, l });
            s = s_new;
            sig_prev = sig;
        }
        out
    }
}

/// Independent scalar simulation of the model with `p = 1`.
pub fn scalar_path(seed: u64, delta: f64, phi: f64, w: f64, n: usize) -> Vec<f64> {
    use rand_distr::{Beta, Distribution};
    let mut rng = rng(seed);
    let m = delta / (1.0 - delta);
    let beta = Beta::new(m / 2.0, 0.5).unwrap();
    let mut sigma = 1.0f64;
    let mut theta = 0.0;
    (0..n)
        .map(|_| {
            sigma = delta * sigma / beta.sample(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            let eps: f64 = rng.sample(StandardNormal);
            theta = phi * theta + sigma.sqrt() * w.sqrt() * z;
            theta + sigma.sqrt() * eps
        })
        .collect()
}

pub fn to_vectors(xs: &[f64]) -> Vec<DVector<f64>> {
    xs.iter().map(|&x| DVector::from_element(1, x)).collect()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}
