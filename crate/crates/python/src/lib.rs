//! Python bindings. Vectors cross the boundary as lists of floats and
//! matrices as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use giwvol::gwishart::{giw_logpdf as core_giw_logpdf, GiwParams};
use giwvol::likelihood::{loglik_of_run, perf_metrics, LikelihoodBreakdown, PerfReport};
use giwvol::search::{coordinate_search, Objective, SearchSpec};
use giwvol::simulate::{simulate_seeded, SimModel};
use giwvol::{
    FilterRun, ForecastMeanMode, ModelConfig, StandardizationMode, SymPosDefMatrix, VolFilter,
};

create_exception!(giwvol_py, GiwvolError, PyValueError, "Raised by the giwvol kernels.");

fn err(e: giwvol::Error) -> PyErr {
    GiwvolError::new_err(e.to_string())
}

fn value_err(msg: impl Into<String>) -> PyErr {
    PyValueError::new_err(msg.into())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(value_err("expected a non-empty square matrix given as a list of rows"));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

fn to_spd(rows: &[Vec<f64>]) -> PyResult<SymPosDefMatrix> {
    SymPosDefMatrix::new(to_matrix(rows)?).map_err(err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn series(ys: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    ys.into_iter().map(DVector::from_vec).collect()
}

/// `Ω` given either as its diagonal or as a full matrix.
#[derive(FromPyObject)]
enum OmegaArg {
    Full(Vec<Vec<f64>>),
    Diag(Vec<f64>),
}

impl OmegaArg {
    fn spd(&self) -> PyResult<SymPosDefMatrix> {
        match self {
            OmegaArg::Full(m) => to_spd(m),
            OmegaArg::Diag(d) => SymPosDefMatrix::from_diagonal(d).map_err(err),
        }
    }
}

fn mean_mode(s: &str) -> PyResult<ForecastMeanMode> {
    match s {
        "paper_verbatim" => Ok(ForecastMeanMode::PaperVerbatim),
        "phi_scaled" => Ok(ForecastMeanMode::PhiScaled),
        _ => Err(value_err(format!("unknown forecast_mean '{s}'"))),
    }
}

fn std_mode(s: &str) -> PyResult<StandardizationMode> {
    match s {
        "forecast_cov" => Ok(StandardizationMode::ForecastCov),
        "paper_verbatim_st" => Ok(StandardizationMode::PaperVerbatimSt),
        _ => Err(value_err(format!("unknown standardization '{s}'"))),
    }
}

/// Hyperparameters of the filter.
#[pyclass(name = "ModelConfig", module = "giwvol_py", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (delta, omega, phi=1.0, m0=None, p0=None, s0=None,
                        forecast_mean="paper_verbatim", standardization="forecast_cov"))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        delta: f64,
        omega: OmegaArg,
        phi: f64,
        m0: Option<Vec<f64>>,
        p0: Option<f64>,
        s0: Option<Vec<Vec<f64>>>,
        forecast_mean: &str,
        standardization: &str,
    ) -> PyResult<Self> {
        let mut config = ModelConfig::new(delta, phi, omega.spd()?).map_err(err)?;
        if m0.is_some() || p0.is_some() || s0.is_some() {
            let m0 = m0.map_or(config.m0.clone(), DVector::from_vec);
            let s0 = match s0 {
                Some(s) => to_spd(&s)?,
                None => config.s0.clone(),
            };
            let p0 = p0.unwrap_or(config.p0);
            config = config.with_prior(m0, p0, s0).map_err(err)?;
        }
        let config = config.with_modes(mean_mode(forecast_mean)?, std_mode(standardization)?);
        Ok(PyModelConfig { inner: config })
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn omega(&self) -> Vec<Vec<f64>> {
        rows(self.inner.omega.as_matrix())
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig(delta={}, phi={}, dim={})", self.inner.delta, self.inner.phi, self.inner.dim())
    }
}

fn perf_dict<'py>(py: Python<'py>, perf: &PerfReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mse", &perf.mse)?;
    d.set_item("msse", &perf.msse)?;
    d.set_item("mad", &perf.mad)?;
    d.set_item("me", &perf.me)?;
    d.set_item("n_obs", perf.n_obs)?;
    Ok(d)
}

fn breakdown_dict<'py>(py: Python<'py>, b: &LikelihoodBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("total", b.total)?;
    d.set_item("constant_c", b.constant_c)?;
    d.set_item("quad_term", b.quad_term)?;
    d.set_item("chol_logdet_term", b.chol_logdet_term)?;
    d.set_item("lt_term", b.lt_term)?;
    d.set_item("sigma_logdet_term", b.sigma_logdet_term)?;
    d.set_item("per_step", &b.per_step)?;
    Ok(d)
}

/// Output of [`PyVolFilter::run`].
#[pyclass(name = "FilterResult", module = "giwvol_py")]
struct PyFilterResult {
    filter: VolFilter,
    run: FilterRun,
}

#[pymethods]
impl PyFilterResult {
    fn __len__(&self) -> usize {
        self.run.records.len()
    }

    /// Sum of the per-step log-likelihood contributions; NaN if any is undefined.
    #[getter]
    fn loglik(&self) -> f64 {
        self.run.loglik
    }

    #[getter]
    fn step_loglik(&self) -> Vec<f64> {
        self.run.records.iter().map(|r| r.loglik).collect()
    }

    #[getter]
    fn forecast_mean(&self) -> Vec<Vec<f64>> {
        self.run.records.iter().map(|r| vec(&r.forecast.location)).collect()
    }

    #[getter]
    fn forecast_cov(&self) -> Vec<Vec<Vec<f64>>> {
        self.run.records.iter().map(|r| rows(r.forecast.covariance.as_matrix())).collect()
    }

    #[getter]
    fn forecast_dof(&self) -> f64 {
        self.run.records.first().map_or(f64::NAN, |r| r.forecast.dof)
    }

    #[getter]
    fn errors(&self) -> Vec<Vec<f64>> {
        self.run.records.iter().map(|r| vec(&r.e)).collect()
    }

    #[getter]
    fn standardized_errors(&self) -> Vec<Vec<f64>> {
        self.run.records.iter().map(|r| vec(&r.u)).collect()
    }

    /// Posterior point estimates of the covariance matrix, one per step.
    #[getter]
    fn volatility(&self) -> Vec<Vec<Vec<f64>>> {
        self.run.records.iter().map(|r| rows(r.s_star.as_matrix())).collect()
    }

    #[getter]
    fn final_mean(&self) -> Vec<f64> {
        vec(&self.run.state.m)
    }

    fn perf<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        perf_dict(py, &perf_metrics(&self.run.records).map_err(err)?)
    }

    fn loglik_breakdown<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        breakdown_dict(py, &loglik_of_run(&self.filter, &self.run).map_err(err)?)
    }
}

/// The sequential volatility filter.
#[pyclass(name = "VolFilter", module = "giwvol_py")]
struct PyVolFilter {
    inner: VolFilter,
}

#[pymethods]
impl PyVolFilter {
    #[new]
    fn new(config: PyModelConfig) -> PyResult<Self> {
        Ok(PyVolFilter { inner: VolFilter::new(config.inner).map_err(err)? })
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.k()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        rows(self.inner.q().as_matrix())
    }

    #[getter]
    fn posterior_df(&self) -> f64 {
        self.inner.posterior_df()
    }

    /// Filter a series given as a list of observation vectors.
    fn run(&self, py: Python<'_>, ys: Vec<Vec<f64>>) -> PyResult<PyFilterResult> {
        let ys = series(ys);
        let run = py.detach(|| self.inner.run(&ys)).map_err(err)?;
        Ok(PyFilterResult { filter: self.inner.clone(), run })
    }
}

#[pyfunction]
fn loglik<'py>(py: Python<'py>, ys: Vec<Vec<f64>>, config: PyModelConfig) -> PyResult<Bound<'py, PyDict>> {
    let ys = series(ys);
    let b = py
        .detach(|| giwvol::likelihood::loglik_at_filter_path(&ys, &config.inner))
        .map_err(err)?;
    breakdown_dict(py, &b)
}

/// Draw a path from the generative model. `sigmas` starts at `Σ_0`, so it
/// has one more entry than `ys` and `thetas`.
#[pyfunction]
#[pyo3(signature = (config, n_steps, seed=0, sigma0=None, theta0=None))]
fn simulate<'py>(
    py: Python<'py>,
    config: PyModelConfig,
    n_steps: usize,
    seed: u64,
    sigma0: Option<Vec<Vec<f64>>>,
    theta0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = config.inner.dim();
    let sigma0 = match sigma0 {
        Some(s) => to_spd(&s)?,
        None => SymPosDefMatrix::identity(p),
    };
    let theta0 = theta0.map_or(DVector::zeros(p), DVector::from_vec);
    let model = SimModel::from_config(&config.inner).map_err(err)?;
    let path = py.detach(|| simulate_seeded(seed, &model, &sigma0, &theta0, n_steps)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("ys", path.ys.iter().map(vec).collect::<Vec<_>>())?;
    d.set_item("thetas", path.thetas.iter().map(vec).collect::<Vec<_>>())?;
    d.set_item("sigmas", path.sigmas.iter().map(|s| rows(s.as_matrix())).collect::<Vec<_>>())?;
    d.set_item("seed", seed)?;
    Ok(d)
}

/// Grid search over a diagonal `Ω` and the discount factor.
#[pyfunction]
#[pyo3(signature = (ys, q=2, deltas=None, objective="loglik", phi=1.0, jobs=None, exhaustive=false, max_sweeps=20))]
#[allow(clippy::too_many_arguments)]
fn search<'py>(
    py: Python<'py>,
    ys: Vec<Vec<f64>>,
    q: u32,
    deltas: Option<Vec<f64>>,
    objective: &str,
    phi: f64,
    jobs: Option<usize>,
    exhaustive: bool,
    max_sweeps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let objective = match objective {
        "loglik" => Objective::LogLik,
        "msse_distance" => Objective::MsseDistance,
        _ => return Err(value_err(format!("unknown objective '{objective}'"))),
    };
    let mut spec = SearchSpec { q, objective, jobs, exhaustive, max_sweeps, ..SearchSpec::default() };
    if let Some(d) = deltas {
        spec.delta_candidates = d;
    }
    let ys = series(ys);
    let p = ys.first().map_or(0, |y| y.len());
    if p == 0 {
        return Err(value_err("ys must contain at least one non-empty observation"));
    }
    let base = ModelConfig::new(spec.delta_candidates.first().copied().unwrap_or(f64::NAN), phi, SymPosDefMatrix::identity(p))
        .map_err(err)?;
    let res = py.detach(|| coordinate_search(&ys, &base, &spec)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("z", &res.z)?;
    d.set_item("omega_diag", &res.omega_diag)?;
    d.set_item("delta", res.delta)?;
    d.set_item("objective", res.objective)?;
    d.set_item("evaluations", res.trace.len())?;
    let per_delta: Vec<(f64, Vec<f64>, f64)> =
        res.per_delta.iter().map(|o| (o.delta, o.z.clone(), o.objective)).collect();
    d.set_item("per_delta", per_delta)?;
    Ok(d)
}

#[pyfunction]
fn z_to_omega(z: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = giwvol::search::z_to_omega(&z).map_err(err)?;
    Ok(w.as_matrix().diagonal().iter().copied().collect())
}

#[pyfunction]
fn omega_to_z(w: Vec<f64>) -> PyResult<Vec<f64>> {
    giwvol::search::omega_to_z(&w).map_err(err)
}

#[pyfunction]
fn discount_k(delta: f64, p: usize) -> PyResult<f64> {
    giwvol::filter::discount_k(delta, p).map_err(err)
}

#[pyfunction]
fn beta_dof_m(delta: f64, p: usize) -> PyResult<f64> {
    giwvol::filter::beta_dof_m(delta, p).map_err(err)
}

/// Steady-state limit of the `P` recursion.
#[pyfunction]
fn limit_p(phi: f64, omega: OmegaArg) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(giwvol::filter::limit_p(phi, &omega.spd()?).map_err(err)?.as_matrix()))
}

/// Log density of the generalized inverted Wishart `GIW(n, A, S)` at `x`.
#[pyfunction]
fn giw_logpdf(n: f64, a: Vec<Vec<f64>>, s: Vec<Vec<f64>>, x: Vec<Vec<f64>>) -> PyResult<f64> {
    let params = GiwParams::new(n, to_spd(&a)?, to_spd(&s)?).map_err(err)?;
    core_giw_logpdf(&params, &to_spd(&x)?).map_err(err)
}

#[pymodule]
fn giwvol_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", giwvol::VERSION)?;
    m.add("GiwvolError", m.py().get_type::<GiwvolError>())?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyVolFilter>()?;
    m.add_class::<PyFilterResult>()?;
    m.add_function(wrap_pyfunction!(loglik, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(z_to_omega, m)?)?;
    m.add_function(wrap_pyfunction!(omega_to_z, m)?)?;
    m.add_function(wrap_pyfunction!(discount_k, m)?)?;
    m.add_function(wrap_pyfunction!(beta_dof_m, m)?)?;
    m.add_function(wrap_pyfunction!(limit_p, m)?)?;
    m.add_function(wrap_pyfunction!(giw_logpdf, m)?)?;
    Ok(())
}
