//! Hyperparameter selection for a diagonal `Ω` and the discount factor.
//!
//! Each diagonal entry is reparameterized as `z_i = w_i / (1 + w_i)` so that
//! `Z = Ω (Ω + I)^{-1}` lives in the unit cube, which is then searched on the
//! grid `1/10^q, …, (10^q - 1)/10^q`. The default strategy is coordinate
//! ascent started from `z = 0.5` (`Ω = I`); small dimensions can use the full
//! product grid instead. `δ` is an outer grid.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{ModelConfig, VolFilter};
use crate::likelihood::{loglik_at_filter_path, perf_metrics};
use crate::matstat::SymPosDefMatrix;

/// Largest dimension for which [`SearchSpec::exhaustive`] is honoured.
pub const EXHAUSTIVE_MAX_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Plug-in log-likelihood along the filtered path.
    #[default]
    LogLik,
    /// `-Σ_j (MSSE_j - 1)²`.
    MsseDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub q: u32,
    pub delta_candidates: Vec<f64>,
    pub max_sweeps: usize,
    pub objective: Objective,
    /// Worker threads for grid evaluation; `None` uses the global pool.
    pub jobs: Option<usize>,
    pub exhaustive: bool,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            q: 2,
            delta_candidates: vec![0.70, 0.75, 0.80, 0.85],
            max_sweeps: 20,
            objective: Objective::LogLik,
            jobs: None,
            exhaustive: false,
        }
    }
}

impl SearchSpec {
    pub fn new(q: u32) -> Self {
        SearchSpec { q, ..SearchSpec::default() }
    }

    pub fn with_deltas(mut self, deltas: Vec<f64>) -> Self {
        self.delta_candidates = deltas;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.q) {
            return Err(Error::domain(format!("grid exponent q must be in 1..=6, got {}", self.q)));
        }
        if self.delta_candidates.is_empty() {
            return Err(Error::domain("delta_candidates is empty"));
        }
        for &d in &self.delta_candidates {
            if !(d > 2.0 / 3.0 && d < 1.0) {
                return Err(Error::domain(format!("delta candidate {d} must lie in (2/3, 1)")));
            }
        }
        if self.max_sweeps == 0 {
            return Err(Error::domain("max_sweeps must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(Error::domain("jobs must be at least 1"));
        }
        Ok(())
    }
}

/// `i / 10^q` for `i = 1 … 10^q - 1`.
pub fn z_grid(q: u32) -> Vec<f64> {
    let den = 10u64.pow(q);
    (1..den).map(|i| i as f64 / den as f64).collect()
}

/// Diagonal `Ω` with `w_i = z_i / (1 - z_i)`.
pub fn z_to_omega(z: &[f64]) -> Result<SymPosDefMatrix> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut w = Vec::with_capacity(z.len());
    for &zi in z {
        if !(zi > 0.0 && zi < 1.0) {
            return Err(Error::domain(format!("z entries must lie in (0, 1), got {zi}")));
        }
        w.push(zi / (1.0 - zi));
    }
    SymPosDefMatrix::from_diagonal(&w)
}

/// Inverse of [`z_to_omega`] on the diagonal: `z_i = w_i / (1 + w_i)`.
pub fn omega_to_z(w: &[f64]) -> Result<Vec<f64>> {
    w.iter()
        .map(|&wi| {
            if wi > 0.0 && wi.is_finite() {
                Ok(wi / (1.0 + wi))
            } else {
                Err(Error::domain(format!("Omega diagonal entries must be positive, got {wi}")))
            }
        })
        .collect()
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub delta: f64,
    pub sweep: usize,
    /// Coordinate being varied; `None` for the starting point and for
    /// product-grid evaluations.
    pub coordinate: Option<usize>,
    pub z: Vec<f64>,
    /// `NaN` when the candidate failed.
    pub objective: f64,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaOutcome {
    pub delta: f64,
    pub z: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub z: Vec<f64>,
    pub omega_diag: Vec<f64>,
    pub delta: f64,
    pub objective: f64,
    pub per_delta: Vec<DeltaOutcome>,
    pub trace: Vec<TraceEntry>,
}

impl SearchResult {
    /// Objective values of accepted moves in evaluation order.
    pub fn accepted_objectives(&self, delta: f64) -> Vec<f64> {
        self.trace
            .iter()
            .filter(|e| e.accepted && e.delta == delta)
            .map(|e| e.objective)
            .collect()
    }
}

/// Objective at `(δ, z)` with the remaining settings taken from `base`.
pub fn evaluate_objective(
    ys: &[DVector<f64>],
    base: &ModelConfig,
    delta: f64,
    z: &[f64],
    objective: Objective,
) -> Result<f64> {
    let mut config = base.clone();
    config.delta = delta;
    config.omega = z_to_omega(z)?;
    config.validate()?;
    let value = match objective {
        Objective::LogLik => loglik_at_filter_path(ys, &config)?.total,
        Objective::MsseDistance => {
            let run = VolFilter::new(config)?.run(ys)?;
            let perf = perf_metrics(&run.records)?;
            -perf.msse.iter().map(|m| (m - 1.0).powi(2)).sum::<f64>()
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::domain("objective is not finite"))
    }
}

struct Ctx<'a> {
    ys: &'a [DVector<f64>],
    base: &'a ModelConfig,
    objective: Objective,
    grid: Vec<f64>,
}

impl Ctx<'_> {
    fn eval_many(&self, delta: f64, points: &[Vec<f64>]) -> Vec<std::result::Result<f64, String>> {
        points
            .par_iter()
            .map(|z| evaluate_objective(self.ys, self.base, delta, z, self.objective).map_err(|e| e.to_string()))
            .collect()
    }
}

fn entry(delta: f64, sweep: usize, coordinate: Option<usize>, z: Vec<f64>, r: &std::result::Result<f64, String>) -> TraceEntry {
    match r {
        Ok(v) => TraceEntry { delta, sweep, coordinate, z, objective: *v, accepted: false, error: None },
        Err(msg) => {
            log::warn!("search candidate delta={delta} z={z:?} skipped: {msg}");
            TraceEntry { delta, sweep, coordinate, z, objective: f64::NAN, accepted: false, error: Some(msg.clone()) }
        }
    }
}

/// First strict maximum; earlier indices win ties.
fn argmax(values: &[std::result::Result<f64, String>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Ok(v) = v {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn coordinate_ascent(ctx: &Ctx, delta: f64, p: usize, max_sweeps: usize, trace: &mut Vec<TraceEntry>) -> Option<DeltaOutcome> {
    let mid = ctx.grid.len() / 2;
    let mut idx = vec![mid; p];
    let point = |idx: &[usize]| idx.iter().map(|&i| ctx.grid[i]).collect::<Vec<_>>();

    let start = ctx.eval_many(delta, &[point(&idx)]);
    let mut current = start[0].as_ref().ok().copied();
    trace.push(entry(delta, 0, None, point(&idx), &start[0]));
    if current.is_some() {
        trace.last_mut().unwrap().accepted = true;
    }

    let mut sweeps = 0;
    for sweep in 1..=max_sweeps {
        sweeps = sweep;
        let mut changed = false;
        for i in 0..p {
            let candidates: Vec<Vec<f64>> = (0..ctx.grid.len())
                .map(|g| {
                    let mut c = idx.clone();
                    c[i] = g;
                    point(&c)
                })
                .collect();
            let results = ctx.eval_many(delta, &candidates);
            let first = trace.len();
            for (z, r) in candidates.into_iter().zip(&results) {
                trace.push(entry(delta, sweep, Some(i), z, r));
            }
            let Some(g) = argmax(&results) else { continue };
            let value = *results[g].as_ref().unwrap();
            // The current point is on the grid, so the winner is never worse.
            if current.is_none_or(|c| value >= c) {
                trace[first + g].accepted = true;
                if g != idx[i] {
                    changed = true;
                    idx[i] = g;
                }
                current = Some(value);
            }
        }
        if !changed {
            break;
        }
    }
    current.map(|objective| DeltaOutcome { delta, z: point(&idx), objective, sweeps })
}

fn product_grid(ctx: &Ctx, delta: f64, p: usize, trace: &mut Vec<TraceEntry>) -> Option<DeltaOutcome> {
    let g = ctx.grid.len();
    let points: Vec<Vec<f64>> = (0..g.pow(p as u32))
        .map(|mut flat| {
            let mut z = vec![0.0; p];
            for zi in z.iter_mut().rev() {
                *zi = ctx.grid[flat % g];
                flat /= g;
            }
            z
        })
        .collect();
    let results = ctx.eval_many(delta, &points);
    let first = trace.len();
    for (z, r) in points.iter().zip(&results) {
        trace.push(entry(delta, 1, None, z.clone(), r));
    }
    let best = argmax(&results)?;
    trace[first + best].accepted = true;
    Some(DeltaOutcome { delta, z: points[best].clone(), objective: *results[best].as_ref().unwrap(), sweeps: 1 })
}

/// Select `z` (hence diagonal `Ω`) and `δ` maximizing the objective.
///
/// Ties go to the smaller `z` (lexicographically), then the smaller `δ`.
/// Candidates whose filter run fails are recorded in the trace and skipped.
pub fn coordinate_search(ys: &[DVector<f64>], base_config: &ModelConfig, spec: &SearchSpec) -> Result<SearchResult> {
    spec.validate()?;
    base_config.validate()?;
    let p = base_config.dim();
    if ys.len() < 10 * p {
        return Err(Error::domain(format!(
            "search needs at least 10 p = {} observations, got {}",
            10 * p,
            ys.len()
        )));
    }
    let ctx = Ctx { ys, base: base_config, objective: spec.objective, grid: z_grid(spec.q) };
    let mut deltas = spec.delta_candidates.clone();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();

    let run = || {
        let mut trace = Vec::new();
        let mut per_delta = Vec::new();
        for &delta in &deltas {
            let outcome = if spec.exhaustive && p <= EXHAUSTIVE_MAX_DIM {
                product_grid(&ctx, delta, p, &mut trace)
            } else {
                coordinate_ascent(&ctx, delta, p, spec.max_sweeps, &mut trace)
            };
            match outcome {
                Some(o) => per_delta.push(o),
                None => log::warn!("every candidate failed for delta={delta}"),
            }
        }
        (trace, per_delta)
    };
    let (trace, per_delta) = match spec.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?
            .install(run),
        None => run(),
    };

    let best = per_delta
        .iter()
        .fold(None::<&DeltaOutcome>, |acc, o| match acc {
            Some(b) if o.objective <= b.objective => Some(b),
            _ => Some(o),
        })
        .ok_or_else(|| Error::domain("every search candidate failed"))?;
    Ok(SearchResult {
        z: best.z.clone(),
        omega_diag: best.z.iter().map(|z| z / (1.0 - z)).collect(),
        delta: best.delta,
        objective: best.objective,
        per_delta: per_delta.clone(),
        trace,
    })
}
