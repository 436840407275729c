//! JSON run configuration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use giwvol::search::{Objective, SearchSpec};
use giwvol::{ForecastMeanMode, ModelConfig, StandardizationMode, SymPosDefMatrix};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modes {
    #[serde(default)]
    pub forecast_mean: ForecastMeanMode,
    #[serde(default)]
    pub standardization: StandardizationMode,
}

/// Contents of the `--config` file. Every key is optional at parse time;
/// each command checks for the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_candidates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub modes: Modes,
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(CliError::config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let config = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok((config, bytes))
    }

    pub fn phi(&self) -> f64 {
        self.phi.unwrap_or(1.0)
    }

    /// `Ω` as given, without any definiteness check.
    pub fn omega(&self) -> Result<Option<DMatrix<f64>>> {
        match (&self.omega_diag, &self.omega_matrix) {
            (Some(_), Some(_)) => Err(CliError::config("give either omega_diag or omega_matrix, not both")),
            (Some(d), None) => {
                if d.is_empty() {
                    return Err(CliError::config("omega_diag must not be empty"));
                }
                Ok(Some(DMatrix::from_diagonal(&DVector::from_column_slice(d))))
            }
            (None, Some(m)) => square(m, "omega_matrix").map(Some),
            (None, None) => Ok(None),
        }
    }

    fn require_delta(&self) -> Result<f64> {
        self.delta.ok_or_else(|| CliError::config("missing key 'delta'"))
    }

    /// Filter configuration. `p` is the data dimension, if known; `Ω`
    /// defaults to the identity when `allow_default_omega` is set.
    pub fn model_config(&self, p: Option<usize>, allow_default_omega: bool) -> Result<ModelConfig> {
        let delta = self.require_delta()?;
        self.model_config_with_delta(delta, p, allow_default_omega)
    }

    fn model_config_with_delta(&self, delta: f64, p: Option<usize>, allow_default_omega: bool) -> Result<ModelConfig> {
        let omega = match (self.omega()?, p) {
            (Some(w), _) => w,
            (None, Some(p)) if allow_default_omega => DMatrix::identity(p, p),
            _ => return Err(CliError::config("missing key 'omega_diag' or 'omega_matrix'")),
        };
        let dim = omega.nrows();
        if let Some(p) = p {
            if p != dim {
                return Err(CliError::config(format!("Omega is {dim}x{dim} but the data have {p} columns")));
            }
        }
        let invalid = |e: giwvol::Error| CliError::config(e.to_string());
        let omega = SymPosDefMatrix::new(omega).map_err(invalid)?;
        let mut config = ModelConfig::new(delta, self.phi(), omega).map_err(invalid)?;
        if self.m0.is_some() || self.p0.is_some() || self.s0.is_some() {
            let m0 = self.m0.as_ref().map_or(config.m0.clone(), |v| DVector::from_column_slice(v));
            let s0 = match &self.s0 {
                Some(rows) => SymPosDefMatrix::new(square(rows, "s0")?).map_err(invalid)?,
                None => config.s0.clone(),
            };
            let p0 = self.p0.unwrap_or(config.p0);
            config = config.with_prior(m0, p0, s0).map_err(invalid)?;
        }
        Ok(config.with_modes(self.modes.forecast_mean, self.modes.standardization))
    }

    /// Base filter configuration and grid settings for `search`.
    pub fn search_setup(&self, p: usize, objective: Objective, jobs: Option<usize>) -> Result<(ModelConfig, SearchSpec)> {
        let mut spec = SearchSpec { objective, jobs, ..SearchSpec::default() };
        if let Some(q) = self.q {
            spec.q = q;
        }
        if let Some(d) = &self.delta_candidates {
            spec.delta_candidates = d.clone();
        } else if let Some(d) = self.delta {
            spec.delta_candidates = vec![d];
        }
        spec.validate().map_err(|e| CliError::config(e.to_string()))?;
        // the base Ω only fixes the dimension; the search replaces it
        let base = self.model_config_with_delta(spec.delta_candidates[0], Some(p), true)?;
        Ok((base, spec))
    }
}
