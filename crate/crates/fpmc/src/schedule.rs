//! Diffusion schedule: the `alpha(t)` / `sigma(t)` parameterization and the
//! descending time grid used for sampling and per-step model construction.

use serde::{Deserialize, Serialize};

use crate::error::{FpmcError, Result};

/// How `alpha(t)` and `sigma(t)` depend on `t`.
///
/// The default (and only built-in) parameterization is the variance-exploding
/// one with `alpha(t) = 1`, `sigma(t) = t`. A scaled variant exists so tests
/// can exercise temperature identities exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseParam {
    /// `alpha(t) = 1`, `sigma(t) = t`.
    Identity,
    /// `alpha(t) = 1`, `sigma(t) = scale * t`.
    ScaledSigma { scale: f64 },
}

/// Diffusion schedule: noise parameterization plus the discrete time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    param: NoiseParam,
    t_grid: Vec<f64>,
    t_max: f64,
}

impl DiffusionSchedule {
    /// Build a schedule from an explicit descending grid of positive times.
    pub fn new(t_grid: Vec<f64>) -> Result<Self> {
        Self::with_param(t_grid, NoiseParam::Identity)
    }

    pub fn with_param(t_grid: Vec<f64>, param: NoiseParam) -> Result<Self> {
        if t_grid.is_empty() {
            return Err(FpmcError::validation("time grid must be nonempty"));
        }
        if t_grid.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(FpmcError::validation("time grid entries must be finite and > 0"));
        }
        if t_grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(FpmcError::validation("time grid must be strictly decreasing"));
        }
        let t_max = t_grid[0];
        Ok(DiffusionSchedule {
            param,
            t_grid,
            t_max,
        })
    }

    /// The standard sampling schedule: `edm_time_grid` with the given
    /// parameters and `alpha(t) = 1`, `sigma(t) = t`.
    pub fn edm(num_steps: usize, t_min: f64, t_max: f64, rho: f64) -> Result<Self> {
        Self::new(edm_time_grid(num_steps, t_min, t_max, rho)?)
    }

    pub fn alpha(&self, _t: f64) -> f64 {
        match self.param {
            NoiseParam::Identity | NoiseParam::ScaledSigma { .. } => 1.0,
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.param {
            NoiseParam::Identity => t,
            NoiseParam::ScaledSigma { scale } => scale * t,
        }
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn param(&self) -> NoiseParam {
        self.param
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn num_steps(&self) -> usize {
        self.t_grid.len()
    }

    /// Index of the grid entry equal to `t` (relative tolerance 1e-9).
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.t_grid
            .iter()
            .position(|&g| (g - t).abs() <= tol)
            .ok_or_else(|| FpmcError::validation(format!("no schedule step at t = {t}")))
    }

    /// Validate `t > 0`, returning `(alpha(t), sigma(t))`.
    pub fn coeffs(&self, t: f64) -> Result<(f64, f64)> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(FpmcError::validation(format!("time must be finite and > 0, got {t}")));
        }
        Ok((self.alpha(t), self.sigma(t)))
    }
}

/// The standard rho-interpolated descending sampling grid:
/// `t_i = (t_max^(1/rho) + i/(n-1) * (t_min^(1/rho) - t_max^(1/rho)))^rho`.
pub fn edm_time_grid(num_steps: usize, t_min: f64, t_max: f64, rho: f64) -> Result<Vec<f64>> {
    if num_steps < 2 {
        return Err(FpmcError::validation("num_steps must be >= 2"));
    }
    if !(t_min > 0.0) || !(t_max > t_min) {
        return Err(FpmcError::validation(format!(
            "need 0 < t_min < t_max, got t_min = {t_min}, t_max = {t_max}"
        )));
    }
    if !(rho > 0.0) {
        return Err(FpmcError::validation("rho must be > 0"));
    }
    let inv = 1.0 / rho;
    let hi = t_max.powf(inv);
    let lo = t_min.powf(inv);
    let n = (num_steps - 1) as f64;
    let mut grid: Vec<f64> = (0..num_steps)
        .map(|i| (hi + (i as f64 / n) * (lo - hi)).powf(rho))
        .collect();
    // Pin endpoints exactly; powf round-trips can drift in the last ulp.
    grid[0] = t_max;
    grid[num_steps - 1] = t_min;
    Ok(grid)
}
