//! Classical baselines: the empirical posterior mean ("optimal") denoiser and
//! the eigendecomposition-based Wiener filter.
//!
//! The optimal denoiser here is written against the plain Gaussian likelihood
//! directly, independent of the filtered-estimator code path, so the two can
//! check each other.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{FpmcError, Result};
use crate::geometry::ImageGeometry;
use crate::schedule::DiffusionSchedule;
use crate::tensor_io;

/// Empirical posterior mean over the full training set with the unfiltered
/// Gaussian likelihood.
pub fn optimal_denoiser(
    z: ArrayView1<'_, f64>,
    t: f64,
    data: &Dataset,
    sched: &DiffusionSchedule,
) -> Result<Array1<f64>> {
    let (alpha, sigma) = sched.coeffs(t)?;
    if z.len() != data.dim() {
        return Err(FpmcError::validation("dimension mismatch"));
    }
    let xs = data.images();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut logw = Array1::zeros(xs.nrows());
    for (i, row) in xs.outer_iter().enumerate() {
        let mut quad = 0.0;
        for (&xv, &zv) in row.iter().zip(z.iter()) {
            let resid = alpha * xv - zv;
            quad += resid * resid;
        }
        logw[i] = -quad * inv;
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    logw.mapv_inplace(|w| w / total);
    Ok(logw.dot(&xs))
}

/// Batched [`optimal_denoiser`].
pub fn optimal_denoiser_batch(
    zs: ArrayView2<'_, f64>,
    t: f64,
    data: &Dataset,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((zs.nrows(), zs.ncols()));
    for (z, mut dst) in zs.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&optimal_denoiser(z, t, data, sched)?);
    }
    Ok(out)
}

/// Eigendecomposition of the empirical covariance, with the data mean.
#[derive(Debug, Clone)]
pub struct WienerModel {
    mean: Array1<f64>,
    /// d x d matrix whose columns are orthonormal eigenvectors.
    eigvecs: Array2<f64>,
    /// Eigenvalues, clamped to >= 0, sorted descending.
    eigvals: Array1<f64>,
}

impl WienerModel {
    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn eigvecs(&self) -> ArrayView2<'_, f64> {
        self.eigvecs.view()
    }

    pub fn eigvals(&self) -> ArrayView1<'_, f64> {
        self.eigvals.view()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reconstruct the covariance `U diag(lambda) U^T`.
    pub fn covariance(&self) -> Array2<f64> {
        let scaled = &self.eigvecs * &self.eigvals.view().insert_axis(Axis(0));
        scaled.dot(&self.eigvecs.t())
    }

    /// Per-eigenvalue shrink factors `alpha^2 lambda / (alpha^2 lambda + sigma^2)`.
    fn shrink_factors(&self, alpha: f64, sigma: f64) -> Array1<f64> {
        self.eigvals
            .mapv(|l| alpha * alpha * l / (alpha * alpha * l + sigma * sigma))
    }
}

/// Fit the data mean and the symmetric eigendecomposition of the empirical
/// covariance `E[x x^T] - mean mean^T` (population normalization, 1/N).
pub fn fit_wiener(data: &Dataset) -> Result<WienerModel> {
    let n = data.len();
    if n < 2 {
        return Err(FpmcError::validation("Wiener fit needs N >= 2"));
    }
    let xs = data.images();
    let d = data.dim();
    let mean = xs.mean_axis(Axis(0)).expect("nonempty");
    let centered = &xs - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / n as f64;

    let na = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(na);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut eigvals = Array1::zeros(d);
    let mut eigvecs = Array2::zeros((d, d));
    for (col, &src) in order.iter().enumerate() {
        eigvals[col] = eig.eigenvalues[src].max(0.0);
        for row in 0..d {
            eigvecs[[row, col]] = eig.eigenvectors[(row, src)];
        }
    }
    Ok(WienerModel {
        mean,
        eigvecs,
        eigvals,
    })
}

/// The Wiener filter matrix
/// `W_t = (1/alpha) U diag(alpha^2 lambda / (alpha^2 lambda + sigma^2)) U^T`.
pub fn wiener_matrix(model: &WienerModel, t: f64, sched: &DiffusionSchedule) -> Result<Array2<f64>> {
    let (alpha, sigma) = sched.coeffs(t)?;
    let shrink = model.shrink_factors(alpha, sigma) / alpha;
    let scaled = &model.eigvecs * &shrink.view().insert_axis(Axis(0));
    Ok(scaled.dot(&model.eigvecs.t()))
}

/// Wiener denoising `mean + W_t (z - alpha mean)`, applied in factored form
/// (U, diag, U^T) so the d x d matrix is never materialized.
pub fn wiener_denoise(
    z: ArrayView1<'_, f64>,
    t: f64,
    model: &WienerModel,
    sched: &DiffusionSchedule,
) -> Result<Array1<f64>> {
    let (alpha, sigma) = sched.coeffs(t)?;
    if z.len() != model.dim() {
        return Err(FpmcError::validation("dimension mismatch"));
    }
    let centered = &z - &(&model.mean * alpha);
    let mut coeffs = model.eigvecs.t().dot(&centered);
    coeffs *= &(model.shrink_factors(alpha, sigma) / alpha);
    Ok(&model.mean + &model.eigvecs.dot(&coeffs))
}

/// Batched [`wiener_denoise`].
pub fn wiener_denoise_batch(
    zs: ArrayView2<'_, f64>,
    t: f64,
    model: &WienerModel,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((zs.nrows(), zs.ncols()));
    for (z, mut dst) in zs.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&wiener_denoise(z, t, model, sched)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WienerManifest {
    format: String,
    dim: usize,
}

const WIENER_FORMAT: &str = "fpmc-wiener-v1";

impl WienerModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let d = self.dim();
        let manifest = WienerManifest {
            format: WIENER_FORMAT.to_string(),
            dim: d,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        let flat = ImageGeometry::new(d, 1, 1)?;
        tensor_io::write_tensor(
            &dir.join("mean.bin"),
            flat,
            &self.mean.view().insert_axis(Axis(0)).to_owned(),
        )?;
        tensor_io::write_tensor(&dir.join("eigvecs.bin"), flat, &self.eigvecs)?;
        tensor_io::write_tensor(
            &dir.join("eigvals.bin"),
            flat,
            &self.eigvals.view().insert_axis(Axis(0)).to_owned(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: WienerManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != WIENER_FORMAT {
            return Err(FpmcError::io(format!("unknown Wiener format {:?}", manifest.format)));
        }
        let (_, mean) = tensor_io::read_tensor(&dir.join("mean.bin"))?;
        let (_, eigvecs) = tensor_io::read_tensor(&dir.join("eigvecs.bin"))?;
        let (_, eigvals) = tensor_io::read_tensor(&dir.join("eigvals.bin"))?;
        let d = manifest.dim;
        if mean.ncols() != d || eigvecs.nrows() != d || eigvecs.ncols() != d || eigvals.ncols() != d
        {
            return Err(FpmcError::io("Wiener tensor shapes disagree with manifest"));
        }
        Ok(WienerModel {
            mean: mean.row(0).to_owned(),
            eigvecs,
            eigvals: eigvals.row(0).to_owned(),
        })
    }
}

/// Fit a Wiener model on `data` shared behind an [`Arc`] (convenience for
/// denoiser adapters).
pub fn fit_wiener_shared(data: &Arc<Dataset>) -> Result<WienerModel> {
    fit_wiener(data)
}
