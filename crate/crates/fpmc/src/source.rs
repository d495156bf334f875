//! Discrete source probability measures over dataset rows.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, CowArray, Ix2};
use rand::seq::index::sample_weighted;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dataset::Dataset;
use crate::error::{FpmcError, Result};

/// A finite discrete probability measure over the rows of a dataset.
///
/// Weights are normalized to sum to 1 over active rows; inactive rows carry
/// weight exactly 0 and are excluded from posterior sums.
#[derive(Debug, Clone)]
pub struct SourceMeasure {
    dataset: Arc<Dataset>,
    weights: Array1<f64>,
    active: Vec<bool>,
}

/// Gathered view of a measure's active support: the image rows, their log
/// weights, and their row indices in the underlying dataset.
pub struct SupportView<'a> {
    pub images: CowArray<'a, f64, Ix2>,
    pub log_weights: Array1<f64>,
    pub rows: Vec<usize>,
}

impl SourceMeasure {
    /// Uniform measure over every row of `dataset`.
    pub fn uniform(dataset: Arc<Dataset>) -> Self {
        let n = dataset.len();
        SourceMeasure {
            dataset,
            weights: Array1::from_elem(n, 1.0 / n as f64),
            active: vec![true; n],
        }
    }

    /// Measure with explicit nonnegative weights (normalized here).
    pub fn with_weights(dataset: Arc<Dataset>, weights: Array1<f64>) -> Result<Self> {
        if weights.len() != dataset.len() {
            return Err(FpmcError::validation(format!(
                "weight count {} does not match dataset size {}",
                weights.len(),
                dataset.len()
            )));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(FpmcError::validation("weights must be finite and >= 0"));
        }
        let active: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
        let mut m = SourceMeasure {
            dataset,
            weights,
            active,
        };
        m.renormalize()?;
        Ok(m)
    }

    fn renormalize(&mut self) -> Result<()> {
        let mut total = 0.0;
        for (w, &a) in self.weights.iter_mut().zip(&self.active) {
            if !a {
                *w = 0.0;
            }
            total += *w;
        }
        if total <= 0.0 {
            return Err(FpmcError::validation(
                "source measure has no active image with positive weight",
            ));
        }
        self.weights.mapv_inplace(|w| w / total);
        Ok(())
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// True when every row is active with equal weight.
    pub fn is_uniform_full(&self) -> bool {
        let n = self.weights.len() as f64;
        self.active.iter().all(|&a| a)
            && self.weights.iter().all(|&w| (w - 1.0 / n).abs() <= 1e-15)
    }

    /// Copy with the given rows deactivated and the rest renormalized.
    /// This is the leave-batch-out operation used during fine-tuning.
    pub fn masked(&self, rows: &[usize]) -> Result<SourceMeasure> {
        let mut out = self.clone();
        for &i in rows {
            if i >= out.active.len() {
                return Err(FpmcError::validation(format!("mask index {i} out of range")));
            }
            out.active[i] = false;
        }
        // Restore pre-normalization proportions among survivors.
        out.weights = self.weights.clone();
        out.renormalize().map_err(|_| {
            FpmcError::validation("masking removed the entire support of the source measure")
        })?;
        Ok(out)
    }

    /// Monte-Carlo support subsample: draw up to `k` active rows without
    /// replacement proportional to their weights, then weight the draw
    /// uniformly. With `k >= active_count` this is the identity.
    pub fn subsampled(&self, k: usize, seed: u64) -> Result<SourceMeasure> {
        if k == 0 {
            return Err(FpmcError::validation("subsample size must be >= 1"));
        }
        let active = self.active_count();
        if active == 0 {
            return Err(FpmcError::validation("empty source"));
        }
        if k >= active {
            return Ok(self.clone());
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let drawn = sample_weighted(&mut rng, self.len(), |i| self.weights[i], k)
            .map_err(|e| FpmcError::validation(format!("weighted sample failed: {e}")))?;
        let mut weights = Array1::zeros(self.len());
        for i in drawn {
            weights[i] = 1.0;
        }
        SourceMeasure::with_weights(self.dataset.clone(), weights)
    }

    /// Gather the active support into a contiguous view. When every row is
    /// active the image matrix is borrowed; otherwise rows are copied.
    pub fn support(&self) -> SupportView<'_> {
        if self.active.iter().all(|&a| a) {
            let log_weights = self.weights.mapv(f64::ln);
            SupportView {
                images: CowArray::from(self.dataset.images()),
                log_weights,
                rows: (0..self.len()).collect(),
            }
        } else {
            let rows: Vec<usize> = (0..self.len()).filter(|&i| self.active[i]).collect();
            let images = self.dataset.images().select(ndarray::Axis(0), &rows);
            let log_weights = Array1::from_iter(rows.iter().map(|&i| self.weights[i].ln()));
            SupportView {
                images: CowArray::from(images),
                log_weights,
                rows,
            }
        }
    }
}

/// Gathered support matrix for external use (tests, oracles).
pub fn support_matrix(measure: &SourceMeasure) -> (Array2<f64>, Array1<f64>) {
    let view = measure.support();
    (view.images.to_owned(), view.log_weights.mapv(f64::exp))
}

/// Geometry-checked view used when several measures must agree.
pub fn check_same_dataset_dim(measure: &SourceMeasure, d: usize) -> Result<ArrayView2<'_, f64>> {
    if measure.dataset.dim() != d {
        return Err(FpmcError::validation(format!(
            "source dataset dimension {} does not match estimator dimension {d}",
            measure.dataset.dim()
        )));
    }
    Ok(measure.dataset.images())
}
