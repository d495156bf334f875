//! Filtered posterior mean estimators.
//!
//! An estimator is a `(q, r, nu)` triple: a per-dimension query precision
//! that filters the Gaussian likelihood, a per-dimension response weight that
//! controls aggregation, and a discrete source measure whose support is
//! averaged. The math here is deliberately small: weighted quadratic forms,
//! a max-subtracted softmax, and convex combinations.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{FpmcError, Result};
use crate::schedule::DiffusionSchedule;
use crate::source::SourceMeasure;

/// Normalized posterior weights below this are flushed to exactly zero.
pub(crate) const WEIGHT_FLUSH: f64 = 1e-300;

/// Per-dimension query precision `q >= 0`. Binary masks are the special case
/// with entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPrecision(Array1<f64>);

impl QueryPrecision {
    pub fn new(q: Array1<f64>) -> Result<Self> {
        if q.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(FpmcError::validation("query precision entries must be finite and >= 0"));
        }
        if !q.iter().any(|&v| v > 0.0) {
            return Err(FpmcError::validation("query precision must have a positive entry"));
        }
        Ok(QueryPrecision(q))
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-dimension response weight `r >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseWeight(Array1<f64>);

impl ResponseWeight {
    pub fn new(r: Array1<f64>) -> Result<Self> {
        if r.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(FpmcError::validation("response weight entries must be finite and >= 0"));
        }
        Ok(ResponseWeight(r))
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One estimator of a collection: query precision, response weight, source.
#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    pub q: QueryPrecision,
    pub r: ResponseWeight,
    pub nu: SourceMeasure,
}

impl EstimatorSpec {
    pub fn new(q: QueryPrecision, r: ResponseWeight, nu: SourceMeasure) -> Result<Self> {
        let d = nu.dataset().dim();
        if q.len() != d || r.len() != d {
            return Err(FpmcError::validation(format!(
                "estimator dimensions disagree: q has {}, r has {}, source has {d}",
                q.len(),
                r.len()
            )));
        }
        Ok(EstimatorSpec { q, r, nu })
    }

    /// This estimator's filtered posterior mean at one query point.
    pub fn posterior_mean(
        &self,
        z: ArrayView1<'_, f64>,
        t: f64,
        sched: &DiffusionSchedule,
    ) -> Result<Array1<f64>> {
        filtered_posterior_mean(z, t, &self.q, &self.nu, sched)
    }
}

/// Unnormalized filtered Gaussian log likelihood:
/// `(alpha x - z)' diag(q) (alpha x - z) / (-2 sigma^2)`.
pub fn filtered_log_likelihood(
    z: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    q: &QueryPrecision,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    let (alpha, sigma) = sched.coeffs(t)?;
    if z.len() != x.len() || z.len() != q.len() {
        return Err(FpmcError::validation("dimension mismatch"));
    }
    let mut quad = 0.0;
    for ((&zv, &xv), &qv) in z.iter().zip(x.iter()).zip(q.view().iter()) {
        let resid = alpha * xv - zv;
        quad += qv * resid * resid;
    }
    Ok(quad / (-2.0 * sigma * sigma))
}

/// Log likelihoods of every row of `xs` against one query point `z`,
/// vectorized as `-(residual^2 matrix) . q / (2 sigma^2)`.
pub(crate) fn row_log_likelihoods(
    xs: ArrayView2<'_, f64>,
    z: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    alpha: f64,
    sigma: f64,
) -> Array1<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Array1::zeros(xs.nrows());
    for (i, row) in xs.outer_iter().enumerate() {
        let mut quad = 0.0;
        for ((&xv, &zv), &qv) in row.iter().zip(z.iter()).zip(q.iter()) {
            let resid = alpha * xv - zv;
            quad += qv * resid * resid;
        }
        out[i] = -quad * inv;
    }
    out
}

/// Max-subtracted softmax over `scores`, in place. Returns an error only if
/// every score is -inf (guarded; cannot happen with finite inputs).
pub(crate) fn softmax_in_place(scores: &mut Array1<f64>) -> Result<()> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(FpmcError::numerical("all posterior log weights are -inf"));
    }
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
        if *s < WEIGHT_FLUSH {
            *s = 0.0;
        }
    }
    Ok(())
}

/// Posterior weights over the active support of `nu` for one query point.
/// Weights align with `nu.support().rows` and sum to 1.
pub fn filtered_posterior(
    z: ArrayView1<'_, f64>,
    q: &QueryPrecision,
    nu: &SourceMeasure,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<Array1<f64>> {
    let (alpha, sigma) = sched.coeffs(t)?;
    if q.len() != nu.dataset().dim() || z.len() != q.len() {
        return Err(FpmcError::validation("dimension mismatch"));
    }
    let support = nu.support();
    let mut scores = row_log_likelihoods(support.images.view(), z, q.view(), alpha, sigma);
    scores += &support.log_weights;
    softmax_in_place(&mut scores)?;
    Ok(scores)
}

/// Filtered posterior mean: the posterior-weighted average of the support.
pub fn filtered_posterior_mean(
    z: ArrayView1<'_, f64>,
    t: f64,
    q: &QueryPrecision,
    nu: &SourceMeasure,
    sched: &DiffusionSchedule,
) -> Result<Array1<f64>> {
    let (alpha, sigma) = sched.coeffs(t)?;
    if q.len() != nu.dataset().dim() || z.len() != q.len() {
        return Err(FpmcError::validation("dimension mismatch"));
    }
    let support = nu.support();
    let mut weights = row_log_likelihoods(support.images.view(), z, q.view(), alpha, sigma);
    weights += &support.log_weights;
    softmax_in_place(&mut weights)?;
    Ok(weights.dot(&support.images.view()))
}

/// Tweedie conversion: the score of the noised marginal from a denoiser
/// output, `(alpha(t) * denoised - z) / sigma(t)^2`.
pub fn score_from_denoiser(
    z: ArrayView1<'_, f64>,
    denoised: ArrayView1<'_, f64>,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<Array1<f64>> {
    let (alpha, sigma) = sched.coeffs(t)?;
    if z.len() != denoised.len() {
        return Err(FpmcError::validation("dimension mismatch"));
    }
    let inv = 1.0 / (sigma * sigma);
    Ok(Array1::from_iter(
        z.iter()
            .zip(denoised.iter())
            .map(|(&zv, &dv)| (alpha * dv - zv) * inv),
    ))
}
