//! Gradient-based fine-tuning of soft query precisions and response weights
//! against a target denoiser.
//!
//! Parameters live in log space (`q = exp(theta)`, `r = exp(phi)`), so they
//! stay positive under unconstrained updates. Gradients are analytic,
//! propagated through the aggregation, the posterior means, and the softmax
//! weights; agreement with central finite differences is part of the test
//! suite.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{FpmcError, Result};
use crate::model::{FpmcModel, StepSources};
use crate::source::SupportView;

/// Which parameter groups an optimization run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneMode {
    QOnly,
    ROnly,
    Joint,
}

impl TuneMode {
    pub fn tunes_q(self) -> bool {
        matches!(self, TuneMode::QOnly | TuneMode::Joint)
    }

    pub fn tunes_r(self) -> bool {
        matches!(self, TuneMode::ROnly | TuneMode::Joint)
    }
}

/// Zero entries of a binary mask initialize to this floor before the log.
pub const INIT_FLOOR: f64 = 1e-3;

/// Log-space parameters for one schedule step's estimators.
#[derive(Debug, Clone)]
pub struct LogParams {
    pub mode: TuneMode,
    /// L x d, `q = exp(theta)`; ignored unless the mode tunes Q.
    pub theta: Array2<f64>,
    /// L x d, `r = exp(phi)`; ignored unless the mode tunes R.
    pub phi: Array2<f64>,
    fixed_q: Array2<f64>,
    fixed_r: Array2<f64>,
}

impl LogParams {
    /// Initialize from (typically binary) baseline masks: parameters start at
    /// `log(max(m, 1e-3))`, which preserves the mask structure while keeping
    /// every entry finite and strictly positive under `exp`.
    pub fn from_masks(q: &Array2<f64>, r: &Array2<f64>, mode: TuneMode) -> Self {
        let to_log = |m: &Array2<f64>| m.mapv(|v| v.max(INIT_FLOOR).ln());
        LogParams {
            mode,
            theta: to_log(q),
            phi: to_log(r),
            fixed_q: q.clone(),
            fixed_r: r.clone(),
        }
    }

    /// Effective query precisions under the current mode.
    pub fn q(&self) -> Array2<f64> {
        if self.mode.tunes_q() {
            self.theta.mapv(f64::exp)
        } else {
            self.fixed_q.clone()
        }
    }

    /// Effective response weights under the current mode.
    pub fn r(&self) -> Array2<f64> {
        if self.mode.tunes_r() {
            self.phi.mapv(f64::exp)
        } else {
            self.fixed_r.clone()
        }
    }
}

/// Loss value and log-space gradients for one batch.
#[derive(Debug)]
pub struct LossAndGrads {
    pub loss: f64,
    /// d loss / d theta, zero when the mode freezes Q.
    pub g_theta: Array2<f64>,
    /// d loss / d phi, zero when the mode freezes R.
    pub g_phi: Array2<f64>,
}

/// The squared-error objective for one batch:
/// `loss_weight * mean_b || target_b - D(z_b) ||_2^2`
/// where `D` is the collection denoiser built from the current parameters
/// over the given support.
pub fn finetune_loss(
    params: &LogParams,
    zs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    support: &SupportView<'_>,
    alpha: f64,
    sigma: f64,
    loss_weight: f64,
) -> Result<f64> {
    let out = collection_forward(&params.q(), &params.r(), zs, support, alpha, sigma)?;
    let b = zs.nrows() as f64;
    let diff = &targets.to_owned() - &out;
    Ok(loss_weight * diff.mapv(|v| v * v).sum() / b)
}

/// Loss and exact analytic gradients with respect to the active log
/// parameters, in one fused pass.
pub fn finetune_grad(
    params: &LogParams,
    zs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    support: &SupportView<'_>,
    alpha: f64,
    sigma: f64,
    loss_weight: f64,
) -> Result<LossAndGrads> {
    let q = params.q();
    let r = params.r();
    let l = q.nrows();
    let d = q.ncols();
    let n = support.images.nrows();
    if zs.ncols() != d || targets.ncols() != d || zs.nrows() != targets.nrows() {
        return Err(FpmcError::validation("batch shapes disagree"));
    }
    let xs = support.images.view();
    let r_sum = r.sum_axis(Axis(0));
    if r_sum.iter().any(|&v| !(v > 0.0)) {
        return Err(FpmcError::validation("coverage violation: zero total response weight"));
    }
    let batch = zs.nrows() as f64;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    let mut loss = 0.0;
    let mut g_theta = Array2::zeros((l, d));
    let mut g_phi = Array2::zeros((l, d));

    for (z, target) in zs.outer_iter().zip(targets.outer_iter()) {
        // Shared squared residuals, N x d.
        let mut c = xs.to_owned();
        for mut row in c.outer_iter_mut() {
            for (v, &zv) in row.iter_mut().zip(z.iter()) {
                let resid = alpha * *v - zv;
                *v = resid * resid * inv_two_sigma2;
            }
        }
        // Posterior weights per estimator, N x L.
        let quad = c.dot(&q.t());
        let mut w = Array2::zeros((n, l));
        for ell in 0..l {
            let mut scores = Array1::from_iter(
                quad.column(ell)
                    .iter()
                    .zip(support.log_weights.iter())
                    .map(|(&s, &lw)| -s + lw),
            );
            crate::estimator::softmax_in_place(&mut scores)?;
            w.column_mut(ell).assign(&scores);
        }
        // Means, aggregation, and the error against the target.
        let mus = w.t().dot(&xs); // L x d
        let weighted = &mus * &r;
        let output = weighted.sum_axis(Axis(0)) / &r_sum;
        let err = &target.to_owned() - &output;
        loss += loss_weight * err.mapv(|v| v * v).sum() / batch;

        // Backward pass.
        let g_out = err.mapv(|e| -2.0 * loss_weight * e / batch); // dL/dD, length d
        let g_over_den = &g_out / &r_sum;
        if params.mode.tunes_r() {
            // dL/dr_l = (g / den) * (mu_l - D)
            let mut gr = mus.clone();
            for mut row in gr.outer_iter_mut() {
                for ((v, &dv), &gd) in row.iter_mut().zip(output.iter()).zip(g_over_den.iter()) {
                    *v = (*v - dv) * gd;
                }
            }
            g_phi += &(&gr * &r);
        }
        if params.mode.tunes_q() {
            // dL/dmu_l = (g / den) * r_l, folded through the softmax:
            // dL/dq_l = -C^T [ w_l * (a_l - <w_l, a_l>) ],  a_l = Xs (dL/dmu_l).
            let u = &r * &g_over_den.view().insert_axis(Axis(0)); // L x d
            let a = xs.dot(&u.t()); // N x L
            let mut bmat = Array2::zeros((n, l));
            for ell in 0..l {
                let w_col = w.column(ell);
                let a_col = a.column(ell);
                let mean: f64 = w_col.dot(&a_col);
                for i in 0..n {
                    bmat[[i, ell]] = w_col[i] * (a_col[i] - mean);
                }
            }
            let gq = c.t().dot(&bmat); // d x L
            g_theta += &(&gq.t().to_owned().mapv(|v| -v) * &q);
        }
    }
    Ok(LossAndGrads {
        loss,
        g_theta,
        g_phi,
    })
}

/// Forward pass of the collection denoiser over an explicit support
/// (shared by loss, validation, and the gradient check).
pub fn collection_forward(
    q: &Array2<f64>,
    r: &Array2<f64>,
    zs: ArrayView2<'_, f64>,
    support: &SupportView<'_>,
    alpha: f64,
    sigma: f64,
) -> Result<Array2<f64>> {
    let r_sum = r.sum_axis(Axis(0));
    if r_sum.iter().any(|&v| !(v > 0.0)) {
        return Err(FpmcError::validation("coverage violation: zero total response weight"));
    }
    let xs = support.images.view();
    let l = q.nrows();
    let mut out = Array2::zeros((zs.nrows(), zs.ncols()));
    for (z, mut dst) in zs.outer_iter().zip(out.outer_iter_mut()) {
        let mut c = xs.to_owned();
        for mut row in c.outer_iter_mut() {
            for (v, &zv) in row.iter_mut().zip(z.iter()) {
                let resid = alpha * *v - zv;
                *v = resid * resid / (2.0 * sigma * sigma);
            }
        }
        let quad = c.dot(&q.t());
        let mut mus = Array2::zeros((l, zs.ncols()));
        for ell in 0..l {
            let mut scores = Array1::from_iter(
                quad.column(ell)
                    .iter()
                    .zip(support.log_weights.iter())
                    .map(|(&s, &lw)| -s + lw),
            );
            crate::estimator::softmax_in_place(&mut scores)?;
            mus.row_mut(ell).assign(&scores.dot(&xs));
        }
        let weighted = &mus * r;
        dst.assign(&(&weighted.sum_axis(Axis(0)) / &r_sum));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamWState {
    m: Array2<f64>,
    v: Array2<f64>,
    step: usize,
}

impl AdamWState {
    pub fn new(shape: (usize, usize)) -> Self {
        AdamWState {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            step: 0,
        }
    }
}

/// One AdamW update: bias-corrected adaptive step plus decoupled decay,
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adamw_step(
    state: &mut AdamWState,
    params: &mut Array2<f64>,
    grads: &Array2<f64>,
    config: &AdamWConfig,
) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(FpmcError::numerical(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let b1 = config.beta1;
    let b2 = config.beta2;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= config.learning_rate * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * *p);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Configuration of one fine-tuning run (one schedule step, fixed t).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Loss weight lambda(t).
    pub loss_weight: f64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Monte-Carlo support subsample size (training only).
    pub mc_support_size: Option<usize>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            loss_weight: 1.0,
            optimizer: AdamWConfig::default(),
            batch_size: 256,
            max_steps: 2000,
            mc_support_size: None,
            seed: 0,
        }
    }
}

/// One line of the training log (JSON-lines on disk). Step records carry
/// the batch rows and a digest of the noise draw so a seeded replay can be
/// verified against the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step {
        step: usize,
        loss: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        batch: Option<Vec<usize>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        eps_digest: Option<String>,
    },
    Epoch {
        epoch: usize,
        val_mse: f64,
    },
}

/// Result of a fine-tuning run: the best parameters (by validation MSE),
/// their score, and the full log.
#[derive(Debug)]
pub struct FinetuneOutcome {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub log: Vec<LogRecord>,
}

fn gaussian_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Fine-tune one schedule step of `model` against `target`.
///
/// Training batches are drawn from the rows of the model's own source
/// dataset (optionally restricted to `train_rows`), so leave-batch-out
/// masking always refers to valid source indices. Validation uses the given
/// held-out dataset with the full support and a fixed noise draw; the
/// returned parameters are the ones with the lowest validation MSE across
/// epochs (including the initialization).
pub fn finetune_run(
    model: &FpmcModel,
    step_idx: usize,
    target: &dyn Denoiser,
    validation: &crate::dataset::Dataset,
    mode: TuneMode,
    config: &FinetuneConfig,
    train_rows: Option<&[usize]>,
) -> Result<FinetuneOutcome> {
    let step = model.step(step_idx)?;
    let t = step.t;
    let alpha = model.schedule().alpha(t);
    let sigma = model.schedule().sigma(t);
    let source = match &step.sources {
        StepSources::Shared(nu) => nu.clone(),
        StepSources::PerEstimator(_) => {
            return Err(FpmcError::validation(
                "fine-tuning requires a shared source measure per step",
            ));
        }
    };
    if config.batch_size == 0 {
        return Err(FpmcError::validation("batch size must be >= 1"));
    }
    if !(config.optimizer.learning_rate > 0.0) {
        return Err(FpmcError::validation("learning rate must be > 0"));
    }
    let d = model.geometry().dim();
    if validation.dim() != d || target.dim() != d {
        return Err(FpmcError::validation("validation/target dimension mismatch"));
    }

    let all_rows: Vec<usize>;
    let rows: &[usize] = match train_rows {
        Some(r) => r,
        None => {
            all_rows = (0..source.len()).collect();
            &all_rows
        }
    };
    if rows.is_empty() || rows.iter().any(|&i| i >= source.len()) {
        return Err(FpmcError::validation("training rows must be valid source indices"));
    }

    let mut params = LogParams::from_masks(&step.q, &step.r, mode);
    let shape = (step.q.nrows(), d);
    let mut theta_state = AdamWState::new(shape);
    let mut phi_state = AdamWState::new(shape);

    // Fixed validation pairs: one noise draw per validation image.
    let mut val_rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_add(1));
    let eps = gaussian_matrix(&mut val_rng, validation.len(), d);
    let z_val = validation.images().mapv(|v| alpha * v) + eps.mapv(|e| sigma * e);
    let val_targets = target.denoise_batch(z_val.view(), t)?;
    let full_support = source.support();
    let validate = |p: &LogParams| -> Result<f64> {
        let out = collection_forward(&p.q(), &p.r(), z_val.view(), &full_support, alpha, sigma)?;
        let diff = &val_targets - &out;
        Ok(diff.mapv(|v| v * v).sum() / (val_targets.nrows() * d) as f64)
    };

    let mut log = Vec::new();
    let mut best_val = validate(&params)?;
    let mut best_epoch = 0;
    let mut best = params.clone();
    log.push(LogRecord::Epoch {
        epoch: 0,
        val_mse: best_val,
    });

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut steps_done = 0;
    let mut epoch = 0;
    let source_images = source.dataset().images();
    while steps_done < config.max_steps {
        epoch += 1;
        let mut order = rows.to_vec();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if steps_done >= config.max_steps {
                break;
            }
            let xb = source_images.select(Axis(0), batch);
            let epsb = gaussian_matrix(&mut rng, batch.len(), d);
            let zb = xb.mapv(|v| alpha * v) + epsb.mapv(|e| sigma * e);
            let targets = target.denoise_batch(zb.view(), t)?;

            let masked = source.masked(batch)?;
            let effective = match config.mc_support_size {
                Some(k) => masked.subsampled(k, rng.gen())?,
                None => masked,
            };
            let support = effective.support();
            let lg = finetune_grad(
                &params,
                zb.view(),
                targets.view(),
                &support,
                alpha,
                sigma,
                config.loss_weight,
            )?;
            if !lg.loss.is_finite() {
                return Err(FpmcError::numerical(format!(
                    "non-finite loss at optimizer step {steps_done} (epoch {epoch})"
                )));
            }
            if params.mode.tunes_q() {
                adamw_step(&mut theta_state, &mut params.theta, &lg.g_theta, &config.optimizer)?;
            }
            if params.mode.tunes_r() {
                adamw_step(&mut phi_state, &mut params.phi, &lg.g_phi, &config.optimizer)?;
            }
            if params.theta.iter().chain(params.phi.iter()).any(|v| !v.is_finite()) {
                return Err(FpmcError::numerical(format!(
                    "non-finite parameter after optimizer step {steps_done} (epoch {epoch})"
                )));
            }
            log.push(LogRecord::Step {
                step: steps_done,
                loss: lg.loss,
                batch: Some(batch.to_vec()),
                eps_digest: Some(crate::manifest::digest_matrix(epsb.view())),
            });
            steps_done += 1;
        }
        let val = validate(&params)?;
        log.push(LogRecord::Epoch {
            epoch,
            val_mse: val,
        });
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = params.clone();
        }
    }

    Ok(FinetuneOutcome {
        q: best.q(),
        r: best.r(),
        best_val_mse: best_val,
        best_epoch,
        log,
    })
}

/// Write a training log as JSON-lines.
pub fn write_log(path: &std::path::Path, log: &[LogRecord]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in log {
        serde_json::to_writer(&mut out, rec)?;
        writeln!(out)?;
    }
    Ok(())
}
