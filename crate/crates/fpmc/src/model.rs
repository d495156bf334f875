//! The collection denoiser: per-schedule-step sequences of query precisions,
//! response weights, and source measures, aggregated elementwise.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{FpmcError, Result};
use crate::estimator::{row_log_likelihoods, softmax_in_place};
use crate::geometry::ImageGeometry;
use crate::schedule::DiffusionSchedule;
use crate::source::SourceMeasure;
use crate::tensor_io;

/// How one step's source measures were produced; drives persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    /// Uniform over the base dataset, shared by every estimator.
    Uniform,
    /// Per-estimator weight vectors over the base dataset.
    Weights,
    /// Per-pixel translation-augmented datasets regenerated from the base
    /// dataset at load time (the equivariant construction).
    Translated { patch: usize },
}

/// Source measures for one schedule step.
#[derive(Debug, Clone)]
pub enum StepSources {
    /// All estimators share one measure.
    Shared(SourceMeasure),
    /// One measure per estimator (length L).
    PerEstimator(Vec<SourceMeasure>),
}

/// Parameters of one schedule step: L estimators over a common geometry.
#[derive(Debug, Clone)]
pub struct StepParams {
    pub t: f64,
    /// L x d query precisions (rows).
    pub q: Array2<f64>,
    /// L x d response weights (rows).
    pub r: Array2<f64>,
    pub sources: StepSources,
    pub source_kind: SourceKind,
    /// Elementwise sum of the rows of `r`; strictly positive (coverage).
    pub r_sum: Array1<f64>,
}

/// A full collection denoiser: one estimator set per schedule step.
#[derive(Debug, Clone)]
pub struct FpmcModel {
    geometry: ImageGeometry,
    schedule: DiffusionSchedule,
    dataset: Arc<Dataset>,
    steps: Vec<StepParams>,
}

/// Quantize through f32, the storage precision, so that saved and in-memory
/// models denoise identically.
fn quantize_f32(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| (v as f32) as f64)
}

/// Validate one step's shapes and coverage, returning the response sum.
fn validate_step(
    step_idx: usize,
    t: f64,
    q: &Array2<f64>,
    r: &Array2<f64>,
    sources: &StepSources,
    geometry: &ImageGeometry,
) -> Result<Array1<f64>> {
    let d = geometry.dim();
    let l = q.nrows();
    if l == 0 {
        return Err(FpmcError::validation(format!("step {step_idx}: no estimators")));
    }
    if q.ncols() != d || r.ncols() != d || r.nrows() != l {
        return Err(FpmcError::validation(format!(
            "step {step_idx}: Q is {}x{}, R is {}x{}, expected {l}x{d}",
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    for (name, m) in [("Q", q), ("R", r)] {
        if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(FpmcError::validation(format!(
                "step {step_idx}: {name} entries must be finite and >= 0"
            )));
        }
    }
    for (ell, row) in q.outer_iter().enumerate() {
        if !row.iter().any(|&v| v > 0.0) {
            return Err(FpmcError::validation(format!(
                "step {step_idx}: estimator {ell} has an all-zero query precision"
            )));
        }
    }
    match sources {
        StepSources::Shared(nu) => {
            if nu.dataset().dim() != d {
                return Err(FpmcError::validation(format!(
                    "step {step_idx}: source dimension {} != {d}",
                    nu.dataset().dim()
                )));
            }
        }
        StepSources::PerEstimator(nus) => {
            if nus.len() != l {
                return Err(FpmcError::validation(format!(
                    "step {step_idx}: {} source measures for {l} estimators",
                    nus.len()
                )));
            }
            for nu in nus {
                if nu.dataset().dim() != d {
                    return Err(FpmcError::validation(format!(
                        "step {step_idx}: source dimension {} != {d}",
                        nu.dataset().dim()
                    )));
                }
            }
        }
    }
    if !(t > 0.0) {
        return Err(FpmcError::validation(format!("step {step_idx}: t must be > 0")));
    }
    let r_sum = r.sum_axis(Axis(0));
    if let Some((j, _)) = r_sum.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        let (x, y, c) = geometry.coords(j);
        return Err(FpmcError::validation(format!(
            "step {step_idx}: coverage violation, total response weight is zero at \
             pixel ({x}, {y}) channel {c}"
        )));
    }
    Ok(r_sum)
}

impl FpmcModel {
    /// Assemble a model from per-step parameters. Coverage (a strictly
    /// positive response sum in every dimension) is validated here so
    /// denoising never divides by zero.
    pub fn new(
        geometry: ImageGeometry,
        schedule: DiffusionSchedule,
        dataset: Arc<Dataset>,
        steps: Vec<(Array2<f64>, Array2<f64>, StepSources, SourceKind)>,
    ) -> Result<Self> {
        if steps.len() != schedule.num_steps() {
            return Err(FpmcError::validation(format!(
                "{} step parameter sets for a {}-step schedule",
                steps.len(),
                schedule.num_steps()
            )));
        }
        if dataset.geometry() != geometry {
            return Err(FpmcError::validation("dataset geometry does not match model geometry"));
        }
        let mut built = Vec::with_capacity(steps.len());
        for (idx, (q, r, sources, source_kind)) in steps.into_iter().enumerate() {
            let t = schedule.t_grid()[idx];
            let q = quantize_f32(&q);
            let r = quantize_f32(&r);
            let r_sum = validate_step(idx, t, &q, &r, &sources, &geometry)?;
            built.push(StepParams {
                t,
                q,
                r,
                sources,
                source_kind,
                r_sum,
            });
        }
        Ok(FpmcModel {
            geometry,
            schedule,
            dataset,
            steps: built,
        })
    }

    pub fn geometry(&self) -> ImageGeometry {
        self.geometry
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, idx: usize) -> Result<&StepParams> {
        self.steps
            .get(idx)
            .ok_or_else(|| FpmcError::validation(format!("step index {idx} out of range")))
    }

    /// Replace the Q/R of one step (used after fine-tuning). Sources are
    /// kept; coverage is re-validated.
    pub fn with_step_params(&self, idx: usize, q: Array2<f64>, r: Array2<f64>) -> Result<Self> {
        let mut out = self.clone();
        let step = out
            .steps
            .get_mut(idx)
            .ok_or_else(|| FpmcError::validation(format!("step index {idx} out of range")))?;
        let q = quantize_f32(&q);
        let r = quantize_f32(&r);
        let r_sum = validate_step(idx, step.t, &q, &r, &step.sources, &out.geometry)?;
        step.q = q;
        step.r = r;
        step.r_sum = r_sum;
        Ok(out)
    }

    /// Denoise a batch (rows of `zs`) at a schedule step.
    pub fn denoise_at_step(&self, zs: ArrayView2<'_, f64>, step_idx: usize) -> Result<Array2<f64>> {
        let step = self.step(step_idx)?;
        if zs.ncols() != self.geometry.dim() {
            return Err(FpmcError::validation(format!(
                "input has {} columns, model dimension is {}",
                zs.ncols(),
                self.geometry.dim()
            )));
        }
        let alpha = self.schedule.alpha(step.t);
        let sigma = self.schedule.sigma(step.t);
        step_denoise_batch(zs, alpha, sigma, &step.q, &step.r, &step.r_sum, &step.sources)
    }

    /// Denoise a batch at a grid time (resolved to its schedule step).
    pub fn denoise_batch(&self, zs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let idx = self.schedule.step_of(t)?;
        self.denoise_at_step(zs, idx)
    }
}

/// Aggregate per-estimator means with response weights:
/// `(sum_l r_l * mu_l) / (sum_l r_l)` elementwise.
pub(crate) fn aggregate_responses(
    mus: &Array2<f64>,
    rs: ArrayView2<'_, f64>,
    r_sum: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let weighted = mus * &rs;
    let num = weighted.sum_axis(Axis(0));
    &num / &r_sum
}

/// Denoise every row of `zs` against one step's estimators.
///
/// Rows are independent; they are processed in parallel and written back in
/// order, so results do not depend on the thread count.
pub(crate) fn step_denoise_batch(
    zs: ArrayView2<'_, f64>,
    alpha: f64,
    sigma: f64,
    qmat: &Array2<f64>,
    rmat: &Array2<f64>,
    r_sum: &Array1<f64>,
    sources: &StepSources,
) -> Result<Array2<f64>> {
    let rows: Vec<Array1<f64>> = zs
        .outer_iter()
        .into_par_iter()
        .map(|z| step_denoise_one(z, alpha, sigma, qmat, rmat, r_sum, sources))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((zs.nrows(), zs.ncols()));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

fn step_denoise_one(
    z: ArrayView1<'_, f64>,
    alpha: f64,
    sigma: f64,
    qmat: &Array2<f64>,
    rmat: &Array2<f64>,
    r_sum: &Array1<f64>,
    sources: &StepSources,
) -> Result<Array1<f64>> {
    let l = qmat.nrows();
    let d = qmat.ncols();
    let mut mus = Array2::zeros((l, d));
    match sources {
        StepSources::Shared(nu) => {
            let support = nu.support();
            let xs = support.images.view();
            // Shared support: the squared residuals are independent of q, so
            // compute them once and take one matrix product for all L.
            let mut sq = xs.to_owned();
            for mut row in sq.outer_iter_mut() {
                for (v, &zv) in row.iter_mut().zip(z.iter()) {
                    let resid = alpha * *v - zv;
                    *v = resid * resid / (2.0 * sigma * sigma);
                }
            }
            let scores = sq.dot(&qmat.t()); // N x L, positive quadratic terms
            for ell in 0..l {
                let mut s = Array1::from_iter(
                    scores
                        .column(ell)
                        .iter()
                        .zip(support.log_weights.iter())
                        .map(|(&quad, &lw)| -quad + lw),
                );
                softmax_in_place(&mut s)?;
                mus.row_mut(ell).assign(&s.dot(&xs));
            }
        }
        StepSources::PerEstimator(nus) => {
            for (ell, nu) in nus.iter().enumerate() {
                let support = nu.support();
                let xs = support.images.view();
                let mut s = row_log_likelihoods(xs, z, qmat.row(ell), alpha, sigma);
                s += &support.log_weights;
                softmax_in_place(&mut s)?;
                mus.row_mut(ell).assign(&s.dot(&xs));
            }
        }
    }
    Ok(aggregate_responses(&mus, rmat.view(), r_sum.view()))
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StepManifest {
    index: usize,
    t: f64,
    estimators: usize,
    source: SourceKind,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    geometry: ImageGeometry,
    t_grid: Vec<f64>,
    steps: Vec<StepManifest>,
}

const MODEL_FORMAT: &str = "fpmc-model-v1";

impl FpmcModel {
    /// Persist to a directory: a JSON manifest, the base dataset, and per
    /// step binary tensors for Q, R, and (when needed) source weights.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = ModelManifest {
            format: MODEL_FORMAT.to_string(),
            geometry: self.geometry,
            t_grid: self.schedule.t_grid().to_vec(),
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(index, s)| StepManifest {
                    index,
                    t: s.t,
                    estimators: s.q.nrows(),
                    source: s.source_kind.clone(),
                })
                .collect(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        self.dataset.save(&dir.join("dataset.bin"))?;
        for (idx, step) in self.steps.iter().enumerate() {
            tensor_io::write_tensor(&dir.join(format!("step{idx:03}.q.bin")), self.geometry, &step.q)?;
            tensor_io::write_tensor(&dir.join(format!("step{idx:03}.r.bin")), self.geometry, &step.r)?;
            if step.source_kind == SourceKind::Weights {
                let weights = match &step.sources {
                    StepSources::Shared(nu) => {
                        let mut w = Array2::zeros((1, nu.len()));
                        w.row_mut(0).assign(nu.weights());
                        w
                    }
                    StepSources::PerEstimator(nus) => {
                        let mut w = Array2::zeros((nus.len(), self.dataset.len()));
                        for (i, nu) in nus.iter().enumerate() {
                            w.row_mut(i).assign(nu.weights());
                        }
                        w
                    }
                };
                let flat = ImageGeometry::new(weights.ncols(), 1, 1)?;
                tensor_io::write_tensor(&dir.join(format!("step{idx:03}.v.bin")), flat, &weights)?;
            }
        }
        Ok(())
    }

    /// Load a model persisted by [`save`](Self::save).
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != MODEL_FORMAT {
            return Err(FpmcError::io(format!("unknown model format {:?}", manifest.format)));
        }
        let schedule = DiffusionSchedule::new(manifest.t_grid)?;
        let dataset = crate::dataset::load_dataset_auto(&dir.join("dataset.bin"))?.shared();
        let geometry = manifest.geometry;
        let mut steps = Vec::with_capacity(manifest.steps.len());
        for sm in &manifest.steps {
            let (qg, q) = tensor_io::read_tensor(&dir.join(format!("step{:03}.q.bin", sm.index)))?;
            let (rg, r) = tensor_io::read_tensor(&dir.join(format!("step{:03}.r.bin", sm.index)))?;
            if qg.dim() != geometry.dim() || rg.dim() != geometry.dim() {
                return Err(FpmcError::io(format!("step {}: tensor dimensions disagree", sm.index)));
            }
            let sources = match &sm.source {
                SourceKind::Uniform => StepSources::Shared(SourceMeasure::uniform(dataset.clone())),
                SourceKind::Weights => {
                    let (_, w) = tensor_io::read_tensor(&dir.join(format!("step{:03}.v.bin", sm.index)))?;
                    if w.nrows() == 1 {
                        StepSources::Shared(SourceMeasure::with_weights(
                            dataset.clone(),
                            w.row(0).to_owned(),
                        )?)
                    } else {
                        let mut nus = Vec::with_capacity(w.nrows());
                        for row in w.outer_iter() {
                            nus.push(SourceMeasure::with_weights(dataset.clone(), row.to_owned())?);
                        }
                        StepSources::PerEstimator(nus)
                    }
                }
                SourceKind::Translated { patch } => StepSources::PerEstimator(
                    crate::constructors::els_step_sources(&dataset, *patch)?,
                ),
            };
            steps.push((q, r, sources, sm.source.clone()));
        }
        FpmcModel::new(geometry, schedule, dataset, steps)
    }
}
