//! Constructors for the prior denoiser families: square-patch collections,
//! per-pixel local and equivariant collections, sensitivity-map thresholding,
//! and Wiener-row thresholding.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::classical::{wiener_matrix, WienerModel};
use crate::dataset::Dataset;
use crate::error::{FpmcError, Result};
use crate::geometry::ImageGeometry;
use crate::model::{FpmcModel, SourceKind, StepSources};
use crate::schedule::DiffusionSchedule;
use crate::source::SourceMeasure;
use crate::tensor_io;

// ---------------------------------------------------------------------------
// Schedule tables
// ---------------------------------------------------------------------------

/// One per-step hyperparameter entry: a patch size or a threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub step: usize,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// Per-step hyperparameters for the patch- and threshold-based constructors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleTable {
    pub entries: Vec<ScheduleEntry>,
}

impl ScheduleTable {
    pub fn from_patch_sizes(sched: &DiffusionSchedule, sizes: &[usize]) -> Result<Self> {
        if sizes.len() != sched.num_steps() {
            return Err(FpmcError::validation(format!(
                "{} patch sizes for a {}-step schedule",
                sizes.len(),
                sched.num_steps()
            )));
        }
        if sizes.contains(&0) {
            return Err(FpmcError::validation("patch sizes must be >= 1"));
        }
        Ok(ScheduleTable {
            entries: sizes
                .iter()
                .enumerate()
                .map(|(step, &s)| ScheduleEntry {
                    step,
                    t: sched.t_grid()[step],
                    s: Some(s),
                    tau: None,
                })
                .collect(),
        })
    }

    pub fn from_taus(sched: &DiffusionSchedule, taus: &[f64]) -> Result<Self> {
        if taus.len() != sched.num_steps() {
            return Err(FpmcError::validation(format!(
                "{} thresholds for a {}-step schedule",
                taus.len(),
                sched.num_steps()
            )));
        }
        if taus.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(FpmcError::validation("thresholds must lie in (0, 1]"));
        }
        Ok(ScheduleTable {
            entries: taus
                .iter()
                .enumerate()
                .map(|(step, &tau)| ScheduleEntry {
                    step,
                    t: sched.t_grid()[step],
                    s: None,
                    tau: Some(tau),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn patch_size(&self, step: usize) -> Result<usize> {
        self.entries
            .get(step)
            .and_then(|e| e.s)
            .ok_or_else(|| FpmcError::validation(format!("no patch size for step {step}")))
    }

    pub fn tau(&self, step: usize) -> Result<f64> {
        self.entries
            .get(step)
            .and_then(|e| e.tau)
            .ok_or_else(|| FpmcError::validation(format!("no threshold for step {step}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_vec_pretty(&self.entries)?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<ScheduleEntry> = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(ScheduleTable { entries })
    }
}

// ---------------------------------------------------------------------------
// Patch indicators
// ---------------------------------------------------------------------------

/// Binary indicator of the `s x s` square centered at pixel `(x, y)`, clipped
/// to the image; all channels of a covered pixel are set.
pub fn square_patch_indicator(
    x: usize,
    y: usize,
    s: usize,
    geom: &ImageGeometry,
) -> Result<Array1<f64>> {
    if x >= geom.width || y >= geom.height {
        return Err(FpmcError::validation(format!(
            "patch center ({x}, {y}) out of range for {geom}"
        )));
    }
    if s == 0 || s.is_multiple_of(2) {
        return Err(FpmcError::validation(format!("patch size must be odd and >= 1, got {s}")));
    }
    let k = s / 2;
    let mut mask = Array1::zeros(geom.dim());
    let x_lo = x.saturating_sub(k);
    let x_hi = (x + k).min(geom.width - 1);
    let y_lo = y.saturating_sub(k);
    let y_hi = (y + k).min(geom.height - 1);
    for j in y_lo..=y_hi {
        for i in x_lo..=x_hi {
            for c in 0..geom.channels {
                mask[geom.flat_index(i, j, c)] = 1.0;
            }
        }
    }
    Ok(mask)
}

/// Centers of all fully interior `s x s` patches, in raster order:
/// `x, y in {floor(s/2), ..., W - floor(s/2) - 1}`. For `s <= 1` this is
/// every pixel.
pub fn interior_centers(s: usize, geom: &ImageGeometry) -> Result<Vec<(usize, usize)>> {
    if s > geom.width.min(geom.height) {
        return Err(FpmcError::validation(format!(
            "patch size {s} exceeds image extent {}x{}",
            geom.width, geom.height
        )));
    }
    let k = s / 2;
    let mut centers = Vec::new();
    for y in k..geom.height - k {
        for x in k..geom.width - k {
            centers.push((x, y));
        }
    }
    Ok(centers)
}

/// All pixels in raster order (the `s = 0` center set).
pub fn all_pixels(geom: &ImageGeometry) -> Vec<(usize, usize)> {
    interior_centers(0, geom).expect("s = 0 is always valid")
}

// ---------------------------------------------------------------------------
// Square-patch collection
// ---------------------------------------------------------------------------

/// Square-patch collection: one estimator per interior center, with the patch
/// indicator used both as query precision and response weight, uniform
/// sources. A step whose patch size reaches the image extent collapses to a
/// single full-image estimator (the plain posterior mean).
pub fn build_pspc_square(
    s_table: &ScheduleTable,
    data: &Arc<Dataset>,
    sched: &DiffusionSchedule,
) -> Result<FpmcModel> {
    let geom = data.geometry();
    let d = geom.dim();
    if s_table.len() != sched.num_steps() {
        return Err(FpmcError::validation("schedule table does not match schedule length"));
    }
    let mut steps = Vec::with_capacity(sched.num_steps());
    for step in 0..sched.num_steps() {
        let s = s_table.patch_size(step)?;
        let (q, r) = if s >= geom.width.max(geom.height) {
            (Array2::ones((1, d)), Array2::ones((1, d)))
        } else {
            if s % 2 == 0 {
                return Err(FpmcError::validation(format!(
                    "step {step}: interior patch size must be odd, got {s}"
                )));
            }
            let centers = interior_centers(s, &geom)?;
            let mut q = Array2::zeros((centers.len(), d));
            for (ell, &(x, y)) in centers.iter().enumerate() {
                q.row_mut(ell).assign(&square_patch_indicator(x, y, s, &geom)?);
            }
            (q.clone(), q)
        };
        steps.push((
            q,
            r,
            StepSources::Shared(SourceMeasure::uniform(data.clone())),
            SourceKind::Uniform,
        ));
    }
    FpmcModel::new(geom, sched.clone(), data.clone(), steps)
}

// ---------------------------------------------------------------------------
// Local collection (clipped patches at every pixel, one-pixel responses)
// ---------------------------------------------------------------------------

fn per_pixel_patch_qr(
    s: usize,
    geom: &ImageGeometry,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if s.is_multiple_of(2) {
        return Err(FpmcError::validation(format!("patch size must be odd, got {s}")));
    }
    let d = geom.dim();
    let pixels = all_pixels(geom);
    let mut q = Array2::zeros((pixels.len(), d));
    let mut r = Array2::zeros((pixels.len(), d));
    for (ell, &(x, y)) in pixels.iter().enumerate() {
        q.row_mut(ell).assign(&square_patch_indicator(x, y, s, geom)?);
        for c in 0..geom.channels {
            r[[ell, geom.flat_index(x, y, c)]] = 1.0;
        }
    }
    Ok((q, r))
}

/// Local collection: clipped square patches centered at every pixel as query
/// precisions, one-pixel indicators as responses (so the responses partition
/// the dimensions exactly), uniform sources.
pub fn build_ls(
    s_table: &ScheduleTable,
    data: &Arc<Dataset>,
    sched: &DiffusionSchedule,
) -> Result<FpmcModel> {
    let geom = data.geometry();
    if s_table.len() != sched.num_steps() {
        return Err(FpmcError::validation("schedule table does not match schedule length"));
    }
    let mut steps = Vec::with_capacity(sched.num_steps());
    for step in 0..sched.num_steps() {
        let s = s_table.patch_size(step)?;
        let (q, r) = per_pixel_patch_qr(s, &geom)?;
        steps.push((
            q,
            r,
            StepSources::Shared(SourceMeasure::uniform(data.clone())),
            SourceKind::Uniform,
        ));
    }
    FpmcModel::new(geom, sched.clone(), data.clone(), steps)
}

// ---------------------------------------------------------------------------
// Equivariant local collection
// ---------------------------------------------------------------------------

/// Zero-padding shift: `out(x, y) = img(x + dx, y + dy)`, zero outside.
fn shift_image(
    img: ndarray::ArrayView1<'_, f64>,
    dx: i64,
    dy: i64,
    geom: &ImageGeometry,
) -> Array1<f64> {
    let mut out = Array1::zeros(geom.dim());
    for y in 0..geom.height as i64 {
        for x in 0..geom.width as i64 {
            let sx = x + dx;
            let sy = y + dy;
            if sx < 0 || sy < 0 || sx >= geom.width as i64 || sy >= geom.height as i64 {
                continue;
            }
            for c in 0..geom.channels {
                out[geom.flat_index(x as usize, y as usize, c)] =
                    img[geom.flat_index(sx as usize, sy as usize, c)];
            }
        }
    }
    out
}

/// The set of valid translations for the patch centered at `(x, y)` with
/// size `s`: full two-dimensional sliding for interior centers, sliding along
/// one axis for edge bands, and the identity for corners.
pub fn els_translations(x: usize, y: usize, s: usize, geom: &ImageGeometry) -> Vec<(i64, i64)> {
    let k = (s / 2) as i64;
    let (w, h) = (geom.width as i64, geom.height as i64);
    let (xi, yi) = (x as i64, y as i64);
    let central_x = k <= xi && xi <= w - k + 1;
    let central_y = k <= yi && yi <= h - k + 1;
    let x_range = || (k - xi)..(w - xi - k);
    let y_range = || (k - yi)..(h - yi - k);
    match (central_x, central_y) {
        (true, true) => {
            let mut v = Vec::new();
            for i in x_range() {
                for j in y_range() {
                    v.push((i, j));
                }
            }
            v
        }
        (true, false) => x_range().map(|i| (i, 0)).collect(),
        (false, true) => y_range().map(|j| (0, j)).collect(),
        (false, false) => vec![(0, 0)],
    }
}

/// Per-pixel translation-augmented source measures for the equivariant
/// collection: every estimator is uniform over the multiset of shifted
/// images its translation set produces. All measures share one pooled
/// dataset of distinct shifts.
pub(crate) fn els_step_sources(data: &Arc<Dataset>, s: usize) -> Result<Vec<SourceMeasure>> {
    let geom = data.geometry();
    let pixels = all_pixels(&geom);
    let per_pixel: Vec<Vec<(i64, i64)>> = pixels
        .iter()
        .map(|&(x, y)| els_translations(x, y, s, &geom))
        .collect();

    let mut shifts = BTreeSet::new();
    for set in &per_pixel {
        shifts.extend(set.iter().copied());
    }
    let shifts: Vec<(i64, i64)> = shifts.into_iter().collect();
    let shift_index: std::collections::HashMap<(i64, i64), usize> =
        shifts.iter().enumerate().map(|(i, &sh)| (sh, i)).collect();

    let n = data.len();
    let mut pool = Array2::zeros((shifts.len() * n, geom.dim()));
    for (si, &(dx, dy)) in shifts.iter().enumerate() {
        for (ni, img) in data.images().outer_iter().enumerate() {
            pool.row_mut(si * n + ni).assign(&shift_image(img, dx, dy, &geom));
        }
    }
    let pool = Dataset::new(geom, pool)?.shared();

    per_pixel
        .iter()
        .map(|set| {
            let mut weights = Array1::zeros(pool.len());
            for sh in set {
                let si = shift_index[sh];
                for ni in 0..n {
                    weights[si * n + ni] = 1.0;
                }
            }
            SourceMeasure::with_weights(pool.clone(), weights)
        })
        .collect()
}

/// Equivariant local collection: the local collection's query precisions and
/// responses with per-pixel translation-augmented sources.
pub fn build_els(
    s_table: &ScheduleTable,
    data: &Arc<Dataset>,
    sched: &DiffusionSchedule,
) -> Result<FpmcModel> {
    let geom = data.geometry();
    if s_table.len() != sched.num_steps() {
        return Err(FpmcError::validation("schedule table does not match schedule length"));
    }
    let mut steps = Vec::with_capacity(sched.num_steps());
    for step in 0..sched.num_steps() {
        let s = s_table.patch_size(step)?;
        let (q, r) = per_pixel_patch_qr(s, &geom)?;
        let sources = els_step_sources(data, s)?;
        steps.push((
            q,
            r,
            StepSources::PerEstimator(sources),
            SourceKind::Translated { patch: s },
        ));
    }
    FpmcModel::new(geom, sched.clone(), data.clone(), steps)
}

// ---------------------------------------------------------------------------
// Cumulative thresholding and sensitivity maps
// ---------------------------------------------------------------------------

/// Select pixels in descending order of channel-averaged map value (ties
/// broken by ascending pixel index) until their cumulative sum reaches
/// `tau` times the total; returns the indicator with all channels of the
/// selected pixels set.
pub fn cumulative_threshold_mask(
    map: ndarray::ArrayView1<'_, f64>,
    tau: f64,
    geom: &ImageGeometry,
) -> Result<Array1<f64>> {
    if map.len() != geom.dim() {
        return Err(FpmcError::validation("map length does not match geometry"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(FpmcError::validation(format!("threshold must lie in (0, 1], got {tau}")));
    }
    if map.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(FpmcError::validation("map entries must be finite and >= 0"));
    }
    let pixels = geom.pixels();
    let mut scores = vec![0.0f64; pixels];
    for (flat, &v) in map.iter().enumerate() {
        scores[flat / geom.channels] += v;
    }
    for s in scores.iter_mut() {
        *s /= geom.channels as f64;
    }
    if !scores.iter().any(|&s| s > 0.0) {
        return Err(FpmcError::validation("all-zero sensitivity map"));
    }
    let mut order: Vec<usize> = (0..pixels).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    // Total accumulated in selection order so the tau = 1 prefix is exactly
    // the positive entries regardless of summation rounding.
    let total: f64 = order.iter().map(|&p| scores[p]).sum();
    let target = tau * total;
    let mut mask = Array1::zeros(geom.dim());
    let mut cum = 0.0;
    for &p in &order {
        if scores[p] <= 0.0 {
            break;
        }
        cum += scores[p];
        let (x, y) = (p % geom.width, p / geom.width);
        for c in 0..geom.channels {
            mask[geom.flat_index(x, y, c)] = 1.0;
        }
        if cum >= target {
            break;
        }
    }
    Ok(mask)
}

/// Per-pixel, per-step sensitivity maps consumed from files (or generated
/// synthetically for testing).
#[derive(Debug, Clone)]
pub struct SensitivityMaps {
    geometry: ImageGeometry,
    /// One matrix per step: `H * W` rows (raster order), `d` columns.
    maps: Vec<Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MapsManifest {
    format: String,
    geometry: ImageGeometry,
    steps: usize,
}

const MAPS_FORMAT: &str = "fpmc-maps-v1";

impl SensitivityMaps {
    pub fn new(geometry: ImageGeometry, maps: Vec<Array2<f64>>) -> Result<Self> {
        for (i, m) in maps.iter().enumerate() {
            if m.nrows() != geometry.pixels() || m.ncols() != geometry.dim() {
                return Err(FpmcError::validation(format!(
                    "step {i}: map matrix is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    geometry.pixels(),
                    geometry.dim()
                )));
            }
            if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(FpmcError::validation(format!(
                    "step {i}: map entries must be finite and >= 0"
                )));
            }
        }
        Ok(SensitivityMaps { geometry, maps })
    }

    pub fn geometry(&self) -> ImageGeometry {
        self.geometry
    }

    pub fn num_steps(&self) -> usize {
        self.maps.len()
    }

    pub fn step(&self, idx: usize) -> &Array2<f64> {
        &self.maps[idx]
    }

    /// Manifest plus one tensor of shape `(steps * H * W) x d`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = MapsManifest {
            format: MAPS_FORMAT.to_string(),
            geometry: self.geometry,
            steps: self.maps.len(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        let pixels = self.geometry.pixels();
        let mut stacked = Array2::zeros((self.maps.len() * pixels, self.geometry.dim()));
        for (i, m) in self.maps.iter().enumerate() {
            stacked.slice_mut(ndarray::s![i * pixels..(i + 1) * pixels, ..]).assign(m);
        }
        // Maps are unconstrained nonnegative tensors; bypass the [-1,1]
        // dataset container semantics but reuse the same binary layout.
        tensor_io::write_tensor(&dir.join("maps.bin"), self.geometry, &stacked)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: MapsManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != MAPS_FORMAT {
            return Err(FpmcError::io(format!("unknown maps format {:?}", manifest.format)));
        }
        let (geom, stacked) = tensor_io::read_tensor(&dir.join("maps.bin"))?;
        if geom != manifest.geometry {
            return Err(FpmcError::io("maps tensor geometry disagrees with manifest"));
        }
        let pixels = geom.pixels();
        if stacked.nrows() != manifest.steps * pixels {
            return Err(FpmcError::io("maps tensor row count disagrees with manifest"));
        }
        let maps = (0..manifest.steps)
            .map(|i| stacked.slice(ndarray::s![i * pixels..(i + 1) * pixels, ..]).to_owned())
            .collect();
        SensitivityMaps::new(geom, maps)
    }
}

/// Synthetic isotropic-bump maps for testing: the map for pixel `(x, y)` is
/// `exp(-((i-x)^2 + (j-y)^2) / (2 width^2))` over input pixels `(i, j)`,
/// replicated across channels, one width per step.
pub fn synthetic_bump_maps(geometry: ImageGeometry, widths: &[f64]) -> Result<SensitivityMaps> {
    if widths.iter().any(|&w| !(w > 0.0)) {
        return Err(FpmcError::validation("bump widths must be > 0"));
    }
    let maps = widths
        .iter()
        .map(|&w| {
            let inv = 1.0 / (2.0 * w * w);
            let mut m = Array2::zeros((geometry.pixels(), geometry.dim()));
            for (p, &(x, y)) in all_pixels(&geometry).iter().enumerate() {
                for j in 0..geometry.height {
                    for i in 0..geometry.width {
                        let dx = i as f64 - x as f64;
                        let dy = j as f64 - y as f64;
                        let v = (-(dx * dx + dy * dy) * inv).exp();
                        for c in 0..geometry.channels {
                            m[[p, geometry.flat_index(i, j, c)]] = v;
                        }
                    }
                }
            }
            m
        })
        .collect();
    SensitivityMaps::new(geometry, maps)
}

/// Threshold-selected collection from sensitivity maps: per pixel, the
/// cumulative-threshold mask is both query precision and response weight.
pub fn build_pspc_flex(
    maps: &SensitivityMaps,
    tau_table: &ScheduleTable,
    data: &Arc<Dataset>,
    sched: &DiffusionSchedule,
) -> Result<FpmcModel> {
    let geom = data.geometry();
    if maps.geometry() != geom {
        return Err(FpmcError::validation("map geometry does not match dataset geometry"));
    }
    if maps.num_steps() != sched.num_steps() || tau_table.len() != sched.num_steps() {
        return Err(FpmcError::validation(format!(
            "maps have {} steps, table has {}, schedule has {}",
            maps.num_steps(),
            tau_table.len(),
            sched.num_steps()
        )));
    }
    let d = geom.dim();
    let pixels = geom.pixels();
    let mut steps = Vec::with_capacity(sched.num_steps());
    for step in 0..sched.num_steps() {
        let tau = tau_table.tau(step)?;
        let step_maps = maps.step(step);
        let mut q = Array2::zeros((pixels, d));
        for p in 0..pixels {
            q.row_mut(p)
                .assign(&cumulative_threshold_mask(step_maps.row(p), tau, &geom)?);
        }
        steps.push((
            q.clone(),
            q,
            StepSources::Shared(SourceMeasure::uniform(data.clone())),
            SourceKind::Uniform,
        ));
    }
    FpmcModel::new(geom, sched.clone(), data.clone(), steps)
}

/// Pixels whose own threshold mask does not contain them, per step.
/// The construction does not force self-inclusion; callers may want to
/// surface these.
pub fn flex_self_inclusion_misses(
    maps: &SensitivityMaps,
    tau_table: &ScheduleTable,
) -> Result<Vec<(usize, usize, usize)>> {
    let geom = maps.geometry();
    let mut misses = Vec::new();
    for step in 0..maps.num_steps() {
        let tau = tau_table.tau(step)?;
        let step_maps = maps.step(step);
        for (p, &(x, y)) in all_pixels(&geom).iter().enumerate() {
            let mask = cumulative_threshold_mask(step_maps.row(p), tau, &geom)?;
            if mask[geom.flat_index(x, y, 0)] == 0.0 {
                misses.push((step, x, y));
            }
        }
    }
    Ok(misses)
}

// ---------------------------------------------------------------------------
// Wiener-row thresholding
// ---------------------------------------------------------------------------

/// Wiener-row collection: per output dimension, rescale the corresponding
/// Wiener filter row by its maximum and threshold at `tau` to obtain the
/// query precision; responses are one-hot. A degenerate row (nonpositive
/// maximum) falls back to the one-hot precision.
pub fn build_lukoianov(
    wiener: &WienerModel,
    tau: f64,
    data: &Arc<Dataset>,
    sched: &DiffusionSchedule,
) -> Result<FpmcModel> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(FpmcError::validation(format!("threshold must lie in (0, 1), got {tau}")));
    }
    let geom = data.geometry();
    let d = geom.dim();
    if wiener.dim() != d {
        return Err(FpmcError::validation("Wiener model dimension does not match dataset"));
    }
    let mut steps = Vec::with_capacity(sched.num_steps());
    for step in 0..sched.num_steps() {
        let t = sched.t_grid()[step];
        let w = wiener_matrix(wiener, t, sched)?;
        let mut q = Array2::zeros((d, d));
        let mut r = Array2::zeros((d, d));
        for ell in 0..d {
            let row = w.row(ell);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > 0.0 {
                for (j, &v) in row.iter().enumerate() {
                    if v / max > tau {
                        q[[ell, j]] = 1.0;
                    }
                }
            } else {
                q[[ell, ell]] = 1.0;
            }
            r[[ell, ell]] = 1.0;
        }
        steps.push((
            q,
            r,
            StepSources::Shared(SourceMeasure::uniform(data.clone())),
            SourceKind::Uniform,
        ));
    }
    FpmcModel::new(geom, sched.clone(), data.clone(), steps)
}

/// Trivial collection: one full-image estimator per step (the plain
/// empirical posterior mean as a collection model).
pub fn build_optimal(data: &Arc<Dataset>, sched: &DiffusionSchedule) -> Result<FpmcModel> {
    let geom = data.geometry();
    let d = geom.dim();
    let steps = (0..sched.num_steps())
        .map(|_| {
            (
                Array2::ones((1, d)),
                Array2::ones((1, d)),
                StepSources::Shared(SourceMeasure::uniform(data.clone())),
                SourceKind::Uniform,
            )
        })
        .collect();
    FpmcModel::new(geom, sched.clone(), data.clone(), steps)
}
