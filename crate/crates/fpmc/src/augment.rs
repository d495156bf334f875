//! Source-distribution augmentation: reflections, translations, rotations,
//! scalings, synthetic ingestion, label-hash deduplication, and subsampling.
//!
//! Geometric transforms use bilinear interpolation with reflection padding
//! (no edge repeat); scaling up center-crops back to the original geometry.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{FpmcError, Result};
use crate::geometry::ImageGeometry;

/// Augmentation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    HFlip,
    VFlip,
    Translate,
    Rotate,
    Scale,
}

impl Strategy {
    pub fn is_reflection(self) -> bool {
        matches!(self, Strategy::HFlip | Strategy::VFlip)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hflip" => Ok(Strategy::HFlip),
            "vflip" => Ok(Strategy::VFlip),
            "translate" => Ok(Strategy::Translate),
            "rotate" => Ok(Strategy::Rotate),
            "scale" => Ok(Strategy::Scale),
            other => Err(FpmcError::validation(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Parameters identifying one augmented image; hashable for deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationLabel {
    pub strategy: Strategy,
    pub source_index: usize,
    /// Transform parameters: empty for reflections, `[dx, dy]` for
    /// translations, `[theta]` for rotations, `[s]` for scalings.
    pub params: Vec<f64>,
}

impl AugmentationLabel {
    /// Canonical key: parameters quantized to 1e-6 so float noise cannot
    /// defeat duplicate detection.
    pub fn key(&self) -> String {
        let mut key = format!("{:?}:{}", self.strategy, self.source_index);
        for p in &self.params {
            key.push_str(&format!(":{}", (p * 1e6).round() as i64));
        }
        key
    }
}

/// Drop labels whose canonical key was already seen, preserving order.
pub fn dedup_labels(labels: Vec<AugmentationLabel>) -> Vec<AugmentationLabel> {
    let mut seen = HashSet::new();
    labels
        .into_iter()
        .filter(|l| seen.insert(l.key()))
        .collect()
}

/// An augmentation request: the strategy, the target number of augmented
/// images, the per-image pool size for parametric strategies, and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub strategy: Strategy,
    /// Requested size of the augmented portion.
    pub target: usize,
    /// Candidates generated per source image before subsampling.
    pub pool_per_image: usize,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn new(strategy: Strategy, target: usize, seed: u64) -> Self {
        AugmentPlan {
            strategy,
            target,
            pool_per_image: 20,
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Mirror an out-of-range index back into `[0, n)` without repeating the
/// edge sample.
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn bilinear_sample(
    img: ArrayView1<'_, f64>,
    geom: &ImageGeometry,
    sx: f64,
    sy: f64,
    c: usize,
) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let at = |xi: i64, yi: i64| {
        img[geom.flat_index(reflect_index(xi, geom.width), reflect_index(yi, geom.height), c)]
    };
    let v00 = at(x0, y0);
    let v10 = at(x0 + 1, y0);
    let v01 = at(x0, y0 + 1);
    let v11 = at(x0 + 1, y0 + 1);
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
}

/// Horizontal mirror (exact index permutation).
pub fn hflip(img: ArrayView1<'_, f64>, geom: &ImageGeometry) -> Array1<f64> {
    let mut out = Array1::zeros(geom.dim());
    for y in 0..geom.height {
        for x in 0..geom.width {
            for c in 0..geom.channels {
                out[geom.flat_index(x, y, c)] = img[geom.flat_index(geom.width - 1 - x, y, c)];
            }
        }
    }
    out
}

/// Vertical mirror (exact index permutation).
pub fn vflip(img: ArrayView1<'_, f64>, geom: &ImageGeometry) -> Array1<f64> {
    let mut out = Array1::zeros(geom.dim());
    for y in 0..geom.height {
        for x in 0..geom.width {
            for c in 0..geom.channels {
                out[geom.flat_index(x, y, c)] = img[geom.flat_index(x, geom.height - 1 - y, c)];
            }
        }
    }
    out
}

/// Shift by `(dx, dy)` pixels (fractional offsets interpolate bilinearly),
/// reflection-padded: `out(x, y) = in(x - dx, y - dy)`.
pub fn translate(img: ArrayView1<'_, f64>, geom: &ImageGeometry, dx: f64, dy: f64) -> Array1<f64> {
    let mut out = Array1::zeros(geom.dim());
    for y in 0..geom.height {
        for x in 0..geom.width {
            let sx = x as f64 - dx;
            let sy = y as f64 - dy;
            for c in 0..geom.channels {
                out[geom.flat_index(x, y, c)] = bilinear_sample(img, geom, sx, sy, c);
            }
        }
    }
    out
}

/// Rotate by `theta` radians about the image center, reflection-padded.
pub fn rotate(img: ArrayView1<'_, f64>, geom: &ImageGeometry, theta: f64) -> Array1<f64> {
    let cx = (geom.width as f64 - 1.0) / 2.0;
    let cy = (geom.height as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    let mut out = Array1::zeros(geom.dim());
    for y in 0..geom.height {
        for x in 0..geom.width {
            let rx = x as f64 - cx;
            let ry = y as f64 - cy;
            // Inverse rotation of the sampling grid.
            let sx = cx + cos * rx + sin * ry;
            let sy = cy - sin * rx + cos * ry;
            for c in 0..geom.channels {
                out[geom.flat_index(x, y, c)] = bilinear_sample(img, geom, sx, sy, c);
            }
        }
    }
    out
}

/// Rescale by factor `s` about the image center. Upscaling (`s > 1`)
/// center-crops back to the original geometry; downscaling reflection-pads.
pub fn scale(img: ArrayView1<'_, f64>, geom: &ImageGeometry, s: f64) -> Result<Array1<f64>> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(FpmcError::validation(format!("scale factor must be > 0, got {s}")));
    }
    let cx = (geom.width as f64 - 1.0) / 2.0;
    let cy = (geom.height as f64 - 1.0) / 2.0;
    let mut out = Array1::zeros(geom.dim());
    for y in 0..geom.height {
        for x in 0..geom.width {
            let sx = cx + (x as f64 - cx) / s;
            let sy = cy + (y as f64 - cy) / s;
            for c in 0..geom.channels {
                out[geom.flat_index(x, y, c)] = bilinear_sample(img, geom, sx, sy, c);
            }
        }
    }
    Ok(out)
}

fn apply_label(
    img: ArrayView1<'_, f64>,
    geom: &ImageGeometry,
    label: &AugmentationLabel,
) -> Result<Array1<f64>> {
    match label.strategy {
        Strategy::HFlip => Ok(hflip(img, geom)),
        Strategy::VFlip => Ok(vflip(img, geom)),
        Strategy::Translate => Ok(translate(img, geom, label.params[0], label.params[1])),
        Strategy::Rotate => Ok(rotate(img, geom, label.params[0])),
        Strategy::Scale => scale(img, geom, label.params[0]),
    }
}

fn sample_params(strategy: Strategy, geom: &ImageGeometry, rng: &mut ChaCha12Rng) -> Vec<f64> {
    match strategy {
        Strategy::HFlip | Strategy::VFlip => Vec::new(),
        Strategy::Translate => {
            let ex: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            vec![ex * geom.width as f64 / 8.0, ey * geom.height as f64 / 8.0]
        }
        Strategy::Rotate => vec![rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)],
        Strategy::Scale => {
            let e: f64 = rng.sample(StandardNormal);
            vec![(0.2 * e).exp()]
        }
    }
}

/// Augmented-portion ledger entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub source_index: usize,
    pub strategy: Strategy,
    pub params: Vec<f64>,
    /// Row of the augmented image in the returned union dataset.
    pub output_index: usize,
}

/// Generate an augmented dataset: sample per-image candidate labels, dedup,
/// subsample to the plan's target (an equal per-image quota for the bulk,
/// one extra for a random image subset for the remainder), and return the
/// union dataset together with the label ledger.
pub fn build_augmented(data: &Dataset, plan: &AugmentPlan) -> Result<(Dataset, Vec<LedgerEntry>)> {
    let n = data.len();
    let geom = data.geometry();
    if plan.target == 0 {
        return Err(FpmcError::validation("augmentation target must be >= 1"));
    }
    let pool_cap = if plan.strategy.is_reflection() { 1 } else { plan.pool_per_image };
    if plan.target > n * pool_cap {
        return Err(FpmcError::validation(format!(
            "infeasible plan: target {} exceeds {} candidates ({} per source image)",
            plan.target,
            n * pool_cap,
            pool_cap
        )));
    }
    let quota = plan.target / n;
    let remainder = plan.target % n;
    if quota + 1 > pool_cap && remainder > 0 || quota > pool_cap {
        return Err(FpmcError::validation(
            "infeasible plan: per-image quota exceeds the candidate pool",
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(plan.seed);
    // Candidate pools, deduplicated by label key.
    let mut pools: Vec<Vec<AugmentationLabel>> = Vec::with_capacity(n);
    for source_index in 0..n {
        let mut pool = Vec::with_capacity(pool_cap);
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while pool.len() < pool_cap && attempts < pool_cap * 20 {
            attempts += 1;
            let label = AugmentationLabel {
                strategy: plan.strategy,
                source_index,
                params: sample_params(plan.strategy, &geom, &mut rng),
            };
            if seen.insert(label.key()) {
                pool.push(label);
            }
        }
        pools.push(pool);
    }

    // Which images receive one extra augmentation beyond the quota.
    let mut extra: Vec<usize> = (0..n).collect();
    extra.shuffle(&mut rng);
    let extra: HashSet<usize> = extra.into_iter().take(remainder).collect();

    let mut chosen: Vec<AugmentationLabel> = Vec::with_capacity(plan.target);
    for (source_index, pool) in pools.iter_mut().enumerate() {
        let want = quota + usize::from(extra.contains(&source_index));
        if pool.len() < want {
            return Err(FpmcError::validation(format!(
                "source image {source_index} produced only {} distinct augmentations, need {want}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        chosen.extend(pool.drain(..want));
    }
    debug_assert_eq!(chosen.len(), plan.target);

    let mut augmented = Array2::zeros((plan.target, geom.dim()));
    let mut ledger = Vec::with_capacity(plan.target);
    for (j, label) in chosen.iter().enumerate() {
        let img = apply_label(data.image(label.source_index), &geom, label)?;
        augmented.row_mut(j).assign(&img);
        ledger.push(LedgerEntry {
            source_index: label.source_index,
            strategy: label.strategy,
            params: label.params.clone(),
            output_index: n + j,
        });
    }
    let union = data.concat(&Dataset::new(geom, augmented)?)?;
    Ok((union, ledger))
}

/// Union with the first `count` rows of an externally generated dataset.
pub fn ingest_synthetic(data: &Dataset, synthetic: &Dataset, count: usize) -> Result<Dataset> {
    if data.geometry() != synthetic.geometry() {
        return Err(FpmcError::validation(format!(
            "geometry mismatch: {} vs {}",
            data.geometry(),
            synthetic.geometry()
        )));
    }
    if count == 0 {
        return Ok(data.clone());
    }
    if count > synthetic.len() {
        return Err(FpmcError::validation(format!(
            "requested {count} synthetic images, only {} available",
            synthetic.len()
        )));
    }
    let take: Vec<usize> = (0..count).collect();
    data.concat(&synthetic.select(&take)?)
}

/// Reject synthetic data whose generation seed collides with any seed
/// reserved for evaluation.
pub fn check_seed_disjoint(synthetic_seed: u64, reserved: &[u64]) -> Result<()> {
    if reserved.contains(&synthetic_seed) {
        return Err(FpmcError::validation(format!(
            "synthetic dataset was generated with seed {synthetic_seed}, which is reserved for evaluation"
        )));
    }
    Ok(())
}

/// Write a label ledger as JSON-lines.
pub fn write_ledger(path: &std::path::Path, ledger: &[LedgerEntry]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for entry in ledger {
        serde_json::to_writer(&mut out, entry)?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::{prop_assert, proptest};

    fn geom(w: usize, h: usize, c: usize) -> ImageGeometry {
        ImageGeometry::new(w, h, c).unwrap()
    }

    fn random_dataset(n: usize, g: ImageGeometry, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let images = Array2::from_shape_fn((n, g.dim()), |_| rng.gen_range(-1.0..1.0));
        Dataset::new(g, images).unwrap()
    }

    #[test]
    fn hflip_row_swap() {
        let g = geom(2, 1, 1);
        let img = array![0.25, -0.5];
        assert_eq!(hflip(img.view(), &g), array![-0.5, 0.25]);
    }

    #[test]
    fn flips_are_involutions() {
        let g = geom(3, 2, 2);
        let ds = random_dataset(1, g, 1);
        let img = ds.image(0);
        assert_eq!(hflip(hflip(img, &g).view(), &g), img.to_owned());
        assert_eq!(vflip(vflip(img, &g).view(), &g), img.to_owned());
    }

    #[test]
    fn symmetric_image_is_hflip_fixed_point() {
        let g = geom(3, 1, 1);
        let img = array![0.3, -0.2, 0.3];
        assert_eq!(hflip(img.view(), &g), img);
    }

    #[test]
    fn translate_identity_and_integer_shift() {
        let g = geom(3, 2, 1);
        let ds = random_dataset(1, g, 2);
        let img = ds.image(0);
        assert_eq!(translate(img, &g, 0.0, 0.0), img.to_owned());
        let constant = Array1::from_elem(6, 0.5);
        assert_eq!(translate(constant.view(), &g, 2.0, -1.0), constant);
    }

    #[test]
    fn translate_reflects_at_boundary() {
        let g = geom(3, 1, 1);
        let img = array![0.1, 0.2, 0.3];
        // out(x) = in(x - 1), with in(-1) reflecting to in(1).
        let out = translate(img.view(), &g, 1.0, 0.0);
        assert_eq!(out, array![0.2, 0.1, 0.2]);
    }

    #[test]
    fn rotate_and_scale_identities() {
        let g = geom(3, 3, 1);
        let ds = random_dataset(1, g, 3);
        let img = ds.image(0);
        let r0 = rotate(img, &g, 0.0);
        for (a, b) in r0.iter().zip(img.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let s1 = scale(img, &g, 1.0).unwrap();
        for (a, b) in s1.iter().zip(img.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_image_invariant_under_resampling() {
        let g = geom(4, 3, 1);
        let img = Array1::from_elem(12, -0.25);
        for &theta in &[0.3, -1.2, 2.9] {
            let out = rotate(img.view(), &g, theta);
            for v in out.iter() {
                assert_relative_eq!(*v, -0.25, epsilon = 1e-12);
            }
        }
        for &s in &[0.5, 0.9, 1.7] {
            let out = scale(img.view(), &g, s).unwrap();
            for v in out.iter() {
                assert_relative_eq!(*v, -0.25, epsilon = 1e-12);
            }
        }
        for &(dx, dy) in &[(0.4, -0.7), (2.3, 1.1)] {
            let out = translate(img.view(), &g, dx, dy);
            for v in out.iter() {
                assert_relative_eq!(*v, -0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn translate_inverse_on_interior() {
        let g = geom(7, 7, 1);
        let ds = random_dataset(1, g, 4);
        let img = ds.image(0);
        let there = translate(img, &g, 1.0, 2.0);
        let back = translate(there.view(), &g, -1.0, -2.0);
        // Interior pixels unaffected by padding round-trip exactly.
        for y in 2..5 {
            for x in 2..5 {
                let i = g.flat_index(x, y, 0);
                assert_relative_eq!(back[i], img[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hflip_at_full_rate_doubles_dataset() {
        let g = geom(3, 2, 1);
        let ds = random_dataset(5, g, 5);
        let plan = AugmentPlan::new(Strategy::HFlip, 5, 9);
        let (union, ledger) = build_augmented(&ds, &plan).unwrap();
        assert_eq!(union.len(), 10);
        assert_eq!(ledger.len(), 5);
        // Exactly one flip per source image; flipping back recovers it.
        let mut sources: Vec<usize> = ledger.iter().map(|e| e.source_index).collect();
        sources.sort_unstable();
        assert_eq!(sources, vec![0, 1, 2, 3, 4]);
        for e in &ledger {
            let back = hflip(union.image(e.output_index), &g);
            assert_eq!(back, ds.image(e.source_index).to_owned());
        }
    }

    #[test]
    fn reflection_beyond_full_rate_is_infeasible() {
        let g = geom(3, 2, 1);
        let ds = random_dataset(5, g, 6);
        let plan = AugmentPlan::new(Strategy::HFlip, 10, 0);
        assert!(build_augmented(&ds, &plan).is_err());
    }

    #[test]
    fn fractional_plan_uses_distinct_sources() {
        let g = geom(3, 2, 1);
        let ds = random_dataset(10, g, 7);
        let plan = AugmentPlan::new(Strategy::Translate, 2, 3); // 20% of 10
        let (union, ledger) = build_augmented(&ds, &plan).unwrap();
        assert_eq!(union.len(), 12);
        let sources: HashSet<usize> = ledger.iter().map(|e| e.source_index).collect();
        assert_eq!(sources.len(), 2, "each augmentation from a distinct source");
    }

    #[test]
    fn integer_multiple_plan_gives_exact_quota() {
        let g = geom(3, 2, 1);
        let ds = random_dataset(6, g, 8);
        for k in [1usize, 2, 3] {
            let plan = AugmentPlan::new(Strategy::Rotate, k * 6, 11);
            let (union, ledger) = build_augmented(&ds, &plan).unwrap();
            assert_eq!(union.len(), 6 + k * 6);
            let mut counts = vec![0usize; 6];
            for e in &ledger {
                counts[e.source_index] += 1;
            }
            assert!(counts.iter().all(|&c| c == k), "quota {k}: {counts:?}");
        }
    }

    #[test]
    fn ledger_is_duplicate_free() {
        let g = geom(4, 4, 1);
        let ds = random_dataset(4, g, 12);
        let plan = AugmentPlan::new(Strategy::Scale, 12, 13);
        let (_, ledger) = build_augmented(&ds, &plan).unwrap();
        let keys: HashSet<String> = ledger
            .iter()
            .map(|e| {
                AugmentationLabel {
                    strategy: e.strategy,
                    source_index: e.source_index,
                    params: e.params.clone(),
                }
                .key()
            })
            .collect();
        assert_eq!(keys.len(), ledger.len());
    }

    #[test]
    fn injected_duplicates_are_deduped() {
        let a = AugmentationLabel {
            strategy: Strategy::Rotate,
            source_index: 3,
            params: vec![0.5],
        };
        let b = AugmentationLabel {
            strategy: Strategy::Rotate,
            source_index: 3,
            params: vec![0.5 + 1e-9], // within quantization
        };
        let c = AugmentationLabel {
            strategy: Strategy::Rotate,
            source_index: 3,
            params: vec![0.75],
        };
        let out = dedup_labels(vec![a.clone(), b, c.clone()]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], a);
        assert_eq!(out[1], c);
    }

    #[test]
    fn ingest_synthetic_cases() {
        let g = geom(2, 2, 1);
        let ds = random_dataset(4, g, 14);
        let synth = random_dataset(6, g, 15);
        assert_eq!(ingest_synthetic(&ds, &synth, 0).unwrap().len(), 4);
        assert_eq!(ingest_synthetic(&ds, &synth, 6).unwrap().len(), 10);
        assert!(ingest_synthetic(&ds, &synth, 7).is_err());
        let other = random_dataset(4, geom(2, 1, 2), 16);
        assert!(ingest_synthetic(&ds, &other, 1).is_err());
    }

    #[test]
    fn synthetic_seed_overlap_rejected() {
        assert!(check_seed_disjoint(7, &[1, 2, 3]).is_ok());
        let err = check_seed_disjoint(2, &[1, 2, 3]).unwrap_err();
        assert!(err.to_string().contains("reserved"));
    }

    proptest! {
        #[test]
        fn augmented_outputs_stay_in_range(seed in 0u64..50) {
            let g = geom(4, 3, 1);
            let ds = random_dataset(3, g, seed);
            for strategy in [Strategy::Translate, Strategy::Rotate, Strategy::Scale] {
                let plan = AugmentPlan::new(strategy, 6, seed);
                let (union, _) = build_augmented(&ds, &plan).unwrap();
                for &v in union.images().iter() {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }
}
