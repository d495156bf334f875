//! A common contract for denoisers: batched `(z, t) -> denoised` callables.
//!
//! Adapters exist for the empirical posterior mean, the Wiener filter, the
//! collection model, a file-backed response table, and a constant function
//! (tests). Fine-tuning targets and the PF-ODE sampler both consume this
//! trait.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::classical::{optimal_denoiser_batch, wiener_denoise_batch, WienerModel};
use crate::dataset::Dataset;
use crate::error::{FpmcError, Result};
use crate::model::FpmcModel;
use crate::schedule::DiffusionSchedule;
use crate::tensor_io;
use crate::geometry::ImageGeometry;

/// Batched denoiser contract. Implementations must be deterministic for
/// fixed inputs and safe to call concurrently.
pub trait Denoiser: Sync {
    fn dim(&self) -> usize;
    fn denoise_batch(&self, zs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>>;
}

/// The empirical posterior mean over a dataset.
pub struct OptimalDenoiser {
    pub data: Arc<Dataset>,
    pub sched: DiffusionSchedule,
}

impl Denoiser for OptimalDenoiser {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn denoise_batch(&self, zs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        optimal_denoiser_batch(zs, t, &self.data, &self.sched)
    }
}

/// The Wiener filter denoiser.
pub struct WienerDenoiser {
    pub model: WienerModel,
    pub sched: DiffusionSchedule,
}

impl Denoiser for WienerDenoiser {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn denoise_batch(&self, zs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        wiener_denoise_batch(zs, t, &self.model, &self.sched)
    }
}

impl Denoiser for FpmcModel {
    fn dim(&self) -> usize {
        self.geometry().dim()
    }

    fn denoise_batch(&self, zs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        FpmcModel::denoise_batch(self, zs, t)
    }
}

/// Constant denoiser `D(z, t) = c`; the linear-ODE test oracle.
pub struct ConstantDenoiser(pub ndarray::Array1<f64>);

impl Denoiser for ConstantDenoiser {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn denoise_batch(&self, zs: ArrayView2<'_, f64>, _t: f64) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((zs.nrows(), zs.ncols()));
        for mut row in out.outer_iter_mut() {
            row.assign(&self.0);
        }
        Ok(out)
    }
}

/// File-backed target: externally produced responses for a fixed set of
/// query points at one `t`. Queries are matched by their f32 storage bytes,
/// so any z that round-trips the tensor container is found exactly.
pub struct ResponseTable {
    t: f64,
    responses: Array2<f64>,
    index: HashMap<Vec<u8>, usize>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ResponseManifest {
    format: String,
    t: f64,
}

const RESPONSE_FORMAT: &str = "fpmc-responses-v1";

fn z_key(row: ndarray::ArrayView1<'_, f64>) -> Vec<u8> {
    let mut key = Vec::with_capacity(row.len() * 4);
    for &v in row.iter() {
        key.extend_from_slice(&(v as f32).to_le_bytes());
    }
    key
}

impl ResponseTable {
    pub fn new(t: f64, zs: &Array2<f64>, responses: Array2<f64>) -> Result<Self> {
        if zs.nrows() != responses.nrows() || zs.ncols() != responses.ncols() {
            return Err(FpmcError::validation("query and response shapes disagree"));
        }
        let mut index = HashMap::with_capacity(zs.nrows());
        for (i, row) in zs.outer_iter().enumerate() {
            index.insert(z_key(row), i);
        }
        Ok(ResponseTable {
            t,
            dim: zs.ncols(),
            responses,
            index,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn save(&self, dir: &Path, zs: &Array2<f64>, geometry: ImageGeometry) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = ResponseManifest {
            format: RESPONSE_FORMAT.to_string(),
            t: self.t,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        tensor_io::write_tensor(&dir.join("z.bin"), geometry, zs)?;
        tensor_io::write_tensor(&dir.join("responses.bin"), geometry, &self.responses)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ResponseManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != RESPONSE_FORMAT {
            return Err(FpmcError::io(format!(
                "unknown response table format {:?}",
                manifest.format
            )));
        }
        let (_, zs) = tensor_io::read_tensor(&dir.join("z.bin"))?;
        let (_, responses) = tensor_io::read_tensor(&dir.join("responses.bin"))?;
        ResponseTable::new(manifest.t, &zs, responses)
    }
}

impl Denoiser for ResponseTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise_batch(&self, zs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        if (t - self.t).abs() > 1e-9 * self.t.abs().max(1.0) {
            return Err(FpmcError::validation(format!(
                "response table holds t = {}, queried at t = {t}",
                self.t
            )));
        }
        let mut out = Array2::zeros((zs.nrows(), zs.ncols()));
        for (row, mut dst) in zs.outer_iter().zip(out.outer_iter_mut()) {
            let idx = self.index.get(&z_key(row)).ok_or_else(|| {
                FpmcError::validation("query point not present in response table")
            })?;
            dst.assign(&self.responses.row(*idx));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn response_table_roundtrip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let g = ImageGeometry::new(2, 1, 1).unwrap();
        let zs = array![[0.25, -0.5], [0.75, 0.125]];
        let responses = array![[0.125, 0.25], [0.375, 0.5]];
        let table = ResponseTable::new(1.5, &zs, responses.clone()).unwrap();
        table.save(dir.path(), &zs, g).unwrap();
        let back = ResponseTable::load(dir.path()).unwrap();
        let out = back.denoise_batch(zs.view(), 1.5).unwrap();
        assert_eq!(out, responses);
        // Unknown query point and wrong t both fail.
        assert!(back.denoise_batch(array![[0.1, 0.1]].view(), 1.5).is_err());
        assert!(back.denoise_batch(zs.view(), 2.0).is_err());
    }
}
