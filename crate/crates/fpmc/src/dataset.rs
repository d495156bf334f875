//! Dataset container and ingestion.
//!
//! A dataset is `N` flattened images with a shared geometry. All pixel values
//! lie in `[-1, 1]`. Two on-disk forms are supported: the binary tensor
//! container (see [`crate::tensor_io`]) and a directory of 8-bit PNG images.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{FpmcError, Result};
use crate::geometry::ImageGeometry;
use crate::tensor_io;

/// An in-memory dataset of flattened images in `[-1, 1]`.
///
/// Values are held as f64 for arithmetic but are always exactly
/// f32-representable, so save/load round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    geometry: ImageGeometry,
    images: Array2<f64>,
}

impl Dataset {
    /// Wrap a matrix of flattened images. Values are quantized through f32
    /// (the storage type) and must lie in `[-1, 1]`.
    pub fn new(geometry: ImageGeometry, images: Array2<f64>) -> Result<Self> {
        if images.nrows() == 0 {
            return Err(FpmcError::validation("empty dataset"));
        }
        if images.ncols() != geometry.dim() {
            return Err(FpmcError::validation(format!(
                "image rows have {} values but geometry {} needs {}",
                images.ncols(),
                geometry,
                geometry.dim()
            )));
        }
        let images = images.mapv(|v| (v as f32) as f64);
        if images.iter().any(|&v| !(-1.0..=1.0).contains(&v) || !v.is_finite()) {
            return Err(FpmcError::validation("pixel values must lie in [-1, 1]"));
        }
        Ok(Dataset { geometry, images })
    }

    pub fn geometry(&self) -> ImageGeometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn images(&self) -> ArrayView2<'_, f64> {
        self.images.view()
    }

    pub fn image(&self, i: usize) -> ArrayView1<'_, f64> {
        self.images.row(i)
    }

    /// Concatenate two datasets with identical geometry.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.geometry != other.geometry {
            return Err(FpmcError::validation(format!(
                "geometry mismatch: {} vs {}",
                self.geometry, other.geometry
            )));
        }
        let mut images = Array2::zeros((self.len() + other.len(), self.dim()));
        images.slice_mut(ndarray::s![..self.len(), ..]).assign(&self.images);
        images.slice_mut(ndarray::s![self.len().., ..]).assign(&other.images);
        Ok(Dataset {
            geometry: self.geometry,
            images,
        })
    }

    /// A new dataset containing the selected rows.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(FpmcError::validation("empty dataset"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(FpmcError::validation(format!("row index {bad} out of range")));
        }
        Ok(Dataset {
            geometry: self.geometry,
            images: self.images.select(ndarray::Axis(0), indices),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        tensor_io::write_tensor(path, self.geometry, &self.images)
    }

    pub fn shared(self) -> Arc<Dataset> {
        Arc::new(self)
    }
}

/// Map an 8-bit byte to `[-1, 1]`: `v / 127.5 - 1`.
fn byte_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Map `[-1, 1]` back to an 8-bit byte, clamping.
pub fn unit_to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Load a dataset from `path`: either a tensor container file or a directory
/// of PNG images matching the declared geometry.
pub fn load_dataset(path: &Path, geometry: ImageGeometry) -> Result<Dataset> {
    if path.is_dir() {
        load_png_dir(path, geometry)
    } else {
        let (file_geom, rows) = tensor_io::read_tensor(path)?;
        if file_geom != geometry {
            return Err(FpmcError::validation(format!(
                "geometry mismatch: file has {file_geom}, expected {geometry}"
            )));
        }
        if rows.nrows() == 0 {
            return Err(FpmcError::validation("empty dataset"));
        }
        Dataset::new(geometry, rows)
    }
}

/// Load a tensor container without a declared geometry.
pub fn load_dataset_auto(path: &Path) -> Result<Dataset> {
    let (geometry, rows) = tensor_io::read_tensor(path)?;
    if rows.nrows() == 0 {
        return Err(FpmcError::validation("empty dataset"));
    }
    Dataset::new(geometry, rows)
}

fn load_png_dir(dir: &Path, geometry: ImageGeometry) -> Result<Dataset> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(FpmcError::validation(format!(
            "empty dataset: no PNG files in {}",
            dir.display()
        )));
    }
    let d = geometry.dim();
    let mut images = Array2::zeros((paths.len(), d));
    for (row, p) in paths.iter().enumerate() {
        let img = image::open(p).map_err(|e| FpmcError::io(format!("{}: {e}", p.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w != geometry.width || h != geometry.height {
            return Err(FpmcError::validation(format!(
                "geometry mismatch: {} is {w}x{h}, expected {}x{}",
                p.display(),
                geometry.width,
                geometry.height
            )));
        }
        match geometry.channels {
            1 => {
                let grey = img.to_luma8();
                for y in 0..h {
                    for x in 0..w {
                        images[[row, geometry.flat_index(x, y, 0)]] =
                            byte_to_unit(grey.get_pixel(x as u32, y as u32)[0]);
                    }
                }
            }
            3 => {
                let rgb = img.to_rgb8();
                for y in 0..h {
                    for x in 0..w {
                        let px = rgb.get_pixel(x as u32, y as u32);
                        for c in 0..3 {
                            images[[row, geometry.flat_index(x, y, c)]] = byte_to_unit(px[c]);
                        }
                    }
                }
            }
            other => {
                return Err(FpmcError::validation(format!(
                    "PNG ingestion supports 1 or 3 channels, got {other}"
                )))
            }
        }
    }
    Dataset::new(geometry, images)
}

/// Write one flattened image as an 8-bit PNG (values clamped to `[-1, 1]`).
pub fn save_png(path: &Path, geometry: ImageGeometry, row: ArrayView1<'_, f64>) -> Result<()> {
    if row.len() != geometry.dim() {
        return Err(FpmcError::validation("row length does not match geometry"));
    }
    save_png_bytes(path, geometry, |i| unit_to_byte(row[i]))
}

/// Write a PNG from a per-flat-index byte function; shared by image export
/// and mask export (which uses its own rescaling convention).
pub fn save_png_bytes(
    path: &Path,
    geometry: ImageGeometry,
    value: impl Fn(usize) -> u8,
) -> Result<()> {
    let (w, h) = (geometry.width as u32, geometry.height as u32);
    let err = |e: image::ImageError| FpmcError::io(format!("{}: {e}", path.display()));
    match geometry.channels {
        1 => {
            let img = image::GrayImage::from_fn(w, h, |x, y| {
                image::Luma([value(geometry.flat_index(x as usize, y as usize, 0))])
            });
            img.save(path).map_err(err)
        }
        3 => {
            let img = image::RgbImage::from_fn(w, h, |x, y| {
                let i = |c| value(geometry.flat_index(x as usize, y as usize, c));
                image::Rgb([i(0), i(1), i(2)])
            });
            img.save(path).map_err(err)
        }
        other => Err(FpmcError::validation(format!(
            "PNG export supports 1 or 3 channels, got {other}"
        ))),
    }
}
