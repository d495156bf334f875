//! Image geometry and the canonical flattening order.
//!
//! Every flat vector in this crate is laid out row-major over `(y, x, c)`:
//! index = `(y * W + x) * C + c`. Masks, crops, transforms, and file formats
//! all assume this order.

use serde::{Deserialize, Serialize};

use crate::error::{FpmcError, Result};

/// Width, height, and channel count of the images a model operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageGeometry {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(FpmcError::validation(format!(
                "geometry dimensions must be >= 1, got {width}x{height}x{channels}"
            )));
        }
        Ok(ImageGeometry {
            width,
            height,
            channels,
        })
    }

    /// Total flat dimension `d = W * H * C`.
    pub fn dim(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Number of pixels `W * H`.
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Flat index of `(x, y, c)` in the canonical order.
    pub fn flat_index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn coords(&self, flat: usize) -> (usize, usize, usize) {
        debug_assert!(flat < self.dim());
        let c = flat % self.channels;
        let pixel = flat / self.channels;
        let x = pixel % self.width;
        let y = pixel / self.width;
        (x, y, c)
    }

    /// Flat pixel index of `(x, y)`, ignoring channels.
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn same_dim(&self, other: &ImageGeometry) -> bool {
        self.dim() == other.dim()
    }
}

impl std::fmt::Display for ImageGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_index_is_row_major_yxc() {
        let g = ImageGeometry::new(3, 2, 2).unwrap();
        assert_eq!(g.flat_index(0, 0, 0), 0);
        assert_eq!(g.flat_index(0, 0, 1), 1);
        assert_eq!(g.flat_index(1, 0, 0), 2);
        assert_eq!(g.flat_index(0, 1, 0), 6);
        assert_eq!(g.dim(), 12);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(ImageGeometry::new(0, 4, 1).is_err());
        assert!(ImageGeometry::new(4, 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_roundtrip(w in 1usize..9, h in 1usize..9, c in 1usize..5) {
            let g = ImageGeometry::new(w, h, c).unwrap();
            for flat in 0..g.dim() {
                let (x, y, ch) = g.coords(flat);
                prop_assert_eq!(g.flat_index(x, y, ch), flat);
            }
        }
    }
}
