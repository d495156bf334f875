//! The portable binary tensor container.
//!
//! Layout: 8-byte magic `FPMCTENS`, a little-endian u32 byte length, a UTF-8
//! JSON header `{"n": .., "w": .., "h": .., "c": .., "dtype": "f32"}`, then
//! `n * w * h * c` little-endian 32-bit floats (row-major over rows, each row
//! flattened in the canonical `(y, x, c)` order).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FpmcError, Result};
use crate::geometry::ImageGeometry;

pub const MAGIC: &[u8; 8] = b"FPMCTENS";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    n: usize,
    w: usize,
    h: usize,
    c: usize,
    dtype: String,
}

/// Write `rows` (one flattened record per row) with the given geometry.
/// Values are stored as f32; callers should only pass f32-representable data
/// if bit-exact round-trips are required.
pub fn write_tensor(path: &Path, geometry: ImageGeometry, rows: &Array2<f64>) -> Result<()> {
    if rows.ncols() != geometry.dim() {
        return Err(FpmcError::validation(format!(
            "row length {} does not match geometry {} (d = {})",
            rows.ncols(),
            geometry,
            geometry.dim()
        )));
    }
    let header = Header {
        n: rows.nrows(),
        w: geometry.width,
        h: geometry.height,
        c: geometry.channels,
        dtype: "f32".to_string(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for &v in rows.iter() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a tensor file, returning its geometry and rows (f32 data widened to
/// f64 for internal arithmetic).
pub fn read_tensor(path: &Path) -> Result<(ImageGeometry, Array2<f64>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FpmcError::io(format!(
            "{}: bad magic, not a tensor container",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    input.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "f32" {
        return Err(FpmcError::io(format!("unsupported dtype {:?}", header.dtype)));
    }
    let geometry = ImageGeometry::new(header.w, header.h, header.c)?;
    let d = geometry.dim();
    let mut data = vec![0.0f64; header.n * d];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        input.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf) as f64;
    }
    let rows = Array2::from_shape_vec((header.n, d), data)
        .map_err(|e| FpmcError::io(format!("shape error: {e}")))?;
    Ok((geometry, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn roundtrip_is_bit_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let g = ImageGeometry::new(2, 1, 1).unwrap();
        let rows = array![[0.5, -1.0], [0.25, 1.0]];
        write_tensor(&path, g, &rows).unwrap();
        let (g2, rows2) = read_tensor(&path).unwrap();
        assert_eq!(g, g2);
        assert_eq!(rows, rows2);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTMAGIC____").unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
