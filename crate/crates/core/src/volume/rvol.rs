//! `.rvol`: a JSON header next to a raw little-endian, x-fastest payload.
//!
//! ```json
//! { "dims": [4, 4, 4], "affine": [[0.6,0,0],[0,0.6,0],[0,0,0.6]],
//!   "origin": [0, 0, 0], "dtype": "f32", "data_file": "vol.raw" }
//! ```
//!
//! `spacing: [sx, sy, sz]` may replace `affine` for axis-aligned grids.

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{Affine3, DataType, Volume3};
use crate::error::{Error, IoContext, Result};
use crate::Vec3;

#[derive(Debug, Serialize, Deserialize)]
struct RvolHeader {
    dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spacing: Option<[f64; 3]>,
    /// Row-major 3x3 direction-times-spacing matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    affine: Option<[[f64; 3]; 3]>,
    origin: [f64; 3],
    dtype: DataType,
    data_file: String,
}

pub fn read_rvol(path: &Path) -> Result<Volume3> {
    let text = fs::read_to_string(path).at(path)?;
    let header: RvolHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let origin = Vec3::from(header.origin);
    let affine = match (header.affine, header.spacing) {
        (Some(rows), _) => Affine3::new(Matrix3::from_fn(|r, c| rows[r][c]), origin)?,
        (None, Some(s)) => Affine3::from_spacing(s, origin)?,
        (None, None) => {
            return Err(Error::Format(format!(
                "{}: header needs either affine or spacing",
                path.display()
            )))
        }
    };
    let data_path = path.parent().unwrap_or(Path::new("")).join(&header.data_file);
    let bytes = fs::read(&data_path).at(&data_path)?;
    let count = header.dims.iter().product();
    let data = header
        .dtype
        .decode(&bytes, count)
        .map_err(|e| Error::Format(format!("{}: {e}", data_path.display())))?;
    Volume3::new(header.dims, data, affine)
}

pub fn write_rvol(vol: &Volume3, path: &Path, dtype: DataType) -> Result<()> {
    let payload = dtype.encode(vol.data())?;
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no file name", path.display())))?
        .to_string_lossy();
    let data_file = format!("{stem}.raw");
    let m = vol.affine().matrix();
    let header = RvolHeader {
        dims: vol.dims(),
        spacing: None,
        affine: Some(std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))),
        origin: (*vol.affine().origin()).into(),
        dtype,
        data_file: data_file.clone(),
    };
    crate::io::write_atomic(&path.with_file_name(&data_file), &payload)?;
    crate::io::write_json(path, &header)
}
