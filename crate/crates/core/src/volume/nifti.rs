//! Uncompressed single-file NIfTI-1 (`.nii`), little-endian, sform only.
//!
//! Supported datatypes are uint8 (2), int16 (4) and float32 (16).

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;

use super::{Affine3, DataType, Volume3};
use crate::error::{Error, IoContext, Result};
use crate::Vec3;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn read_nifti(path: &Path) -> Result<Volume3> {
    let bytes = fs::read(path).at(path)?;
    parse_nifti(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn parse_nifti(bytes: &[u8]) -> Result<Volume3> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "truncated header: {} bytes, need {HEADER_SIZE}",
            bytes.len()
        )));
    }
    match i32_at(bytes, 0) {
        348 => {}
        v if v.swap_bytes() == 348 => {
            return Err(Error::Unsupported("big-endian NIfTI".into()));
        }
        v => return Err(Error::Format(format!("sizeof_hdr is {v}, expected 348"))),
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Unsupported("only single-file NIfTI-1 (magic n+1) is supported".into()));
    }

    let ndim = i16_at(bytes, 40);
    if !(3..=7).contains(&ndim) {
        return Err(Error::Unsupported(format!("{ndim}-dimensional image")));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = i16_at(bytes, 42 + 2 * a);
        if v <= 0 {
            return Err(Error::Format(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    for a in 4..=ndim as usize {
        if i16_at(bytes, 40 + 2 * a) > 1 {
            return Err(Error::Unsupported("images with more than three non-singleton dimensions".into()));
        }
    }

    let dtype = match i16_at(bytes, 70) {
        DT_UINT8 => DataType::U8,
        DT_INT16 => DataType::I16,
        DT_FLOAT32 => DataType::F32,
        other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
    };

    let sform_code = i16_at(bytes, 254);
    if sform_code <= 0 {
        return Err(Error::Format("sform_code is 0; an sform affine is required".into()));
    }
    let mut m = Matrix3::zeros();
    let mut origin = Vec3::zeros();
    for r in 0..3 {
        let off = 280 + 16 * r;
        for c in 0..3 {
            m[(r, c)] = f32_at(bytes, off + 4 * c) as f64;
        }
        origin[r] = f32_at(bytes, off + 12) as f64;
    }
    if m.iter().all(|&v| v == 0.0) {
        return Err(Error::Format("sform rows are all zero".into()));
    }
    let affine = Affine3::new(m, origin)?;

    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset >= VOX_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Format(format!("vox_offset {vox_offset} (must be an integer >= 352)")));
    }
    let start = vox_offset as usize;
    let count = dims.iter().product::<usize>();
    let payload = bytes.get(start..).unwrap_or(&[]);
    let mut data = dtype.decode(payload, count)?;

    let slope = f32_at(bytes, 112) as f64;
    let inter = f32_at(bytes, 116) as f64;
    if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume3::new(dims, data, affine)
}

pub fn write_nifti(vol: &Volume3, path: &Path, dtype: DataType) -> Result<()> {
    let bytes = encode_nifti(vol, dtype)?;
    crate::io::write_atomic(path, &bytes)
}

pub(crate) fn encode_nifti(vol: &Volume3, dtype: DataType) -> Result<Vec<u8>> {
    let payload = dtype.encode(vol.data())?;
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dims = vol.dims();
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        let d = i16::try_from(dims[a])
            .map_err(|_| Error::Unsupported(format!("dimension {} exceeds NIfTI-1 limit", dims[a])))?;
        put_i16(&mut h, 42 + 2 * a, d);
    }
    for a in 4..8 {
        put_i16(&mut h, 40 + 2 * a, 1);
    }
    let (code, bitpix) = match dtype {
        DataType::U8 => (DT_UINT8, 8),
        DataType::I16 => (DT_INT16, 16),
        DataType::F32 => (DT_FLOAT32, 32),
    };
    put_i16(&mut h, 70, code);
    put_i16(&mut h, 72, bitpix);

    let aff = vol.affine();
    let spacing = aff.spacing();
    put_f32(&mut h, 76, if aff.is_right_handed() { 1.0 } else { -1.0 });
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, spacing[a] as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // xyzt_units: millimetres
    put_i16(&mut h, 252, 0);
    put_i16(&mut h, 254, 1);
    let m = aff.matrix();
    let o = aff.origin();
    for r in 0..3 {
        let off = 280 + 16 * r;
        for c in 0..3 {
            put_f32(&mut h, off + 4 * c, m[(r, c)] as f32);
        }
        put_f32(&mut h, off + 12, o[r] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(&payload);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(datatype: i16, sform: i16) -> Vec<u8> {
        let mut h = vec![0u8; VOX_OFFSET];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (a, v) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
            h[40 + 2 * a..42 + 2 * a].copy_from_slice(&v.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[254..256].copy_from_slice(&sform.to_le_bytes());
        let rows = [[0.6f32, 0.0, 0.0, 1.0], [0.0, 0.6, 0.0, 2.0], [0.0, 0.0, 0.6, 3.0]];
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let off = 280 + 16 * r + 4 * c;
                h[off..off + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn parses_hand_built_float_header() {
        let mut bytes = header(16, 1);
        for i in 0..8 {
            bytes.extend_from_slice(&(i as f32 * 0.5).to_le_bytes());
        }
        let vol = parse_nifti(&bytes).unwrap();
        assert_eq!(vol.dims(), [2, 2, 2]);
        let m = vol.affine().matrix();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 0.6f32 as f64 } else { 0.0 };
                assert_eq!(m[(r, c)], expect);
            }
        }
        assert_eq!(*vol.affine().origin(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(vol.get(1, 1, 1), 3.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut bytes = header(64, 1);
        bytes.extend_from_slice(&[0u8; 64]);
        assert!(matches!(parse_nifti(&bytes), Err(Error::Unsupported(_))));

        let mut bytes = header(16, 0);
        bytes.extend_from_slice(&[0u8; 32]);
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));

        let mut bytes = header(16, 1);
        bytes.extend_from_slice(&[0u8; 31]);
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));

        assert!(parse_nifti(&[0u8; 100]).is_err());

        let mut bytes = header(16, 1);
        for off in [280, 296, 312] {
            bytes[off..off + 12].fill(0);
        }
        bytes.extend_from_slice(&[0u8; 32]);
        assert!(parse_nifti(&bytes).is_err());
    }
}
