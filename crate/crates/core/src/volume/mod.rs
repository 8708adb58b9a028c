//! Voxel volumes with a world-space affine, interpolation, isotropic
//! resampling and oblique plane sampling (multiplanar reformation).
//!
//! World coordinates are millimetres. A voxel index `(i, j, k)` maps to world
//! space as `matrix * (i, j, k) + origin`, so the columns of `matrix` are the
//! voxel axes scaled by the spacing.

mod nifti;
mod rvol;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::Vec3;

pub use nifti::{read_nifti, write_nifti};
pub use rvol::{read_rvol, write_rvol};

/// Tolerance used when checking that affine columns are orthogonal.
const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine3 {
    matrix: Matrix3<f64>,
    origin: Vec3,
    inverse: Matrix3<f64>,
}

impl Affine3 {
    pub fn new(matrix: Matrix3<f64>, origin: Vec3) -> Result<Self> {
        if !matrix.iter().chain(origin.iter()).all(|v| v.is_finite()) {
            return Err(Error::Geometry("affine has non-finite entries".into()));
        }
        let inverse = matrix
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Geometry("affine matrix is not invertible".into()))?;
        let cols = [matrix.column(0), matrix.column(1), matrix.column(2)];
        for a in 0..3 {
            for b in (a + 1)..3 {
                let cos = cols[a].dot(&cols[b]) / (cols[a].norm() * cols[b].norm());
                if cos.abs() > ORTHO_TOL {
                    return Err(Error::Geometry(format!(
                        "affine columns {a} and {b} are not orthogonal (cos = {cos:.3e})"
                    )));
                }
            }
        }
        Ok(Self {
            matrix,
            origin,
            inverse,
        })
    }

    /// Axis-aligned grid with the given spacing.
    pub fn from_spacing(spacing: [f64; 3], origin: Vec3) -> Result<Self> {
        Self::new(
            Matrix3::from_diagonal(&Vector3::new(spacing[0], spacing[1], spacing[2])),
            origin,
        )
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.matrix.column(0).norm(),
            self.matrix.column(1).norm(),
            self.matrix.column(2).norm(),
        ]
    }

    /// Unit voxel axes in world space (columns).
    pub fn directions(&self) -> Matrix3<f64> {
        let s = self.spacing();
        let mut d = self.matrix;
        for c in 0..3 {
            d.column_mut(c).unscale_mut(s[c]);
        }
        d
    }

    pub fn is_right_handed(&self) -> bool {
        self.matrix.determinant() > 0.0
    }

    pub fn to_world(&self, index: &Vec3) -> Vec3 {
        self.matrix * index + self.origin
    }

    /// Continuous voxel index of a world point.
    pub fn to_index(&self, world: &Vec3) -> Vec3 {
        self.inverse * (world - self.origin)
    }
}

/// Scalar voxel grid, x-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    data: Vec<f64>,
    affine: Affine3,
}

impl Volume3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>, affine: Affine3) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("volume dims must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidArgument(format!(
                "volume data has {} values, dims {dims:?} need {n}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("volume contains non-finite value {bad}")));
        }
        Ok(Self { dims, data, affine })
    }

    pub fn filled(dims: [usize; 3], value: f64, affine: Affine3) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()], affine)
    }

    /// Build a volume by evaluating `f` at every voxel centre (world mm).
    pub fn from_fn(dims: [usize; 3], affine: Affine3, mut f: impl FnMut(Vec3) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(affine.to_world(&Vec3::new(i as f64, j as f64, k as f64))));
                }
            }
        }
        Self::new(dims, data, affine)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn affine(&self) -> &Affine3 {
        &self.affine
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.linear_index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.affine.to_world(&Vec3::new(i as f64, j as f64, k as f64))
    }

    /// Axis-aligned world bounding box of the voxel edges (half a voxel
    /// beyond the outermost centres).
    pub fn world_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for corner in 0..8 {
            let idx = Vec3::new(
                if corner & 1 == 0 { -0.5 } else { self.dims[0] as f64 - 0.5 },
                if corner & 2 == 0 { -0.5 } else { self.dims[1] as f64 - 0.5 },
                if corner & 4 == 0 { -0.5 } else { self.dims[2] as f64 - 0.5 },
            );
            let w = self.affine.to_world(&idx);
            lo = lo.inf(&w);
            hi = hi.sup(&w);
        }
        (lo, hi)
    }

    /// Trilinear interpolation at a world point.
    ///
    /// The sampling hull is the voxel-edge box `[-0.5, n - 0.5]` per axis.
    /// Inside the outer half voxel the boundary cell is extrapolated linearly,
    /// so fields that are affine in world space are reproduced everywhere in
    /// the hull. Points outside the hull return 0.
    pub fn trilinear(&self, point: &Vec3) -> f64 {
        let x = self.affine.to_index(point);
        let mut cells = [(0usize, 0.0f64, false); 3];
        for a in 0..3 {
            let n = self.dims[a];
            let c = x[a];
            if !(-0.5 - 1e-9..=n as f64 - 0.5 + 1e-9).contains(&c) {
                return 0.0;
            }
            cells[a] = if n == 1 {
                (0, 0.0, false)
            } else {
                let i0 = (c.floor().max(0.0) as usize).min(n - 2);
                (i0, c - i0 as f64, true)
            };
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut skip = false;
            for a in 0..3 {
                let (i0, f, two) = cells[a];
                let hi = corner >> a & 1 == 1;
                if hi && !two {
                    skip = true;
                    break;
                }
                idx[a] = i0 + hi as usize;
                w *= if hi { f } else { 1.0 - f };
            }
            if !skip && w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    }

    /// Nearest-voxel lookup; `None` outside the voxel-edge hull.
    pub fn nearest(&self, point: &Vec3) -> Option<f64> {
        let x = self.affine.to_index(point);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = x[a].round();
            if r < 0.0 || r > (self.dims[a] - 1) as f64 {
                return None;
            }
            idx[a] = r as usize;
        }
        Some(self.get(idx[0], idx[1], idx[2]))
    }

    /// Resample onto an isotropic grid with the same orientation covering
    /// the same voxel-edge extent. Output dims are `ceil(extent / spacing)`.
    pub fn resample_isotropic(&self, spacing: f64) -> Result<Volume3> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!("resampling spacing must be > 0, got {spacing}")));
        }
        let old = self.affine.spacing();
        let dirs = self.affine.directions();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let extent = self.dims[a] as f64 * old[a];
            dims[a] = ((extent / spacing) - 1e-9).ceil().max(1.0) as usize;
        }
        // Align the first voxel edge of the new grid with the old one.
        let edge = self.affine.to_world(&Vec3::repeat(-0.5));
        let origin = edge + dirs * Vec3::repeat(0.5 * spacing);
        let affine = Affine3::new(dirs * spacing, origin)?;
        Volume3::from_fn(dims, affine, |p| self.trilinear(&p))
    }

    /// Sample an oblique cross-section by trilinear interpolation.
    pub fn sample_plane(&self, pose: &PlanePose, size: (usize, usize), spacing: f64) -> Result<CrossSection> {
        check_plane_args(size, spacing)?;
        let mut pixels = Vec::with_capacity(size.0 * size.1);
        for j in 0..size.1 {
            for i in 0..size.0 {
                pixels.push(self.trilinear(&pose.pixel_world(i, j, size, spacing)));
            }
        }
        Ok(CrossSection {
            pose: *pose,
            size,
            spacing,
            pixels,
        })
    }

    /// Sample a label volume on a plane with nearest-neighbour lookup.
    pub fn sample_label_plane(
        &self,
        pose: &PlanePose,
        size: (usize, usize),
        spacing: f64,
    ) -> Result<crate::segmenter::LabelMask2D> {
        check_plane_args(size, spacing)?;
        if let Some(v) = self.data.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v > 255.0) {
            return Err(Error::InvalidArgument(format!("label volume holds non-integral value {v}")));
        }
        let mut labels = Vec::with_capacity(size.0 * size.1);
        for j in 0..size.1 {
            for i in 0..size.0 {
                let p = pose.pixel_world(i, j, size, spacing);
                labels.push(self.nearest(&p).unwrap_or(0.0) as u8);
            }
        }
        crate::segmenter::LabelMask2D::new(*pose, size, spacing, labels)
    }
}

fn check_plane_args(size: (usize, usize), spacing: f64) -> Result<()> {
    if size.0 < 2 || size.1 < 2 {
        return Err(Error::InvalidArgument(format!("plane size must be at least 2x2, got {size:?}")));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::InvalidArgument(format!("plane spacing must be > 0, got {spacing}")));
    }
    Ok(())
}

/// Orthonormal plane frame. `normal == axis_u x axis_v`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlanePose {
    pub center: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub normal: Vec3,
}

impl PlanePose {
    /// Build a pose from a normal and an in-plane hint for `axis_u`.
    pub fn from_normal(center: Vec3, normal: Vec3, u_hint: Vec3) -> Result<Self> {
        let n = normal
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("plane normal has zero length".into()))?;
        let u = (u_hint - n * n.dot(&u_hint))
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("u hint is parallel to the plane normal".into()))?;
        let v = n.cross(&u);
        Ok(Self {
            center,
            axis_u: u,
            axis_v: v,
            normal: n,
        })
    }

    /// Pose whose `axis_u` is seeded by the world axis least aligned with `normal`.
    pub fn with_seed_axis(center: Vec3, normal: Vec3) -> Result<Self> {
        let n = normal
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("plane normal has zero length".into()))?;
        Self::from_normal(center, n, least_aligned_axis(&n))
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let (u, v, n) = (&self.axis_u, &self.axis_v, &self.normal);
        (u.norm() - 1.0).abs() <= tol
            && (v.norm() - 1.0).abs() <= tol
            && (n.norm() - 1.0).abs() <= tol
            && u.dot(v).abs() <= tol
            && u.dot(n).abs() <= tol
            && v.dot(n).abs() <= tol
            && (u.cross(v) - n).norm() <= tol
    }

    /// World position of pixel `(i, j)` on a centre-anchored grid.
    pub fn pixel_world(&self, i: usize, j: usize, size: (usize, usize), spacing: f64) -> Vec3 {
        let (u, v) = pixel_to_uv(i as f64, j as f64, size, spacing);
        self.uv_to_world(u, v)
    }

    pub fn uv_to_world(&self, u: f64, v: f64) -> Vec3 {
        self.center + self.axis_u * u + self.axis_v * v
    }

    /// In-plane coordinates of the orthogonal projection of `p`.
    pub fn world_to_uv(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.center;
        (d.dot(&self.axis_u), d.dot(&self.axis_v))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.center).dot(&self.normal)
    }

    /// Same orientation, different centre.
    pub fn recentered(&self, center: Vec3) -> Self {
        Self { center, ..*self }
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.center - other.center).norm() <= tol
            && (self.axis_u - other.axis_u).norm() <= tol
            && (self.axis_v - other.axis_v).norm() <= tol
            && (self.normal - other.normal).norm() <= tol
    }
}

pub fn least_aligned_axis(dir: &Vec3) -> Vec3 {
    let a = dir.abs();
    if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    }
}

/// Plane (u, v) mm of a fractional pixel coordinate.
#[inline]
pub fn pixel_to_uv(i: f64, j: f64, size: (usize, usize), spacing: f64) -> (f64, f64) {
    (
        (i - (size.0 as f64 - 1.0) / 2.0) * spacing,
        (j - (size.1 as f64 - 1.0) / 2.0) * spacing,
    )
}

/// Fractional pixel coordinate of plane (u, v) mm.
#[inline]
pub fn uv_to_pixel(u: f64, v: f64, size: (usize, usize), spacing: f64) -> (f64, f64) {
    (
        u / spacing + (size.0 as f64 - 1.0) / 2.0,
        v / spacing + (size.1 as f64 - 1.0) / 2.0,
    )
}

/// A sampled oblique image, pixels stored row by row (`u` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub pose: PlanePose,
    pub size: (usize, usize),
    pub spacing: f64,
    pub pixels: Vec<f64>,
}

impl CrossSection {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.pixels[j * self.size.0 + i]
    }

    pub fn pixel_world(&self, i: usize, j: usize) -> Vec3 {
        self.pose.pixel_world(i, j, self.size, self.spacing)
    }
}

/// On-disk sample type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    U8,
    I16,
    F32,
}

impl DataType {
    pub fn name(self) -> &'static str {
        match self {
            DataType::U8 => "u8",
            DataType::I16 => "i16",
            DataType::F32 => "f32",
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::F32 => 4,
        }
    }

    /// Little-endian encoding of `values`, rounding integer types and
    /// rejecting values that fall outside their range.
    pub(crate) fn encode(self, values: &[f64]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(values.len() * self.bytes());
        for &v in values {
            match self {
                DataType::U8 => {
                    let r = v.round();
                    if !(0.0..=255.0).contains(&r) {
                        return Err(Error::Overflow { value: v, dtype: "u8" });
                    }
                    out.push(r as u8);
                }
                DataType::I16 => {
                    let r = v.round();
                    if !(i16::MIN as f64..=i16::MAX as f64).contains(&r) {
                        return Err(Error::Overflow { value: v, dtype: "i16" });
                    }
                    out.extend_from_slice(&(r as i16).to_le_bytes());
                }
                DataType::F32 => {
                    let f = v as f32;
                    if !f.is_finite() {
                        return Err(Error::Overflow { value: v, dtype: "f32" });
                    }
                    out.extend_from_slice(&f.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn decode(self, bytes: &[u8], count: usize) -> Result<Vec<f64>> {
        let need = count * self.bytes();
        if bytes.len() < need {
            return Err(Error::Format(format!(
                "truncated voxel payload: {} bytes, need {need}",
                bytes.len()
            )));
        }
        let bytes = &bytes[..need];
        Ok(match self {
            DataType::U8 => bytes.iter().map(|&b| b as f64).collect(),
            DataType::I16 => bytes
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            DataType::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        })
    }
}

impl std::str::FromStr for DataType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(DataType::U8),
            "i16" => Ok(DataType::I16),
            "f32" => Ok(DataType::F32),
            other => Err(Error::Unsupported(format!("datatype {other:?}"))),
        }
    }
}

/// Load a `.nii` or `.rvol` volume, dispatching on the extension.
pub fn load_volume(path: &Path) -> Result<Volume3> {
    match extension(path).as_deref() {
        Some("nii") => read_nifti(path),
        Some("rvol") => read_rvol(path),
        _ => Err(Error::Unsupported(format!(
            "{}: expected a .nii or .rvol file",
            path.display()
        ))),
    }
}

pub fn save_volume(vol: &Volume3, path: &Path, dtype: DataType) -> Result<()> {
    match extension(path).as_deref() {
        Some("nii") => write_nifti(vol, path, dtype),
        Some("rvol") => write_rvol(vol, path, dtype),
        _ => Err(Error::Unsupported(format!(
            "{}: expected a .nii or .rvol file",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}
