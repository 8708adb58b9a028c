//! C ABI over `vesselwall`.
//!
//! Every function returns a [`VwStatus`]; on failure the message is kept
//! per thread and read with [`vw_last_error`]. Handles are opaque and must
//! be released with their `*_free` function. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vesselwall::contours::ContourKind;
use vesselwall::metrics;
use vesselwall::reconstruction::{build_pseudolabel, PipelineConfig};
use vesselwall::volume::{load_volume, save_volume, DataType};
use vesselwall::{CenterlineTree, Contour2D, Error, SegmenterBackend, Volume3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Unsupported = 5,
    Geometry = 6,
    NotConverged = 7,
    Segmenter = 8,
    ZeroContours = 9,
    Panic = 10,
}

impl From<&Error> for VwStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => VwStatus::Io,
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => VwStatus::Format,
            Error::Unsupported(_) => VwStatus::Unsupported,
            Error::InvalidArgument(_) | Error::Overflow { .. } => VwStatus::InvalidArgument,
            Error::Geometry(_) | Error::InsufficientPoints(_) => VwStatus::Geometry,
            Error::NotConverged { .. } => VwStatus::NotConverged,
            Error::Segmenter(_) => VwStatus::Segmenter,
            Error::ZeroContours => VwStatus::ZeroContours,
        }
    }
}

/// Opaque 3D volume.
pub struct VwVolume(Volume3);

/// Opaque CCA/ICA/ECA centerline tree.
pub struct VwCenterline(CenterlineTree);

/// Pipeline settings; fill with [`vw_config_default`] before changing fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VwConfig {
    /// Sampling distance between cross-sections (mm).
    pub sd: f64,
    /// Non-zero to sample the bifurcation area along the bifurcation axis.
    pub use_bifurcation_axis: u8,
    pub bif_region: f64,
    pub branch_offset: f64,
    /// Output voxel size (mm).
    pub grid_spacing: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn guard(f: impl FnOnce() -> Result<(), (VwStatus, String)>) -> VwStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            VwStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (VwStatus, String) {
    (VwStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (VwStatus, String) {
    (VwStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (VwStatus, String) {
    (VwStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (VwStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (VwStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn vw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a `.nii` or `.rvol` volume.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vw_volume_load(path: *const c_char, out: *mut *mut VwVolume) -> VwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let v = load_volume(&path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(VwVolume(v)));
        Ok(())
    })
}

/// Write a volume; the format follows the extension. `label_mask` non-zero
/// stores u8 labels, otherwise f32.
///
/// # Safety
/// `vol` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn vw_volume_save(vol: *const VwVolume, path: *const c_char, label_mask: u8) -> VwStatus {
    guard(|| {
        let vol = vol.as_ref().ok_or_else(|| null("vol"))?;
        let path = path_arg(path, "path")?;
        let dtype = if label_mask != 0 { DataType::U8 } else { DataType::F32 };
        save_volume(&vol.0, &path, dtype).map_err(lib_err)
    })
}

/// Voxel counts along i, j, k.
///
/// # Safety
/// `vol` must come from this library; `dims` must hold three elements.
#[no_mangle]
pub unsafe extern "C" fn vw_volume_dims(vol: *const VwVolume, dims: *mut usize) -> VwStatus {
    guard(|| {
        let vol = vol.as_ref().ok_or_else(|| null("vol"))?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = vol.0.dims();
        ptr::copy_nonoverlapping(d.as_ptr(), dims, 3);
        Ok(())
    })
}

/// Borrow the voxel values (i fastest). The pointer lives as long as `vol`.
///
/// # Safety
/// `vol` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vw_volume_data(vol: *const VwVolume, data: *mut *const f64, len: *mut usize) -> VwStatus {
    guard(|| {
        let vol = vol.as_ref().ok_or_else(|| null("vol"))?;
        let data = out_ptr(data, "data")?;
        let len = out_ptr(len, "len")?;
        *data = vol.0.data().as_ptr();
        *len = vol.0.data().len();
        Ok(())
    })
}

/// # Safety
/// `vol` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn vw_volume_free(vol: *mut VwVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Load a centerline tree JSON file.
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vw_centerline_load(path: *const c_char, out: *mut *mut VwCenterline) -> VwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let t = CenterlineTree::load(&path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(VwCenterline(t)));
        Ok(())
    })
}

/// # Safety
/// `tree` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn vw_centerline_free(tree: *mut VwCenterline) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Defaults: SD 0.6 mm with the bifurcation axis, 0.3 mm grid.
///
/// # Safety
/// `cfg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vw_config_default(cfg: *mut VwConfig) -> VwStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        let d = PipelineConfig::default();
        *cfg = VwConfig {
            sd: d.plan.sd,
            use_bifurcation_axis: u8::from(d.plan.use_bifurcation_axis),
            bif_region: d.plan.bif_region,
            branch_offset: d.plan.branch_offset,
            grid_spacing: d.poisson.spacing,
        };
        Ok(())
    })
}

/// Build a 3D pseudo-label with the builtin segmenter. `failed_planes` may
/// be null.
///
/// # Safety
/// Handles must come from this library; `cfg` must be readable and
/// `out_mask` writable.
#[no_mangle]
pub unsafe extern "C" fn vw_build_pseudolabel(
    vol: *const VwVolume,
    tree: *const VwCenterline,
    cfg: *const VwConfig,
    out_mask: *mut *mut VwVolume,
    failed_planes: *mut usize,
) -> VwStatus {
    guard(|| {
        let out_mask = out_ptr(out_mask, "out_mask")?;
        *out_mask = ptr::null_mut();
        let vol = vol.as_ref().ok_or_else(|| null("vol"))?;
        let tree = tree.as_ref().ok_or_else(|| null("tree"))?;
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let mut p = PipelineConfig::default();
        p.plan.sd = c.sd;
        p.plan.use_bifurcation_axis = c.use_bifurcation_axis != 0;
        p.plan.bif_region = c.bif_region;
        p.plan.branch_offset = c.branch_offset;
        p.poisson.spacing = c.grid_spacing;
        for (name, v) in [("sd", c.sd), ("bif_region", c.bif_region), ("branch_offset", c.branch_offset), ("grid_spacing", c.grid_spacing)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        let pl = build_pseudolabel(&vol.0, &tree.0, &SegmenterBackend::default(), &p).map_err(lib_err)?;
        if let Some(f) = failed_planes.as_mut() {
            *f = pl.failed_planes();
        }
        *out_mask = Box::into_raw(Box::new(VwVolume(pl.mask)));
        Ok(())
    })
}

/// Dice of two binary masks of `n` pixels (non-zero = set); 1 when both
/// are empty.
///
/// # Safety
/// `a` and `b` must hold `n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vw_dsc(a: *const u8, b: *const u8, n: usize, out: *mut f64) -> VwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if n > 0 && (a.is_null() || b.is_null()) {
            return Err(null("mask"));
        }
        let (a, b) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            let f = |p: *const u8| std::slice::from_raw_parts(p, n).iter().map(|&x| x != 0).collect::<Vec<_>>();
            (f(a), f(b))
        };
        *out = metrics::dsc(&a, &b);
        Ok(())
    })
}

unsafe fn contour_arg(xy: *const f64, n: usize, what: &str) -> Result<Vec<Contour2D>, (VwStatus, String)> {
    if xy.is_null() {
        return Err(null(what));
    }
    let flat = std::slice::from_raw_parts(xy, 2 * n);
    let pts = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(vec![Contour2D::new(pts, ContourKind::LumenBoundary).map_err(lib_err)?])
}

type DistanceFn = fn(&[Contour2D], &[Contour2D], f64) -> vesselwall::Result<f64>;

unsafe fn contour_distance(
    f: DistanceFn,
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    step: f64,
    out: *mut f64,
) -> VwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = contour_arg(a, na, "a")?;
        let b = contour_arg(b, nb, "b")?;
        *out = f(&a, &b, step).map_err(lib_err)?;
        Ok(())
    })
}

/// Symmetric average distance (mm) between two closed polygons given as
/// interleaved x, y pairs; `step` is the resampling step (0.05 typical).
///
/// # Safety
/// `a` holds `2 * na` doubles, `b` holds `2 * nb`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vw_acd(a: *const f64, na: usize, b: *const f64, nb: usize, step: f64, out: *mut f64) -> VwStatus {
    contour_distance(metrics::acd, a, na, b, nb, step, out)
}

/// Symmetric Hausdorff distance (mm); arguments as [`vw_acd`].
///
/// # Safety
/// As [`vw_acd`].
#[no_mangle]
pub unsafe extern "C" fn vw_hausdorff(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    step: f64,
    out: *mut f64,
) -> VwStatus {
    contour_distance(metrics::hausdorff, a, na, b, nb, step, out)
}
