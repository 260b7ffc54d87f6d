//! C ABI for `fovmatch`.
//!
//! Volumes and masks cross the boundary as opaque handles created by
//! `fm_*_new` / `fm_*_load` and released with the matching `fm_*_free`.
//! Every fallible call returns an [`FmStatus`]; on failure the message is
//! available from [`fm_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fovmatch::evaluation;
use fovmatch::mask::{self, BinaryMask};
use fovmatch::metric::{MetricKind, PatchSpec};
use fovmatch::volume::{self, Grid, Volume};
use fovmatch::{Error, PMParams};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    GridMismatch = 5,
    EmptyMask = 6,
    Config = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmMetric {
    EdgeAlignment = 0,
    L2 = 1,
}

/// Estimation parameters; fill with [`fm_params_default`] before changing fields.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmParams {
    pub resample_spacing_mm: f64,
    pub downsample_factor: usize,
    /// Odd patch edge length in working-grid voxels.
    pub patch_size: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub realizations: usize,
    pub seed: u64,
    /// An `FmMetric` value.
    pub metric: u32,
    pub hist_lo_mm: f64,
    pub hist_hi_mm: f64,
    pub bins: usize,
    /// Nonzero: histogram all realizations instead of their vector median.
    pub pooled_histogram: u8,
    pub box_margin: usize,
}

/// Result of [`fm_estimate_global_shift`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FmShift {
    pub shift_mm: [f64; 3],
    pub mode_counts: [u64; 3],
}

/// Opaque volume handle.
pub struct FmVolume(Volume);

/// Opaque mask handle.
pub struct FmMask(BinaryMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FmStatus {
    match e {
        Error::Io { .. } => FmStatus::Io,
        Error::Header { .. } | Error::ElementCountMismatch { .. } | Error::UnsupportedElementType { .. } => {
            FmStatus::Format
        }
        Error::InvalidArgument(_) => FmStatus::InvalidArgument,
        Error::GridMismatch(_) => FmStatus::GridMismatch,
        Error::EmptyMask(_) => FmStatus::EmptyMask,
        Error::Config(_) => FmStatus::Config,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (FmStatus, String)>) -> FmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FmStatus::Panic
        }
    }
}

fn lib(e: Error) -> (FmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FmStatus, String) {
    (FmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (FmStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FmStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn grid_arg(dims: *const usize, spacing: *const f64, origin: *const f64) -> Result<Grid, (FmStatus, String)> {
    if dims.is_null() || spacing.is_null() || origin.is_null() {
        return Err(null("dims, spacing or origin"));
    }
    let d = ptr::read(dims as *const [usize; 3]);
    let s = ptr::read(spacing as *const [f64; 3]);
    let o = ptr::read(origin as *const [f64; 3]);
    Grid::new(d, s, o).map_err(lib)
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), (FmStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn fm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_params_default(out: *mut FmParams) -> FmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("params"));
        }
        let d = PMParams::default();
        *out = FmParams {
            resample_spacing_mm: d.resample_spacing_mm,
            downsample_factor: d.downsample_factor,
            patch_size: d.patch.edge(),
            iterations: d.iterations,
            alpha: d.alpha,
            realizations: d.realizations,
            seed: d.seed,
            metric: FmMetric::EdgeAlignment as u32,
            hist_lo_mm: d.hist_lo_mm,
            hist_hi_mm: d.hist_hi_mm,
            bins: d.bins,
            pooled_histogram: d.pooled_histogram as u8,
            box_margin: d.box_margin,
        };
        Ok(())
    })
}

fn to_params(p: &FmParams) -> Result<PMParams, (FmStatus, String)> {
    let params = PMParams {
        resample_spacing_mm: p.resample_spacing_mm,
        downsample_factor: p.downsample_factor,
        patch: PatchSpec::with_edge(p.patch_size).map_err(lib)?,
        iterations: p.iterations,
        alpha: p.alpha,
        realizations: p.realizations,
        seed: p.seed,
        metric: match p.metric {
            m if m == FmMetric::EdgeAlignment as u32 => MetricKind::EdgeAlignment,
            m if m == FmMetric::L2 as u32 => MetricKind::L2,
            m => return Err((FmStatus::InvalidArgument, format!("unknown metric {m}"))),
        },
        hist_lo_mm: p.hist_lo_mm,
        hist_hi_mm: p.hist_hi_mm,
        bins: p.bins,
        pooled_histogram: p.pooled_histogram != 0,
        box_margin: p.box_margin,
    };
    params.validate().map_err(lib)?;
    Ok(params)
}

/// Creates a volume from `len` samples in X-fastest order.
///
/// # Safety
/// `dims`, `spacing` and `origin` point to 3 values each; `data` to `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fm_volume_new(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f64,
    len: usize,
    out: *mut *mut FmVolume,
) -> FmStatus {
    guard(|| {
        let grid = grid_arg(dims, spacing, origin)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let v = Volume::new(grid, std::slice::from_raw_parts(data, len).to_vec()).map_err(lib)?;
        out_arg(out, FmVolume(v))
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fm_volume_load(path: *const c_char, out: *mut *mut FmVolume) -> FmStatus {
    guard(|| {
        let v = volume::load_volume(path_arg(path)?).map_err(lib)?;
        out_arg(out, FmVolume(v))
    })
}

/// # Safety
/// `v` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fm_volume_save(v: *const FmVolume, path: *const c_char) -> FmStatus {
    guard(|| {
        let v = v.as_ref().ok_or_else(|| null("volume"))?;
        volume::save_volume(&v.0, path_arg(path)?).map_err(lib)
    })
}

/// Writes the grid size to `dims_out[0..3]`.
///
/// # Safety
/// `v` is a live handle; `dims_out` is writable for 3 values.
#[no_mangle]
pub unsafe extern "C" fn fm_volume_dims(v: *const FmVolume, dims_out: *mut usize) -> FmStatus {
    guard(|| {
        let v = v.as_ref().ok_or_else(|| null("volume"))?;
        if dims_out.is_null() {
            return Err(null("dims_out"));
        }
        ptr::write(dims_out as *mut [usize; 3], v.0.dims());
        Ok(())
    })
}

/// Copies up to `len` samples into `data_out`.
///
/// # Safety
/// `v` is a live handle; `data_out` is writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn fm_volume_copy_data(v: *const FmVolume, data_out: *mut f64, len: usize) -> FmStatus {
    guard(|| {
        let v = v.as_ref().ok_or_else(|| null("volume"))?;
        if data_out.is_null() {
            return Err(null("data_out"));
        }
        let src = v.0.data();
        if len != src.len() {
            return Err((
                FmStatus::InvalidArgument,
                format!("buffer holds {len} samples, volume has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), data_out, len);
        Ok(())
    })
}

/// # Safety
/// `v` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_volume_free(v: *mut FmVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Creates a mask from `len` bytes in X-fastest order; nonzero is inside.
///
/// # Safety
/// As [`fm_volume_new`].
#[no_mangle]
pub unsafe extern "C" fn fm_mask_new(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const u8,
    len: usize,
    out: *mut *mut FmMask,
) -> FmStatus {
    guard(|| {
        let grid = grid_arg(dims, spacing, origin)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let bits = std::slice::from_raw_parts(data, len).iter().map(|&b| b != 0).collect();
        let m = BinaryMask::new(grid, bits).map_err(lib)?;
        out_arg(out, FmMask(m))
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_load(path: *const c_char, out: *mut *mut FmMask) -> FmStatus {
    guard(|| {
        let m = mask::load_mask(path_arg(path)?).map_err(lib)?;
        out_arg(out, FmMask(m))
    })
}

/// # Safety
/// `m` is a live handle; `count_out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_count(m: *const FmMask, count_out: *mut usize) -> FmStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("mask"))?;
        if count_out.is_null() {
            return Err(null("count_out"));
        }
        *count_out = m.0.count();
        Ok(())
    })
}

/// # Safety
/// `m` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_free(m: *mut FmMask) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Dice coefficient of two masks on the same grid.
///
/// # Safety
/// `a` and `b` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fm_dice(a: *const FmMask, b: *const FmMask, out: *mut f64) -> FmStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("mask a"))?, b.as_ref().ok_or_else(|| null("mask b"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = evaluation::dice(&a.0, &b.0).map_err(lib)?;
        Ok(())
    })
}

/// Estimates the translation taking the organ of `fixed` (delineated by `mask`)
/// to its position in `moving`. `params` may be null for the defaults.
///
/// # Safety
/// Handles are live; `params` is null or readable; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fm_estimate_global_shift(
    fixed: *const FmVolume,
    moving: *const FmVolume,
    mask: *const FmMask,
    params: *const FmParams,
    out: *mut FmShift,
) -> FmStatus {
    guard(|| {
        let fixed = fixed.as_ref().ok_or_else(|| null("fixed"))?;
        let moving = moving.as_ref().ok_or_else(|| null("moving"))?;
        let mask = mask.as_ref().ok_or_else(|| null("mask"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = match params.as_ref() {
            Some(p) => to_params(p)?,
            None => PMParams::default(),
        };
        let g = fovmatch::estimate_global_shift(&fixed.0, &moving.0, &mask.0, &params).map_err(lib)?;
        *out = FmShift {
            shift_mm: g.shift_mm,
            mode_counts: g.mode_counts,
        };
        Ok(())
    })
}
