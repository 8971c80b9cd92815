//! C ABI for `smog-core`.
//!
//! Every fallible function returns a [`SmogStatus`]; on failure a message is
//! available from [`smog_last_error`] on the same thread. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use smog_core::geometry::io::{read_cloud_file, write_xyz_file};
use smog_core::losses::{chamfer, hausdorff};
use smog_core::network::{output_count, Model, ModelConfig};
use smog_core::{Error, PointCloud};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmogStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A point cloud.
pub struct SmogCloud(PointCloud);

/// A trained or freshly initialised model.
pub struct SmogModel(Model<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmogStatus {
    match e {
        Error::Io(_) => SmogStatus::Io,
        Error::Parse { .. } | Error::InvalidMesh(_) => SmogStatus::Parse,
        Error::Checkpoint(_) => SmogStatus::Checkpoint,
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::NonFiniteCoordinate(_) => {
            SmogStatus::Numeric
        }
        _ => SmogStatus::InvalidArgument,
    }
}

fn fail(status: SmogStatus, msg: impl Into<String>) -> SmogStatus {
    set_error(msg.into());
    status
}

fn guard<F: FnOnce() -> Result<(), SmogStatus>>(f: F) -> SmogStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmogStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SmogStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: smog_core::Result<T>) -> Result<T, SmogStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, SmogStatus> {
    if p.is_null() {
        return Err(fail(SmogStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(SmogStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn cloud_ref<'a>(c: *const SmogCloud) -> Result<&'a PointCloud, SmogStatus> {
    c.as_ref()
        .map(|c| &c.0)
        .ok_or_else(|| fail(SmogStatus::NullPointer, "cloud handle is null"))
}

unsafe fn model_ref<'a>(m: *const SmogModel) -> Result<&'a Model<f32>, SmogStatus> {
    m.as_ref()
        .map(|m| &m.0)
        .ok_or_else(|| fail(SmogStatus::NullPointer, "model handle is null"))
}

fn out_arg<T>(out: *mut T) -> Result<(), SmogStatus> {
    if out.is_null() {
        Err(fail(SmogStatus::NullPointer, "output pointer is null"))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smog_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn smog_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map(|c| c.as_bytes()).unwrap_or(b"");
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a cloud from `count` interleaved `x, y, z` doubles.
///
/// # Safety
/// `xyz` must be valid for `3 * count` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_cloud_new(
    xyz: *const f64,
    count: usize,
    out: *mut *mut SmogCloud,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        if xyz.is_null() && count > 0 {
            return Err(fail(SmogStatus::NullPointer, "coordinate buffer is null"));
        }
        let flat = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(xyz, 3 * count)
        };
        let c = lift(PointCloud::from_flat(flat))?;
        *out = Box::into_raw(Box::new(SmogCloud(c)));
        Ok(())
    })
}

/// Reads a `.xyz`, `.ply` or `.off` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_cloud_read(
    path: *const c_char,
    out: *mut *mut SmogCloud,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        let p = path_arg(path)?;
        let c = lift(read_cloud_file(&p))?;
        *out = Box::into_raw(Box::new(SmogCloud(c)));
        Ok(())
    })
}

/// Writes the cloud as `.xyz`.
///
/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn smog_cloud_write_xyz(
    cloud: *const SmogCloud,
    path: *const c_char,
) -> SmogStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        let p = path_arg(path)?;
        lift(write_xyz_file(&p, c))
    })
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smog_cloud_len(cloud: *const SmogCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coordinates into `xyz`, which holds `capacity` points.
///
/// # Safety
/// `cloud` must be a live handle; `xyz` must be valid for `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn smog_cloud_copy(
    cloud: *const SmogCloud,
    xyz: *mut f64,
    capacity: usize,
) -> SmogStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        out_arg(xyz)?;
        if capacity < c.len() {
            return Err(fail(
                SmogStatus::BufferTooSmall,
                format!("buffer holds {capacity} points, cloud has {}", c.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(xyz, 3 * c.len());
        dst.copy_from_slice(&c.flat());
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smog_cloud_free(cloud: *mut SmogCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Fresh model from a named preset (`desk`, `paper` or `toy`).
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_model_init(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut SmogModel,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        if preset.is_null() {
            return Err(fail(SmogStatus::NullPointer, "preset is null"));
        }
        let mut cfg = match CStr::from_ptr(preset).to_str() {
            Ok("desk") => ModelConfig::desk(),
            Ok("paper") => ModelConfig::paper(),
            Ok("toy") => ModelConfig::toy(),
            _ => return Err(fail(SmogStatus::InvalidArgument, "unknown preset")),
        };
        cfg.init_seed = seed;
        let m = lift(Model::new(cfg))?;
        *out = Box::into_raw(Box::new(SmogModel(m)));
        Ok(())
    })
}

/// Loads a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_model_load(
    path: *const c_char,
    out: *mut *mut SmogModel,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        let p = path_arg(path)?;
        let m = lift(Model::load(&p))?;
        *out = Box::into_raw(Box::new(SmogModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn smog_model_save(
    model: *const SmogModel,
    path: *const c_char,
) -> SmogStatus {
    guard(|| {
        let m = model_ref(model)?;
        let p = path_arg(path)?;
        lift(m.save(&p))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smog_model_free(model: *mut SmogModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output points `round(ratio * n)` for an input of `n` points.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_output_count(n: usize, ratio: f64, out: *mut usize) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        *out = lift(output_count(n, ratio))?;
        Ok(())
    })
}

/// Upsamples `input` by `ratio` in one pass (no patching).
///
/// # Safety
/// `model` and `input` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_upsample(
    model: *const SmogModel,
    input: *const SmogCloud,
    ratio: f64,
    seed: u64,
    out: *mut *mut SmogCloud,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        let m = model_ref(model)?;
        let c = cloud_ref(input)?;
        let up = lift(m.upsample(c, ratio, seed))?;
        *out = Box::into_raw(Box::new(SmogCloud(up.points)));
        Ok(())
    })
}

/// Chamfer distance (sum of both directed mean squared nearest distances).
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_chamfer(
    a: *const SmogCloud,
    b: *const SmogCloud,
    out: *mut f64,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        *out = lift(chamfer(cloud_ref(a)?, cloud_ref(b)?))?;
        Ok(())
    })
}

/// Symmetric Hausdorff distance.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smog_hausdorff(
    a: *const SmogCloud,
    b: *const SmogCloud,
    out: *mut f64,
) -> SmogStatus {
    guard(|| {
        out_arg(out)?;
        *out = lift(hausdorff(cloud_ref(a)?, cloud_ref(b)?))?;
        Ok(())
    })
}
