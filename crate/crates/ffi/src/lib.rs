//! C interface to the shadowcast estimator.
//!
//! Every fallible function returns a [`ShadowcastStatus`]; on failure the
//! message is kept per thread and read back with
//! [`shadowcast_last_error_message`]. Fields are opaque handles released with
//! [`shadowcast_field_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use shadowcast::cmae::estimate_from_grids;
use shadowcast::fractal_field::{cloud_to_clearsky, synthesize, ClearSkyField, FieldConfig};
use shadowcast::gridding::{idw_interpolate, GridSnapshot, GridSpec};
use shadowcast::raster_io;
use shadowcast::transit::{Sample, SensorSnapshot};
use shadowcast::{Bounds, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadowcastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    OutOfCoverage = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque clear-sky field.
pub struct ShadowcastField {
    inner: ClearSkyField,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowcastMotion {
    /// m/s
    pub speed: f64,
    /// Degrees clockwise from north, the direction of travel.
    pub direction_deg: f64,
    /// Zero when no usable snapshot pair existed.
    pub valid: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: ShadowcastStatus, msg: impl Into<String>) -> ShadowcastStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> ShadowcastStatus {
    match e {
        Error::Io { .. } | Error::Image { .. } | Error::Multiple(_) => ShadowcastStatus::Io,
        Error::InsufficientData(_) | Error::EmptyInput(_) => ShadowcastStatus::InsufficientData,
        Error::Coverage { .. } | Error::Sizing { .. } => ShadowcastStatus::OutOfCoverage,
        _ => ShadowcastStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), ShadowcastStatus>) -> ShadowcastStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ShadowcastStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(ShadowcastStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: shadowcast::Result<T>) -> Result<T, ShadowcastStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return Err(fail(ShadowcastStatus::NullPointer, concat!(stringify!($p), " is null")));
        })+
    };
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, ShadowcastStatus> {
    non_null!(p);
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(ShadowcastStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Clear-sky index of cloud index `n`.
#[no_mangle]
pub extern "C" fn shadowcast_cloud_to_clearsky(n: f64) -> f64 {
    cloud_to_clearsky(n)
}

/// Synthesizes a quantized fractal clear-sky field.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle owned by
/// the caller.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_generate(
    side_px: usize,
    fractal_dimension: f64,
    seed: u64,
    pixel_size_m: f64,
    out: *mut *mut ShadowcastField,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(out);
        let field = lift(synthesize(&FieldConfig {
            side_px,
            fractal_dimension,
            seed,
            pixel_size_m,
            ..FieldConfig::default()
        }))?;
        *out = Box::into_raw(Box::new(ShadowcastField { inner: field }));
        Ok(())
    })
}

/// Reads a field from a PGM image and its sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_load(
    path: *const c_char,
    out: *mut *mut ShadowcastField,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(out);
        let path = path_arg(path)?;
        let field = lift(raster_io::import_field(path))?;
        *out = Box::into_raw(Box::new(ShadowcastField { inner: field }));
        Ok(())
    })
}

/// Writes a field as PGM plus sidecar.
///
/// # Safety
/// `field` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_save(
    field: *const ShadowcastField,
    path: *const c_char,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(field);
        let path = path_arg(path)?;
        lift(raster_io::export_field(&(*field).inner, path))
    })
}

/// Releases a field. Null is ignored.
///
/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_free(field: *mut ShadowcastField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Side length in pixels, 0 for a null handle.
///
/// # Safety
/// `field` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_side_px(field: *const ShadowcastField) -> usize {
    field.as_ref().map_or(0, |f| f.inner.side_px())
}

/// Pixel size in meters, 0 for a null handle.
///
/// # Safety
/// `field` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_pixel_size(field: *const ShadowcastField) -> f64 {
    field.as_ref().map_or(0.0, |f| f.inner.pixel_size_m())
}

/// Clear-sky index at field coordinates `(x, y)` in meters.
///
/// # Safety
/// `field` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_lookup(
    field: *const ShadowcastField,
    x: f64,
    y: f64,
    out: *mut f32,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(field, out);
        match (*field).inner.lookup(x, y) {
            Some(v) => {
                *out = v;
                Ok(())
            }
            None => Err(fail(
                ShadowcastStatus::OutOfCoverage,
                format!("({x}, {y}) lies outside the field"),
            )),
        }
    })
}

/// Copies all values, row 0 first, into `out`, which must hold
/// `side_px * side_px` floats.
///
/// # Safety
/// `field` must come from this library and `out` point to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_field_copy_values(
    field: *const ShadowcastField,
    out: *mut f32,
    len: usize,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(field, out);
        let values = (*field).inner.values();
        if len < values.len() {
            return Err(fail(
                ShadowcastStatus::BufferTooSmall,
                format!("need {} floats, got {len}", values.len()),
            ));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
        Ok(())
    })
}

/// Grid dimensions for `bounds` at spacing `dmin`.
///
/// # Safety
/// `nx` and `ny` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn shadowcast_grid_shape(
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
    dmin: f64,
    nx: *mut usize,
    ny: *mut usize,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(nx, ny);
        let spec = lift(GridSpec::new(Bounds::new(min_x, min_y, max_x, max_y), dmin))?;
        *nx = spec.nx();
        *ny = spec.ny();
        Ok(())
    })
}

/// Interpolates `n` scattered readings onto the grid of
/// [`shadowcast_grid_shape`] with `k` nearest neighbors. `out` receives
/// `nx * ny` values, row 0 at `min_y`. Fewer than `k` readings give
/// `InsufficientData`.
///
/// # Safety
/// `x`, `y` and `kstar` must point to `n` values, `out` to `out_len` floats.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn shadowcast_idw_grid(
    x: *const f64,
    y: *const f64,
    kstar: *const f32,
    n: usize,
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
    dmin: f64,
    k: usize,
    out: *mut f32,
    out_len: usize,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(out);
        if n > 0 {
            non_null!(x, y, kstar);
        }
        if k == 0 {
            return Err(fail(ShadowcastStatus::InvalidArgument, "k must be at least 1"));
        }
        let spec = lift(GridSpec::new(Bounds::new(min_x, min_y, max_x, max_y), dmin))?;
        if out_len < spec.len() {
            return Err(fail(
                ShadowcastStatus::BufferTooSmall,
                format!("need {} floats, got {out_len}", spec.len()),
            ));
        }
        let (xs, ys, ks) = if n == 0 {
            (&[][..], &[][..], &[][..])
        } else {
            (slice::from_raw_parts(x, n), slice::from_raw_parts(y, n), slice::from_raw_parts(kstar, n))
        };
        let snapshot = SensorSnapshot {
            t: 0,
            sensors: (0..n)
                .map(|i| Sample {
                    vehicle: i as u32,
                    x: xs[i],
                    y: ys[i],
                    kstar: ks[i],
                })
                .collect(),
        };
        let grid = idw_interpolate(&snapshot, &spec, k);
        if !grid.valid {
            return Err(fail(
                ShadowcastStatus::InsufficientData,
                format!("{n} readings, {k} neighbors required"),
            ));
        }
        ptr::copy_nonoverlapping(grid.values.as_ptr(), out, grid.values.len());
        Ok(())
    })
}

/// Estimates the motion of `n_snapshots` consecutive `nx * ny` grids taken
/// every `sampling_period_s` seconds. `valid` may be null (all valid) or
/// point to one flag per snapshot.
///
/// # Safety
/// `grids` must point to `n_snapshots * nx * ny` floats, `valid` to
/// `n_snapshots` bytes when non-null, and `out` be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn shadowcast_estimate_motion(
    grids: *const f32,
    n_snapshots: usize,
    nx: usize,
    ny: usize,
    valid: *const u8,
    sampling_period_s: u32,
    timestep_s: u32,
    dmin: f64,
    v_cap: f64,
    out: *mut ShadowcastMotion,
) -> ShadowcastStatus {
    guard(|| {
        non_null!(grids, out);
        if nx == 0 || ny == 0 || n_snapshots == 0 || sampling_period_s == 0 {
            return Err(fail(
                ShadowcastStatus::InvalidArgument,
                "grid shape, snapshot count and sampling period must be positive",
            ));
        }
        if timestep_s == 0 || !timestep_s.is_multiple_of(sampling_period_s) {
            return Err(fail(
                ShadowcastStatus::InvalidArgument,
                format!("time step {timestep_s} s is not a multiple of {sampling_period_s} s"),
            ));
        }
        if !(dmin > 0.0 && v_cap > 0.0) {
            return Err(fail(ShadowcastStatus::InvalidArgument, "dmin and v_cap must be positive"));
        }
        let cells = nx * ny;
        let data = slice::from_raw_parts(grids, n_snapshots * cells);
        let flags = (!valid.is_null()).then(|| slice::from_raw_parts(valid, n_snapshots));
        let snapshots: Vec<GridSnapshot> = data
            .chunks_exact(cells)
            .enumerate()
            .map(|(i, v)| {
                let mut g = GridSnapshot::new(i as u32 * sampling_period_s, nx, ny, v.to_vec());
                g.valid = flags.is_none_or(|f| f[i] != 0);
                g
            })
            .collect();
        let est = estimate_from_grids(&snapshots, timestep_s, dmin, v_cap);
        *out = ShadowcastMotion {
            speed: est.speed,
            direction_deg: est.direction_deg,
            valid: est.valid as u8,
        };
        Ok(())
    })
}
