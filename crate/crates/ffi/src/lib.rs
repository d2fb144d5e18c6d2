//! C ABI over `mfglab`.
//!
//! Every entry point returns an [`MfglabStatus`]; on anything but
//! `MFGLAB_STATUS_OK` the calling thread's message is available from
//! [`mfglab_last_error_message`]. Handles are opaque, owned by the caller and
//! released with the matching `_free`. Out-parameters are written only on
//! success. Panics never cross the boundary.

use mfglab::harness::checks::solve_path;
use mfglab::harness::{run_to_dir, Command, Config};
use mfglab::spde::MeasurePath;
use mfglab::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfglabStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

/// A validated experiment configuration.
pub struct MfglabConfig(Config);

/// A solved measure path: densities on a uniform grid at every time step.
pub struct MfglabPath(MeasurePath);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(MfglabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) => MfglabStatus::InvalidConfig,
            Error::Argument(_) | Error::Dimension { .. } => MfglabStatus::InvalidArgument,
            Error::Io(_) => MfglabStatus::Io,
            _ => MfglabStatus::Numerical,
        };
        Fail(status, e.to_string())
    }
}

fn set_error(msg: String) {
    // Interior NULs would truncate the message; replace them.
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfglabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfglabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MfglabStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: the caller promises a non-null pointer is valid for reads.
    unsafe { p.as_ref() }.ok_or_else(|| Fail(MfglabStatus::NullArgument, format!("{what} is null")))
}

fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(p, what)?;
    // SAFETY: non-null and NUL-terminated by contract.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Fail(MfglabStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: the caller promises a non-null pointer is valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(MfglabStatus::NullArgument, format!("{what} is null")))
}

fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail(MfglabStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", src.len())));
    }
    if buf.is_null() {
        return Err(Fail(MfglabStatus::NullArgument, "buffer is null".into()));
    }
    // SAFETY: buf is valid for `len >= src.len()` writes by contract.
    unsafe { std::slice::from_raw_parts_mut(buf, src.len()) }.copy_from_slice(src);
    Ok(())
}

fn slice_index(path: &MeasurePath, step: usize) -> Result<usize, Fail> {
    if step < path.slices.len() {
        Ok(step)
    } else {
        Err(Fail(MfglabStatus::OutOfRange, format!("step {step} beyond the last step {}", path.slices.len() - 1)))
    }
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn mfglab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfglab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parses `text` (`key = value` lines) as the configuration of `command`
/// (a subcommand name such as `"spde-solve"`). All problems are reported at
/// once, separated by `"; "`.
///
/// # Safety
/// `command` and `text` are NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mfglab_config_parse(command: *const c_char, text: *const c_char, out: *mut *mut MfglabConfig) -> MfglabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let command: Command = string(command, "command")?.parse()?;
        let cfg = Config::parse(command, string(text, "text")?, &[])?;
        *out = Box::into_raw(Box::new(MfglabConfig(cfg)));
        Ok(())
    })
}

/// Sets `key` to `value`, revalidating the whole configuration. On failure
/// the configuration is unchanged.
///
/// # Safety
/// `cfg` is a live handle; `key` and `value` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mfglab_config_set(cfg: *mut MfglabConfig, key: *const c_char, value: *const c_char) -> MfglabStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        cfg.0 = cfg.0.with(string(key, "key")?, string(value, "value")?)?;
        Ok(())
    })
}

/// Writes the 64 hex digits of the configuration hash and a NUL into `buf`.
///
/// # Safety
/// `cfg` is a live handle; `buf` is writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mfglab_config_hash(cfg: *const MfglabConfig, buf: *mut c_char, len: usize) -> MfglabStatus {
    guard(|| {
        let hash = non_null(cfg, "cfg")?.0.content_hash();
        if len <= hash.len() {
            return Err(Fail(MfglabStatus::BufferTooSmall, format!("hash needs {} bytes", hash.len() + 1)));
        }
        out_ptr(buf, "buf")?;
        // SAFETY: buf is valid for len > hash.len() bytes.
        let dst = std::slice::from_raw_parts_mut(buf.cast::<u8>(), hash.len() + 1);
        dst[..hash.len()].copy_from_slice(hash.as_bytes());
        dst[hash.len()] = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` is null or a handle from [`mfglab_config_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfglab_config_free(cfg: *mut MfglabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured subcommand on `workers` threads (0: one per core) and
/// writes `report.json`, its CSV files and `meta.json` into `out_dir`.
///
/// # Safety
/// `cfg` is a live handle; `out_dir` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mfglab_run(cfg: *const MfglabConfig, out_dir: *const c_char, workers: usize) -> MfglabStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        run_to_dir(&cfg.0, Path::new(string(out_dir, "out_dir")?), workers)?;
        Ok(())
    })
}

/// Solves the SPDE of a `spde-solve` configuration on the common-noise path
/// of `seed`.
///
/// # Safety
/// `cfg` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mfglab_spde_solve(cfg: *const MfglabConfig, seed: u64, out: *mut *mut MfglabPath) -> MfglabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = solve_path(&non_null(cfg, "cfg")?.0, seed)?;
        *out = Box::into_raw(Box::new(MfglabPath(path)));
        Ok(())
    })
}

/// Number of stored time levels (steps + 1) and of grid nodes.
///
/// # Safety
/// `path` is a live handle; `n_times` and `n_nodes` are writable.
#[no_mangle]
pub unsafe extern "C" fn mfglab_path_shape(path: *const MfglabPath, n_times: *mut usize, n_nodes: *mut usize) -> MfglabStatus {
    guard(|| {
        let p = &non_null(path, "path")?.0;
        let (t, n) = (out_ptr(n_times, "n_times")?, out_ptr(n_nodes, "n_nodes")?);
        *t = p.slices.len();
        *n = p.grid.n();
        Ok(())
    })
}

/// Grid nodes into `buf[0..n_nodes]`.
///
/// # Safety
/// `path` is a live handle; `buf` is writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfglab_path_nodes(path: *const MfglabPath, buf: *mut f64, len: usize) -> MfglabStatus {
    guard(|| copy_out(&non_null(path, "path")?.0.grid.points(), buf, len))
}

/// Density at time level `step` into `buf[0..n_nodes]`.
///
/// # Safety
/// `path` is a live handle; `buf` is writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfglab_path_density(path: *const MfglabPath, step: usize, buf: *mut f64, len: usize) -> MfglabStatus {
    guard(|| {
        let p = &non_null(path, "path")?.0;
        copy_out(&p.slices[slice_index(p, step)?].density, buf, len)
    })
}

/// Raw moment ∫ xᵏ μ(dx) at time level `step`, and the common noise W there.
///
/// # Safety
/// `path` is a live handle; `moment` and `w` are writable.
#[no_mangle]
pub unsafe extern "C" fn mfglab_path_moment(path: *const MfglabPath, step: usize, k: i32, moment: *mut f64, w: *mut f64) -> MfglabStatus {
    guard(|| {
        let p = &non_null(path, "path")?.0;
        let i = slice_index(p, step)?;
        let (m, w) = (out_ptr(moment, "moment")?, out_ptr(w, "w")?);
        *m = p.slices[i].moment(k);
        *w = p.w_path[i];
        Ok(())
    })
}

/// # Safety
/// `path` is null or a handle from [`mfglab_spde_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfglab_path_free(path: *mut MfglabPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}
