//! C ABI over the tcmr library.
//!
//! Every entry point returns a [`TcmrStatus`]; results come back through
//! caller-provided pointers. On failure the message is kept per thread and can
//! be read with [`tcmr_last_error_message`]. Handles are opaque and must be
//! released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use tcmr::bodymodel::{BodyModel, BodyParams};
use tcmr::metrics::{self, Point};
use tcmr::numerics::{Graph, Tensor};
use tcmr::pipeline::{Checkpoint, TemporalModel};
use tcmr::rotations::{
    axis_angle_to_matrix, matrix_to_axis_angle, rot6d_to_matrix, AxisAngle, Rot6D, RotationMatrix,
};
use tcmr::Error;

/// Largest deviation from orthonormality accepted for an input rotation matrix.
pub const TCMR_ROTATION_TOLERANCE: f64 = 1e-6;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcmrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Wrong buffer length, index out of range or malformed value.
    InvalidArgument = 2,
    Io = 3,
    /// A file could not be parsed or failed its integrity check.
    Format = 4,
    /// Inputs built for different models or dimensions.
    Incompatible = 5,
    /// Invalid body model or run configuration.
    Config = 6,
    /// Degenerate geometry or a non-finite value.
    Numeric = 7,
    /// An internal bug; the library caught a panic.
    Internal = 8,
}

/// A skeleton and mesh; thread-safe and shareable between models.
pub struct TcmrBodyModel {
    inner: Arc<BodyModel>,
}

/// A trained network loaded from a checkpoint.
pub struct TcmrModel {
    inner: TemporalModel,
}

struct Failure(TcmrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) | Error::OutOfRange(_) => TcmrStatus::InvalidArgument,
            Error::Degenerate(_) | Error::NonFinite(_) | Error::TrainingAborted(_) => {
                TcmrStatus::Numeric
            }
            Error::BodyModel { .. } | Error::Config { .. } => TcmrStatus::Config,
            Error::Format { .. } | Error::Json(_) => TcmrStatus::Format,
            Error::Incompatible { .. } => TcmrStatus::Incompatible,
            Error::Io { .. } => TcmrStatus::Io,
        };
        let mut msg = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            source = s.source();
        }
        Failure(status, msg)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TcmrStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TcmrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TcmrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal error: {msg}"));
            TcmrStatus::Internal
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(Failure(TcmrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(Failure(TcmrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| Failure(TcmrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure(TcmrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn read_path(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(Failure(TcmrStatus::NullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), Failure> {
    if got != expected {
        return Err(invalid(format!(
            "{what} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

fn points(data: &[f64]) -> Vec<Point> {
    data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tcmr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// including the terminator, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tcmr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// The bundled 24-joint body model.
///
/// # Safety
/// `out` must be a valid pointer; the handle written there is owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn tcmr_body_model_default(out: *mut *mut TcmrBodyModel) -> TcmrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(TcmrBodyModel {
            inner: Arc::new(BodyModel::default_model()),
        }));
        Ok(())
    })
}

/// Loads a body model document.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tcmr_body_model_load(
    path: *const c_char,
    out: *mut *mut TcmrBodyModel,
) -> TcmrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = BodyModel::load(&read_path(path)?)?;
        *out = Box::into_raw(Box::new(TcmrBodyModel {
            inner: Arc::new(model),
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn tcmr_body_model_free(model: *mut TcmrBodyModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Joint count, shape dimension, vertex count and flat parameter length.
///
/// # Safety
/// `model` must be a live handle; each output pointer must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn tcmr_body_model_dims(
    model: *const TcmrBodyModel,
    joints: *mut usize,
    shape_dim: *mut usize,
    vertices: *mut usize,
    param_len: *mut usize,
) -> TcmrStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let values = [
            (joints, m.joint_count()),
            (shape_dim, m.shape_dim()),
            (vertices, m.vertex_count()),
            (
                param_len,
                BodyParams::flat_len(m.joint_count(), m.shape_dim()),
            ),
        ];
        for (ptr, v) in values {
            if let Some(p) = ptr.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Posed joints (`joints_len = 3·J`) and optionally vertices (`3·V`) of one
/// flat parameter vector: `J` axis-angle triples, shape, then scale and
/// the two translation components.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `vertices_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn tcmr_body_model_forward(
    model: *const TcmrBodyModel,
    params: *const f64,
    params_len: usize,
    joints_out: *mut f64,
    joints_len: usize,
    vertices_out: *mut f64,
    vertices_len: usize,
) -> TcmrStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let flat = slice(params, params_len, "params")?;
        check_len(
            "params",
            params_len,
            BodyParams::flat_len(m.joint_count(), m.shape_dim()),
        )?;
        check_len("joints_out", joints_len, 3 * m.joint_count())?;
        let p = BodyParams::from_flat(flat, m.joint_count(), m.shape_dim())?;
        let fk = m.forward_params(&p)?;
        let out = slice_mut(joints_out, joints_len, "joints_out")?;
        out.copy_from_slice(fk.joints.as_flattened());
        if !vertices_out.is_null() {
            check_len("vertices_out", vertices_len, 3 * m.vertex_count())?;
            slice_mut(vertices_out, vertices_len, "vertices_out")?
                .copy_from_slice(fk.vertices.as_flattened());
        }
        Ok(())
    })
}

/// Loads a checkpoint. `body` may be null, in which case the body model named
/// by the checkpoint's configuration is used.
///
/// # Safety
/// `path` must be NUL-terminated, `body` null or live, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tcmr_model_load(
    path: *const c_char,
    body: *const TcmrBodyModel,
    out: *mut *mut TcmrModel,
) -> TcmrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ckpt = Checkpoint::load(&read_path(path)?)?;
        let body = match body.as_ref() {
            Some(b) => b.inner.clone(),
            None => Arc::new(ckpt.config.body_model()?),
        };
        let inner = ckpt.to_model(body)?;
        *out = Box::into_raw(Box::new(TcmrModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn tcmr_model_free(model: *mut TcmrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length, per-frame feature length and flat parameter length of the output.
///
/// # Safety
/// `model` must be a live handle; each output pointer must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn tcmr_model_dims(
    model: *const TcmrModel,
    window: *mut usize,
    feature_dim: *mut usize,
    param_len: *mut usize,
) -> TcmrStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let cfg = m.temporal_config();
        let values = [
            (window, cfg.window),
            (feature_dim, cfg.feature_dim),
            (
                param_len,
                BodyParams::flat_len(m.body.joint_count(), m.body.shape_dim()),
            ),
        ];
        for (ptr, v) in values {
            if let Some(p) = ptr.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Estimates the parameters of the current frame of `count` windows.
/// `features` holds `count × window × feature_dim` values, window-major;
/// `params_out` receives `count × param_len`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tcmr_model_predict(
    model: *const TcmrModel,
    features: *const f64,
    features_len: usize,
    count: usize,
    params_out: *mut f64,
    params_len: usize,
) -> TcmrStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let (t, d) = (m.temporal_config().window, m.temporal_config().feature_dim);
        let plen = BodyParams::flat_len(m.body.joint_count(), m.body.shape_dim());
        if count == 0 {
            return Err(invalid("count must be positive"));
        }
        check_len("features", features_len, count * t * d)?;
        check_len("params_out", params_len, count * plen)?;
        let x = slice(features, features_len, "features")?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Failure(
                TcmrStatus::Numeric,
                "features contain non-finite values".into(),
            ));
        }
        let mut g = Graph::new();
        let bound = m.params.bind(&mut g, false);
        let frames: Vec<_> = (0..t)
            .map(|i| g.constant(Tensor::from_fn(count, d, |n, k| x[(n * t + i) * d + k])))
            .collect();
        let est = m.forward_eval(&mut g, &bound, &frames)?;
        let out = slice_mut(params_out, params_len, "params_out")?;
        for (dst, p) in out.chunks_exact_mut(plen).zip(est.to_params(&g)?) {
            dst.copy_from_slice(&p.to_flat());
        }
        Ok(())
    })
}

/// Continuous 6D representation (two stacked columns) to a row-major 3×3 matrix.
///
/// # Safety
/// `rot6d` must hold 6 values and `matrix_out` room for 9.
#[no_mangle]
pub unsafe extern "C" fn tcmr_rot6d_to_matrix(
    rot6d: *const f64,
    matrix_out: *mut f64,
) -> TcmrStatus {
    guard(|| {
        let r = slice(rot6d, 6, "rot6d")?;
        let m = rot6d_to_matrix(&Rot6D(r.try_into().expect("length 6")))?;
        slice_mut(matrix_out, 9, "matrix_out")?.copy_from_slice(&m.flat());
        Ok(())
    })
}

/// # Safety
/// `axis_angle` must hold 3 values and `matrix_out` room for 9.
#[no_mangle]
pub unsafe extern "C" fn tcmr_axis_angle_to_matrix(
    axis_angle: *const f64,
    matrix_out: *mut f64,
) -> TcmrStatus {
    guard(|| {
        let a = slice(axis_angle, 3, "axis_angle")?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Failure(
                TcmrStatus::Numeric,
                "axis-angle contains non-finite values".into(),
            ));
        }
        let m = axis_angle_to_matrix(&AxisAngle(a.try_into().expect("length 3")));
        slice_mut(matrix_out, 9, "matrix_out")?.copy_from_slice(&m.flat());
        Ok(())
    })
}

/// Row-major rotation matrix to axis-angle with angle in `[0, π]`. Matrices
/// further than [`TCMR_ROTATION_TOLERANCE`] from a rotation are rejected.
///
/// # Safety
/// `matrix` must hold 9 values and `axis_angle_out` room for 3.
#[no_mangle]
pub unsafe extern "C" fn tcmr_matrix_to_axis_angle(
    matrix: *const f64,
    axis_angle_out: *mut f64,
) -> TcmrStatus {
    guard(|| {
        let m = RotationMatrix::from_flat(slice(matrix, 9, "matrix")?);
        let m = RotationMatrix::checked(m.0, TCMR_ROTATION_TOLERANCE)?;
        slice_mut(axis_angle_out, 3, "axis_angle_out")?
            .copy_from_slice(&matrix_to_axis_angle(&m).0);
        Ok(())
    })
}

/// Mean joint error in mm over all `joint_count` joints after subtracting joint `root` on each side.
/// Positions are in metres, `3·joint_count` values each.
///
/// # Safety
/// `pred` and `gt` must hold `3·joint_count` values; `out_mm` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcmr_mpjpe(
    pred: *const f64,
    gt: *const f64,
    joint_count: usize,
    root: usize,
    out_mm: *mut f64,
) -> TcmrStatus {
    guard(|| {
        let p = points(slice(pred, 3 * joint_count, "pred")?);
        let g = points(slice(gt, 3 * joint_count, "gt")?);
        let subset: Vec<usize> = (0..joint_count).collect();
        *out_ref(out_mm, "out_mm")? = metrics::mpjpe(&p, &g, root, &subset)?;
        Ok(())
    })
}

/// Mean joint error in mm after the best similarity transform of `pred` onto `gt`.
///
/// # Safety
/// `pred` and `gt` must hold `3·joint_count` values; `out_mm` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcmr_pa_mpjpe(
    pred: *const f64,
    gt: *const f64,
    joint_count: usize,
    out_mm: *mut f64,
) -> TcmrStatus {
    guard(|| {
        let p = points(slice(pred, 3 * joint_count, "pred")?);
        let g = points(slice(gt, 3 * joint_count, "gt")?);
        let subset: Vec<usize> = (0..joint_count).collect();
        *out_ref(out_mm, "out_mm")? = metrics::pa_mpjpe(&p, &g, &subset)?;
        Ok(())
    })
}

/// Mean acceleration error in mm/s² of two joint trajectories laid out
/// frame-major (`frame_count × joint_count × 3`).
///
/// # Safety
/// `pred` and `gt` must hold `3·frame_count·joint_count` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcmr_accel_error(
    pred: *const f64,
    gt: *const f64,
    frame_count: usize,
    joint_count: usize,
    fps: f64,
    out_mm_s2: *mut f64,
) -> TcmrStatus {
    guard(|| {
        if joint_count == 0 || !(fps.is_finite() && fps > 0.0) {
            return Err(invalid("need joint_count > 0 and a positive fps"));
        }
        let n = 3 * frame_count * joint_count;
        let frames = |x: &[f64]| {
            x.chunks_exact(3 * joint_count)
                .map(points)
                .collect::<Vec<_>>()
        };
        let p = frames(slice(pred, n, "pred")?);
        let g = frames(slice(gt, n, "gt")?);
        *out_ref(out_mm_s2, "out_mm_s2")? = metrics::accel_error(&p, &g, fps)?;
        Ok(())
    })
}
