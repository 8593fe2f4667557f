//! C ABI over `mgser`.
//!
//! Every fallible function returns an [`MgserStatus`]; on failure the
//! message is available from [`mgser_last_error`] on the same thread. Objects
//! cross the boundary as opaque handles created by `*_new`/`*_load` and
//! released with the matching `*_free`. The header `include/mgser.h` is
//! generated by the build script.
//!
//! Result matrices are passed as row-major `tasks x tasks` arrays of doubles
//! with NaN marking unrecorded cells.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use mgser::harness::{emit_report, run_experiment, ExperimentConfig};
use mgser::metrics::ResultMatrix;
use mgser::model::Model;
use mgser::optim::{sam_perturbation, step, Method, OptimConfig, TaskBatch};
use mgser::replay::{MemoryBuffer, MemoryItem};
use mgser::rng::{substream, StreamRng, Substream};
use mgser::{Error, GradVector, Tensor2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgserStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Shape = 3,
    Input = 4,
    Usage = 5,
    Format = 6,
    Io = 7,
    InvalidString = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct MgserModel {
    inner: Model,
}

/// Opaque replay buffer handle; owns the generator used for its offers and draws.
pub struct MgserBuffer {
    inner: MemoryBuffer,
    rng: StreamRng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> MgserStatus {
    match err {
        Error::Config(_) => MgserStatus::Config,
        Error::Shape { .. } => MgserStatus::Shape,
        Error::Input(_) => MgserStatus::Input,
        Error::Usage(_) => MgserStatus::Usage,
        Error::Format { .. } => MgserStatus::Format,
        Error::Io { .. } => MgserStatus::Io,
    }
}

struct Fail(MgserStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MgserStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> MgserStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MgserStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MgserStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn slice_out<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn str_in<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        Fail(
            MgserStatus::InvalidString,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn out_ptr<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| null(what))
}

fn expect_len(what: &'static str, expected: usize, actual: usize) -> Result<(), Fail> {
    if expected != actual {
        return Err(Error::Shape {
            what,
            expected,
            actual,
        }
        .into());
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mgser_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds an MLP with Glorot-uniform weights and zero biases.
///
/// # Safety
/// `dims` must point to `n_dims` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_new(
    dims: *const usize,
    n_dims: usize,
    seed: u64,
    out: *mut *mut MgserModel,
) -> MgserStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let dims = slice_in(dims, n_dims, "dims")?;
        let model = Model::with_seed(dims, seed)?;
        *out = Box::into_raw(Box::new(MgserModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mgser_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_free(model: *mut MgserModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parameter count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_param_count(model: *const MgserModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Copies the flattened parameters (per layer: weights row-major, then
/// biases) into `out`, which must hold exactly `param_count` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_get_params(
    model: *const MgserModel,
    out: *mut f64,
    len: usize,
) -> MgserStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        expect_len("parameter buffer", m.param_count(), len)?;
        slice_out(out, len, "out")?.copy_from_slice(&m.params());
        Ok(())
    })
}

/// # Safety
/// `params` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_set_params(
    model: *mut MgserModel,
    params: *const f64,
    len: usize,
) -> MgserStatus {
    guard(|| {
        let m = &mut model.as_mut().ok_or_else(|| null("model"))?.inner;
        m.set_params(slice_in(params, len, "params")?)?;
        Ok(())
    })
}

/// Logits for `rows` inputs of width `cols`; `out` holds `rows * class_count`.
///
/// # Safety
/// `inputs` must point to `rows * cols` doubles, `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_forward(
    model: *const MgserModel,
    inputs: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> MgserStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let x = Tensor2::from_vec(
            rows,
            cols,
            slice_in(inputs, rows * cols, "inputs")?.to_vec(),
        )?;
        let logits = m.forward(&x)?;
        expect_len("logit buffer", logits.as_slice().len(), out_len)?;
        slice_out(out, out_len, "out")?.copy_from_slice(logits.as_slice());
        Ok(())
    })
}

/// One training step of `method` on a batch of `rows` examples.
/// `buffer` may be null for `online` and `joint`. `backward_passes` may be
/// null.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `inputs` holds
/// `rows * input_dim` doubles and `labels` holds `rows` values.
#[no_mangle]
pub unsafe extern "C" fn mgser_model_step(
    model: *mut MgserModel,
    buffer: *mut MgserBuffer,
    method: *const c_char,
    lr: f64,
    rho: f64,
    batch_size: usize,
    inputs: *const f64,
    labels: *const usize,
    rows: usize,
    task_id: usize,
    backward_passes: *mut u32,
) -> MgserStatus {
    guard(|| {
        let m = &mut model.as_mut().ok_or_else(|| null("model"))?.inner;
        let method: Method = str_in(method, "method")?.parse()?;
        let cfg = OptimConfig {
            lr,
            rho,
            batch_size,
            ..OptimConfig::new(method)
        };
        let cols = m.input_dim();
        let x = Tensor2::from_vec(
            rows,
            cols,
            slice_in(inputs, rows * cols, "inputs")?.to_vec(),
        )?;
        let y = slice_in(labels, rows, "labels")?;
        let batch = TaskBatch::new(&x, y, task_id)?;
        let report = match buffer.as_mut() {
            Some(b) => step(m, &batch, Some(&mut b.inner), &cfg, &mut b.rng)?,
            None => step(m, &batch, None, &cfg, &mut substream(0, Substream::Buffer))?,
        };
        if let Some(p) = backward_passes.as_mut() {
            *p = report.backward_passes;
        }
        Ok(())
    })
}

/// Empty reservoir buffer; `seed` drives its offers and draws.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_new(
    capacity: usize,
    feature_dim: usize,
    class_count: usize,
    seed: u64,
    out: *mut *mut MgserBuffer,
) -> MgserStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let inner = MemoryBuffer::new(capacity, feature_dim, class_count)?;
        *out = Box::into_raw(Box::new(MgserBuffer {
            inner,
            rng: substream(seed, Substream::Buffer),
        }));
        Ok(())
    })
}

/// # Safety
/// `buffer` must come from [`mgser_buffer_new`] or [`mgser_buffer_load`] and
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_free(buffer: *mut MgserBuffer) {
    if !buffer.is_null() {
        drop(Box::from_raw(buffer));
    }
}

/// Reservoir offer. `accepted` may be null.
///
/// # Safety
/// `x` must hold `x_len` doubles and `z` must hold `z_len`.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_offer(
    buffer: *mut MgserBuffer,
    x: *const f64,
    x_len: usize,
    label: usize,
    z: *const f64,
    z_len: usize,
    task_id: usize,
    accepted: *mut bool,
) -> MgserStatus {
    guard(|| {
        let b = buffer.as_mut().ok_or_else(|| null("buffer"))?;
        let item = MemoryItem {
            x: slice_in(x, x_len, "x")?.to_vec(),
            y: label,
            z: slice_in(z, z_len, "z")?.to_vec(),
            task_id,
        };
        let ok = b.inner.offer(item, &mut b.rng)?;
        if let Some(a) = accepted.as_mut() {
            *a = ok;
        }
        Ok(())
    })
}

/// Resident item count, or 0 for a null handle.
///
/// # Safety
/// `buffer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_len(buffer: *const MgserBuffer) -> usize {
    buffer.as_ref().map_or(0, |b| b.inner.len())
}

/// Items offered so far, or 0 for a null handle.
///
/// # Safety
/// `buffer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_stream_count(buffer: *const MgserBuffer) -> u64 {
    buffer.as_ref().map_or(0, |b| b.inner.stream_count())
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_save(
    buffer: *const MgserBuffer,
    path: *const c_char,
) -> MgserStatus {
    guard(|| {
        let b = buffer.as_ref().ok_or_else(|| null("buffer"))?;
        b.inner.save(&PathBuf::from(str_in(path, "path")?))?;
        Ok(())
    })
}

/// Loads a snapshot written by [`mgser_buffer_save`]; `seed` drives later
/// offers and draws.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mgser_buffer_load(
    path: *const c_char,
    seed: u64,
    out: *mut *mut MgserBuffer,
) -> MgserStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let inner = MemoryBuffer::load(&PathBuf::from(str_in(path, "path")?))?;
        *out = Box::into_raw(Box::new(MgserBuffer {
            inner,
            rng: substream(seed, Substream::Buffer),
        }));
        Ok(())
    })
}

/// `out = rho * grad / max(|grad|, epsilon)`.
///
/// # Safety
/// `grad` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgser_sam_perturbation(
    grad: *const f64,
    len: usize,
    rho: f64,
    epsilon: f64,
    out: *mut f64,
) -> MgserStatus {
    guard(|| {
        if !(rho >= 0.0 && epsilon > 0.0) {
            return Err(Error::Config(format!(
                "need rho >= 0 and epsilon > 0, got {rho} and {epsilon}"
            ))
            .into());
        }
        let g = GradVector::from(slice_in(grad, len, "grad")?.to_vec());
        slice_out(out, len, "out")?.copy_from_slice(sam_perturbation(&g, rho, epsilon).values());
        Ok(())
    })
}

/// ACC and signed Forget of a `tasks x tasks` result matrix. `forget` is
/// set to NaN for a single task. Either output may be null.
///
/// # Safety
/// `matrix` must hold `tasks * tasks` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgser_metrics(
    matrix: *const f64,
    tasks: usize,
    acc: *mut f64,
    forget: *mut f64,
) -> MgserStatus {
    guard(|| {
        let cells = slice_in(matrix, tasks * tasks, "matrix")?;
        let mut m = ResultMatrix::new(tasks)?;
        for (k, &v) in cells.iter().enumerate() {
            if !v.is_nan() {
                m.record(k / tasks, k % tasks, v)?;
            }
        }
        let a = m.acc_final()?;
        let f = m.forgetting()?.unwrap_or(f64::NAN);
        if let Some(p) = acc.as_mut() {
            *p = a;
        }
        if let Some(p) = forget.as_mut() {
            *p = f;
        }
        Ok(())
    })
}

/// Runs an experiment described by JSON (fields of the harness
/// configuration; missing fields take their defaults) and writes the report
/// files into `out_dir`. Mean ACC and mean signed Forget (NaN for one task)
/// are returned through the optional output pointers.
///
/// # Safety
/// `config_json` and `out_dir` must be NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn mgser_run_experiment(
    config_json: *const c_char,
    out_dir: *const c_char,
    acc_mean: *mut f64,
    forget_mean: *mut f64,
) -> MgserStatus {
    guard(|| {
        let cfg: ExperimentConfig = serde_json::from_str(str_in(config_json, "config_json")?)
            .map_err(|e| {
                Fail(
                    MgserStatus::Config,
                    format!("invalid experiment config: {e}"),
                )
            })?;
        let dir = PathBuf::from(str_in(out_dir, "out_dir")?);
        let report = run_experiment(&cfg)?;
        emit_report(&report, &dir)?;
        if let Some(p) = acc_mean.as_mut() {
            *p = report.acc.mean;
        }
        if let Some(p) = forget_mean.as_mut() {
            *p = report.forget.map_or(f64::NAN, |f| f.mean);
        }
        Ok(())
    })
}
