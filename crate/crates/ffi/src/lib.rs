//! C ABI over the `snip` library.
//!
//! Models and datasets are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`SnipStatus`]; on failure [`snip_last_error`] describes the cause on the
//! calling thread. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use snip::checkpoint::{model_from_checkpoint, model_to_checkpoint, Checkpoint};
use snip::data::{load_idx, sample_batch, Dataset};
use snip::init::InitMethod;
use snip::config::LENET5_SGD_LR;
use snip::model::{build_model, Model, ModelKind, ModelSpec};
use snip::rng::Rng;
use snip::snip::{prune_with, Criterion};
use snip::trainer::{evaluate, train, TrainConfig, TrainData};
use snip::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnipStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Data = 3,
    Numerics = 4,
    Shape = 5,
    Domain = 6,
    State = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for SnipStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => SnipStatus::Config,
            Error::Data(_) => SnipStatus::Data,
            Error::Numerics { .. } | Error::DegenerateSaliency(_) => SnipStatus::Numerics,
            Error::Shape(_) => SnipStatus::Shape,
            Error::Domain(_) => SnipStatus::Domain,
            Error::State(_) => SnipStatus::State,
            Error::Format(_) => SnipStatus::Format,
            Error::Io(_) => SnipStatus::Io,
        }
    }
}

/// A network with its weights and masks (f32).
pub struct SnipModel(Model<f32>);

/// Images and labels loaded from an IDX file pair.
pub struct SnipDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SnipStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SnipStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null argument: {what}"));
            SnipStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            SnipStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SnipStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Failure::Lib(Error::Config(format!("{what} is not UTF-8"))))
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    unsafe { out.write(v) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn snip_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn snip_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds `model` ("lenet300", "lenet5caffe", "lstm_s", "gru_s") with
/// `init` ("rn", "tn", "vsx", "vsh") from `seed`.
///
/// # Safety
/// `model` and `init` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snip_model_new(model: *const c_char, init: *const c_char, seed: u64, out: *mut *mut SnipModel) -> SnipStatus {
    guard(|| {
        let spec = ModelSpec::by_name(unsafe { text(model, "model") }?)?;
        let init: InitMethod = unsafe { text(init, "init") }?.parse()?;
        let m = build_model(&spec, init, &Rng::new(seed).derive("init"))?;
        unsafe { put(out, Box::into_raw(Box::new(SnipModel(m))), "out") }
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snip_model_load(path: *const c_char, out: *mut *mut SnipModel) -> SnipStatus {
    guard(|| {
        let ck = Checkpoint::read(Path::new(unsafe { text(path, "path") }?))?;
        let m = model_from_checkpoint(&ck)?;
        unsafe { put(out, Box::into_raw(Box::new(SnipModel(m))), "out") }
    })
}

/// Writes weights and masks to `path`.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn snip_model_save(model: *const SnipModel, path: *const c_char) -> SnipStatus {
    guard(|| {
        let m = unsafe { get(model, "model") }?;
        model_to_checkpoint(&m.0).write(Path::new(unsafe { text(path, "path") }?))?;
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn snip_model_free(model: *mut SnipModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Parameter counts: all, prunable, and prunable entries currently retained.
///
/// # Safety
/// `model` must come from this library; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn snip_model_counts(model: *const SnipModel, total: *mut u64, prunable: *mut u64, retained: *mut u64) -> SnipStatus {
    guard(|| {
        let m = &unsafe { get(model, "model") }?.0;
        unsafe {
            put(total, m.total_count() as u64, "total")?;
            put(prunable, m.prunable_count() as u64, "prunable")?;
            put(retained, m.retained_count() as u64, "retained")
        }
    })
}

/// Copies the prunable masks, flattened in parameter order, as 0/1 bytes.
/// `len` must equal the prunable count.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn snip_model_masks(model: *const SnipModel, buf: *mut u8, len: usize) -> SnipStatus {
    guard(|| {
        let m = &unsafe { get(model, "model") }?.0;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if len != m.prunable_count() {
            return Err(Error::Shape(format!("buffer holds {len} bytes, model has {} prunable entries", m.prunable_count())).into());
        }
        let out = unsafe { std::slice::from_raw_parts_mut(buf, len) };
        let flat = m.params.iter().filter(|p| p.prunable).flat_map(|p| p.mask.data().iter());
        for (o, &c) in out.iter_mut().zip(flat) {
            *o = u8::from(c != 0.0);
        }
        Ok(())
    })
}

/// Loads an IDX image/label file pair.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snip_dataset_load(images: *const c_char, labels: *const c_char, out: *mut *mut SnipDataset) -> SnipStatus {
    guard(|| {
        let d = load_idx(Path::new(unsafe { text(images, "images") }?), Path::new(unsafe { text(labels, "labels") }?))?;
        unsafe { put(out, Box::into_raw(Box::new(SnipDataset(d))), "out") }
    })
}

/// Number of examples.
///
/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snip_dataset_len(dataset: *const SnipDataset, out: *mut u64) -> SnipStatus {
    guard(|| {
        let d = unsafe { get(dataset, "dataset") }?;
        unsafe { put(out, d.0.len() as u64, "out") }
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn snip_dataset_free(dataset: *mut SnipDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Prunes an untrained model in place to sparsity `kappa_bar` percent using
/// `criterion` ("snip", "magnitude", "grad_magnitude", "random") on
/// `saliency_batch` examples drawn from `dataset` with `seed`.
///
/// # Safety
/// Handles must come from this library; `criterion` must be a NUL-terminated
/// string; `retained` may be null.
#[no_mangle]
pub unsafe extern "C" fn snip_prune(
    model: *mut SnipModel,
    dataset: *const SnipDataset,
    criterion: *const c_char,
    kappa_bar: f64,
    saliency_batch: usize,
    seed: u64,
    retained: *mut u64,
) -> SnipStatus {
    guard(|| {
        let m = &mut unsafe { get_mut(model, "model") }?.0;
        let d = &unsafe { get(dataset, "dataset") }?.0;
        let criterion: Criterion = unsafe { text(criterion, "criterion") }?.parse()?;
        let mut rng = Rng::new(seed).derive("saliency");
        let batch = sample_batch::<f32>(d, saliency_batch, &mut rng)?;
        let (_, result) = prune_with(m, criterion, Some(&batch), kappa_bar, &mut rng)?;
        if !retained.is_null() {
            unsafe { retained.write(result.retained() as u64) };
        }
        Ok(())
    })
}

/// Trains with the default optimizer (SGD, momentum 0.9, lr 0.1, or 0.05
/// for lenet5caffe) for
/// `iterations` steps of batch 100, keeping masks fixed. Writes the final
/// test error (%) on `eval` to `test_err` if non-null.
///
/// # Safety
/// Handles must come from this library; `test_err` may be null.
#[no_mangle]
pub unsafe extern "C" fn snip_train(
    model: *mut SnipModel,
    train_set: *const SnipDataset,
    eval: *const SnipDataset,
    iterations: u64,
    seed: u64,
    test_err: *mut f64,
) -> SnipStatus {
    guard(|| {
        let m = &mut unsafe { get_mut(model, "model") }?.0;
        let tr = &unsafe { get(train_set, "train") }?.0;
        let ev = &unsafe { get(eval, "eval") }?.0;
        let mut cfg = TrainConfig { iterations, eval_every: iterations.max(1), ..TrainConfig::default() };
        if m.spec.kind == ModelKind::Lenet5Caffe {
            cfg.optimizer.lr0 = LENET5_SGD_LR;
        }
        let metrics = train(m, &TrainData { train: tr, val: ev, test: ev }, &cfg, &Rng::new(seed).derive("train"))?;
        if !test_err.is_null() {
            unsafe { test_err.write(metrics.last().map_or(f64::NAN, |r| r.test_err)) };
        }
        Ok(())
    })
}

/// Classification error (%) of `model` on `dataset`.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snip_evaluate(model: *const SnipModel, dataset: *const SnipDataset, out: *mut f64) -> SnipStatus {
    guard(|| {
        let m = &unsafe { get(model, "model") }?.0;
        let d = &unsafe { get(dataset, "dataset") }?.0;
        let err = evaluate(m, d)?;
        unsafe { put(out, err, "out") }
    })
}

/// Runs the command-line front end with `argc` arguments (program name
/// first) and returns its exit code.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn snip_cli_run(argc: c_int, argv: *const *const c_char) -> c_int {
    if argv.is_null() || argc < 0 {
        return 2;
    }
    let args: Vec<String> = (0..argc as usize)
        .map(|i| {
            let p = unsafe { *argv.add(i) };
            if p.is_null() {
                String::new()
            } else {
                unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
            }
        })
        .collect();
    catch_unwind(|| snip::cli::run(args)).unwrap_or(1)
}
