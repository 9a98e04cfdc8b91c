//! C ABI for the dgadr toolkit.
//!
//! Conventions: datasets and models are opaque handles created and freed
//! through this interface; every fallible call returns a [`DgStatus`] and
//! writes its result through out-pointers; the message for the most recent
//! failure on the current thread is available via
//! [`dg_last_error_message`]. All functions catch panics and report them as
//! `DgStatusInternal` rather than unwinding across the boundary.
//!
//! The matching header (`include/dgadr.h`) is generated by cbindgen at
//! build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dgadr_core::analysis::cross_domain_dispersion;
use dgadr_core::data::{
    generate_synthetic, load_dataset, save_dataset, split_leave_one_out, Dataset, SynthConfig,
};
use dgadr_core::error::Error;
use dgadr_core::model::{forward, load_params, save_params, Activation};
use dgadr_core::trainer::{evaluate, train_one, TrainConfig, WeightsMode};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    DgStatusOk = 0,
    /// A required pointer argument was null.
    DgStatusNullPointer = 1,
    /// An argument violated a documented contract.
    DgStatusInvalidArgument = 2,
    /// File could not be read or written.
    DgStatusIo = 3,
    /// File contents failed to parse.
    DgStatusParse = 4,
    /// A computation produced non-finite values or failed numerically.
    DgStatusNumeric = 5,
    /// An internal panic was caught; memory stays safe.
    DgStatusInternal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> DgStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => DgStatus::DgStatusInvalidArgument,
        Error::Io { .. } => DgStatus::DgStatusIo,
        Error::Parse { .. } => DgStatus::DgStatusParse,
        Error::Numeric(_) => DgStatus::DgStatusNumeric,
    }
}

fn report(err: Error) -> DgStatus {
    set_last_error(&err.to_string());
    status_of(&err)
}

/// Runs `body` with panic containment.
fn guarded<F: FnOnce() -> DgStatus>(body: F) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            DgStatus::DgStatusInternal
        }
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, DgStatus> {
    if ptr.is_null() {
        set_last_error("path pointer is null");
        return Err(DgStatus::DgStatusNullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_last_error("path is not valid UTF-8");
            Err(DgStatus::DgStatusInvalidArgument)
        }
    }
}

/// Opaque dataset handle.
pub struct DgDataset(Dataset);

/// Opaque model handle.
pub struct DgModel(dgadr_core::model::Model);

/// Synthetic-data generation parameters (mirrors the `gen` config file).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DgSynthConfig {
    pub num_domains: u64,
    pub num_classes: u64,
    pub feature_dim: u64,
    pub samples_per_domain: u64,
    pub class_skew: f64,
    pub domain_shift_scale: f64,
    pub intra_domain_subclusters: u64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Hidden-layer activation selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgActivation {
    DgActivationTanh = 0,
    DgActivationRelu = 1,
}

/// Class-weighting mode of the classification loss.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgWeightsMode {
    DgWeightsUniform = 0,
    DgWeightsWeightedCe = 1,
}

/// Training hyperparameters (mirrors the training config file); the seed is
/// passed per call to [`dg_train`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DgTrainOptions {
    /// Hidden layer widths, input side first.
    pub hidden_dims: *const u64,
    pub hidden_dims_len: usize,
    pub activation: DgActivation,
    pub margin: f64,
    pub hard_count: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub weights_mode: DgWeightsMode,
    pub batch_size: u64,
    pub epochs: u64,
    pub lr: f64,
    pub jitter_phi: f64,
    pub jitter_aux: f64,
    pub eval_every: u64,
}

/// Evaluation summary returned by value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub ovr_auc: f64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message of the most recent error on this thread; valid until the next
/// failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn dg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Generates a synthetic multi-domain dataset.
///
/// # Safety
/// `config` and `out` must be valid pointers; on success `*out` owns a
/// dataset that must be released with [`dg_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_generate(
    config: *const DgSynthConfig,
    out: *mut *mut DgDataset,
) -> DgStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return DgStatus::DgStatusNullPointer;
        }
        let c = &*config;
        let cfg = SynthConfig {
            num_domains: c.num_domains as usize,
            num_classes: c.num_classes as usize,
            feature_dim: c.feature_dim as usize,
            samples_per_domain: c.samples_per_domain as usize,
            class_skew: c.class_skew,
            domain_shift_scale: c.domain_shift_scale,
            intra_domain_subclusters: c.intra_domain_subclusters as usize,
            noise_std: c.noise_std,
            seed: c.seed,
        };
        match generate_synthetic(&cfg) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(DgDataset(ds)));
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

/// Loads a dataset CSV (schema `f0,...,f{d-1},label,domain`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer;
/// on success `*out` must be released with [`dg_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_load(
    path: *const c_char,
    out: *mut *mut DgDataset,
) -> DgStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("out pointer is null");
            return DgStatus::DgStatusNullPointer;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_dataset(&path) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(DgDataset(ds)));
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

/// Writes a dataset in the CSV schema.
///
/// # Safety
/// `dataset` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_save(
    dataset: *const DgDataset,
    path: *const c_char,
) -> DgStatus {
    guarded(|| {
        if dataset.is_null() {
            set_last_error("dataset handle is null");
            return DgStatus::DgStatusNullPointer;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_dataset(&(*dataset).0, &path) {
            Ok(()) => DgStatus::DgStatusOk,
            Err(e) => report(e),
        }
    })
}

/// Releases a dataset handle; a null handle is a no-op.
///
/// # Safety
/// `dataset` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_free(dataset: *mut DgDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

unsafe fn dataset_stat(
    dataset: *const DgDataset,
    out: *mut u64,
    pick: impl Fn(&Dataset) -> usize,
) -> DgStatus {
    if dataset.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return DgStatus::DgStatusNullPointer;
    }
    *out = pick(&(*dataset).0) as u64;
    DgStatus::DgStatusOk
}

/// Number of samples.
///
/// # Safety
/// `dataset` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_num_samples(
    dataset: *const DgDataset,
    out: *mut u64,
) -> DgStatus {
    guarded(|| dataset_stat(dataset, out, Dataset::len))
}

/// Declared class count.
///
/// # Safety
/// See [`dg_dataset_num_samples`].
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_num_classes(
    dataset: *const DgDataset,
    out: *mut u64,
) -> DgStatus {
    guarded(|| dataset_stat(dataset, out, Dataset::num_classes))
}

/// Declared domain count.
///
/// # Safety
/// See [`dg_dataset_num_samples`].
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_num_domains(
    dataset: *const DgDataset,
    out: *mut u64,
) -> DgStatus {
    guarded(|| dataset_stat(dataset, out, Dataset::num_domains))
}

/// Feature dimension.
///
/// # Safety
/// See [`dg_dataset_num_samples`].
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_feature_dim(
    dataset: *const DgDataset,
    out: *mut u64,
) -> DgStatus {
    guarded(|| dataset_stat(dataset, out, Dataset::feature_dim))
}

/// Splits a dataset into leave-one-domain-out (source, target) halves; the
/// source's domain ids are renumbered densely and the target becomes
/// single-domain.
///
/// # Safety
/// `dataset` must be a live handle; `out_source` and `out_target` valid
/// pointers receiving new handles on success.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_split_loto(
    dataset: *const DgDataset,
    target_domain: u64,
    out_source: *mut *mut DgDataset,
    out_target: *mut *mut DgDataset,
) -> DgStatus {
    guarded(|| {
        if dataset.is_null() || out_source.is_null() || out_target.is_null() {
            set_last_error("null pointer argument");
            return DgStatus::DgStatusNullPointer;
        }
        match split_leave_one_out(&(*dataset).0, target_domain as usize) {
            Ok((source, target)) => {
                *out_source = Box::into_raw(Box::new(DgDataset(source)));
                *out_target = Box::into_raw(Box::new(DgDataset(target)));
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

unsafe fn train_config_from_options(
    opts: &DgTrainOptions,
    seed: u64,
) -> Result<TrainConfig, DgStatus> {
    if opts.hidden_dims.is_null() || opts.hidden_dims_len == 0 {
        set_last_error("hidden_dims must be a non-empty array");
        return Err(DgStatus::DgStatusInvalidArgument);
    }
    let dims = std::slice::from_raw_parts(opts.hidden_dims, opts.hidden_dims_len);
    Ok(TrainConfig {
        hidden_dims: dims.iter().map(|&d| d as usize).collect(),
        activation: match opts.activation {
            DgActivation::DgActivationTanh => Activation::Tanh,
            DgActivation::DgActivationRelu => Activation::Relu,
        },
        margin: opts.margin,
        hard_count: opts.hard_count as usize,
        alpha: opts.alpha,
        gamma: opts.gamma,
        weights_mode: match opts.weights_mode {
            DgWeightsMode::DgWeightsUniform => WeightsMode::Uniform,
            DgWeightsMode::DgWeightsWeightedCe => WeightsMode::WeightedCe,
        },
        batch_size: opts.batch_size as usize,
        epochs: opts.epochs as usize,
        lr: opts.lr,
        jitter_phi: opts.jitter_phi,
        jitter_aux: opts.jitter_aux,
        seeds: vec![seed],
        init_params: None,
        eval_every: opts.eval_every.max(1) as usize,
    })
}

/// Trains one model on a multi-domain source dataset with the given seed.
///
/// # Safety
/// `source` must be a live handle, `options` a valid pointer whose
/// `hidden_dims` points at `hidden_dims_len` elements, and `out` a valid
/// pointer; on success `*out` must be released with [`dg_model_free`].
#[no_mangle]
pub unsafe extern "C" fn dg_train(
    source: *const DgDataset,
    options: *const DgTrainOptions,
    seed: u64,
    out: *mut *mut DgModel,
) -> DgStatus {
    guarded(|| {
        if source.is_null() || options.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return DgStatus::DgStatusNullPointer;
        }
        let cfg = match train_config_from_options(&*options, seed) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match train_one(&(*source).0, None, &cfg, seed) {
            Ok((model, _history)) => {
                *out = Box::into_raw(Box::new(DgModel(model)));
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

/// Evaluates a model on a dataset (accuracy, macro-F1, one-vs-rest AUC).
///
/// # Safety
/// `model` and `dataset` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_evaluate(
    model: *const DgModel,
    dataset: *const DgDataset,
    out: *mut DgMetrics,
) -> DgStatus {
    guarded(|| {
        if model.is_null() || dataset.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return DgStatus::DgStatusNullPointer;
        }
        match evaluate(&(*model).0, &(*dataset).0) {
            Ok(r) => {
                *out = DgMetrics {
                    accuracy: r.accuracy,
                    macro_f1: r.macro_f1,
                    ovr_auc: r.ovr_auc,
                };
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

/// Cross-domain dispersion of the model's features on a dataset.
///
/// # Safety
/// `model` and `dataset` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_feature_dispersion(
    model: *const DgModel,
    dataset: *const DgDataset,
    out: *mut f64,
) -> DgStatus {
    guarded(|| {
        if model.is_null() || dataset.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return DgStatus::DgStatusNullPointer;
        }
        let batch = (*dataset).0.to_minibatch();
        let trace = match forward(&(*model).0, &batch) {
            Ok(t) => t,
            Err(e) => return report(e),
        };
        match cross_domain_dispersion(trace.features().view(), &batch.labels, &batch.domains) {
            Ok(d) => {
                *out = d;
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

/// Writes model parameters in the documented CSV layout.
///
/// # Safety
/// `model` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn dg_model_save(model: *const DgModel, path: *const c_char) -> DgStatus {
    guarded(|| {
        if model.is_null() {
            set_last_error("model handle is null");
            return DgStatus::DgStatusNullPointer;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_params(&(*model).0, &path) {
            Ok(()) => DgStatus::DgStatusOk,
            Err(e) => report(e),
        }
    })
}

/// Loads model parameters written by [`dg_model_save`] (or the CLI).
///
/// # Safety
/// `path` must be a valid string and `out` a valid pointer; on success
/// `*out` must be released with [`dg_model_free`].
#[no_mangle]
pub unsafe extern "C" fn dg_model_load(path: *const c_char, out: *mut *mut DgModel) -> DgStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("out pointer is null");
            return DgStatus::DgStatusNullPointer;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_params(&path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(DgModel(m)));
                DgStatus::DgStatusOk
            }
            Err(e) => report(e),
        }
    })
}

/// Releases a model handle; a null handle is a no-op.
///
/// # Safety
/// `model` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dg_model_free(model: *mut DgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
