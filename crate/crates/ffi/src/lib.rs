//! C ABI over the berrystack classifier, stacked ensemble and metrics.
//!
//! Every fallible function returns a [`BsStatus`]; on failure the message
//! is available from [`bs_last_error_message`] on the same thread. Handles
//! are opaque and must be released with the matching `*_free` function.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use berrystack::dataset::manifest::{prepare_bands, sample_from_bands};
use berrystack::dataset::{BispectralSample, Farm, Image, Label};
use berrystack::ensemble::{predict_ensemble, EnsembleModel};
use berrystack::evalx::{roc_auc, weighted_metrics, ConfusionMatrix};
use berrystack::model::{classify, TrainedModel};
use berrystack::Error;

/// Outcome of a call. Values are stable across releases.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    Argument = 1,
    Config = 2,
    MissingFile = 3,
    State = 4,
    Dimension = 5,
    Format = 6,
    Degenerate = 7,
    Io = 8,
    Numeric = 9,
    Training = 10,
    NullPointer = 11,
    Panic = 12,
}

impl From<&Error> for BsStatus {
    fn from(e: &Error) -> Self {
        match e.root() {
            Error::Argument(_) => BsStatus::Argument,
            Error::Config(_) => BsStatus::Config,
            Error::MissingFile(_) => BsStatus::MissingFile,
            Error::State(_) => BsStatus::State,
            Error::Dimension(_) => BsStatus::Dimension,
            Error::Format(_) => BsStatus::Format,
            Error::Degenerate(_) => BsStatus::Degenerate,
            Error::Io { .. } => BsStatus::Io,
            Error::Numeric { .. } => BsStatus::Numeric,
            Error::Training { .. } => BsStatus::Training,
            Error::Context { .. } => BsStatus::State,
        }
    }
}

/// Weighted metrics of a binary confusion matrix (unripe is positive).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsMetrics {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub ripe_precision: f64,
    pub ripe_recall: f64,
    pub ripe_f1: f64,
    pub unripe_precision: f64,
    pub unripe_recall: f64,
    pub unripe_f1: f64,
}

/// A trained single model.
pub struct BsModel {
    inner: TrainedModel,
}

/// A trained stacked ensemble.
pub struct BsEnsemble {
    inner: EnsembleModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BsStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            BsStatus::from(&e)
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("{name} is NULL"));
            BsStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            BsStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn path_arg(p: *const c_char, name: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument(format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn bands_to_sample(
    band700: *const f64,
    band770: *const f64,
    width: usize,
    height: usize,
    equalize_770: bool,
) -> Result<BispectralSample, Failure> {
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Argument("band extent overflows".into()))?;
    let a = Image::new(width, height, 1, slice_arg(band700, n, "band700")?.to_vec())?;
    let b = Image::new(width, height, 1, slice_arg(band770, n, "band770")?.to_vec())?;
    let (a, b) = prepare_bands(&a, &b, equalize_770)?;
    // The label is a placeholder; prediction ignores it.
    Ok(sample_from_bands(&a, &b, Label::Ripe, "ffi", Farm::Synthetic)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Maps a confidence in [0, 1] to a label: 0 ripe, 1 unripe.
///
/// # Safety
/// `out_label` must be NULL or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn bs_classify(confidence: f64, out_label: *mut u8) -> BsStatus {
    guard(|| {
        let out = out_ref(out_label, "out_label")?;
        *out = classify(confidence)?.index() as u8;
        Ok(())
    })
}

/// # Safety
/// `out` must be NULL or point to a writable `BsMetrics`.
#[no_mangle]
pub unsafe extern "C" fn bs_weighted_metrics(
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
    out: *mut BsMetrics,
) -> BsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let r = weighted_metrics(&ConfusionMatrix { tp, fp, tn, fn_ })?;
        *out = BsMetrics {
            accuracy: r.accuracy,
            weighted_precision: r.weighted_precision,
            weighted_recall: r.weighted_recall,
            weighted_f1: r.weighted_f1,
            ripe_precision: r.ripe.precision,
            ripe_recall: r.ripe.recall,
            ripe_f1: r.ripe.f1,
            unripe_precision: r.unripe.precision,
            unripe_recall: r.unripe.recall,
            unripe_f1: r.unripe.f1,
        };
        Ok(())
    })
}

/// Trapezoidal ROC AUC; `labels` holds 0 (ripe) or 1 (unripe).
///
/// # Safety
/// `confidences` and `labels` must each hold `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn bs_roc_auc(
    confidences: *const f64,
    labels: *const u8,
    n: usize,
    out_auc: *mut f64,
) -> BsStatus {
    guard(|| {
        let out = out_ref(out_auc, "out_auc")?;
        let conf = slice_arg(confidences, n, "confidences")?;
        let labels = slice_arg(labels, n, "labels")?
            .iter()
            .map(|&l| Label::from_index(l))
            .collect::<Result<Vec<_>, _>>()?;
        *out = roc_auc(conf, &labels)?.auc.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Loads `<stem>.bstk` and `<stem>.toml`.
///
/// # Safety
/// `stem` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_model_load(stem: *const c_char, out: *mut *mut BsModel) -> BsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = TrainedModel::load(&path_arg(stem, "stem")?, None)?;
        *out = Box::into_raw(Box::new(BsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `bs_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_model_free(model: *mut BsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the concatenated `[700 nm | 770 nm]` feature row the model
/// expects, or 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn bs_model_feature_dim(model: *const BsModel) -> usize {
    model.as_ref().map_or(0, |m| 2 * m.inner.head.feature_dim())
}

/// Confidence that a berry is unripe, from two single-band images of
/// `width * height` values in [0, 1] (row-major).
///
/// # Safety
/// Both bands must hold `width * height` readable values.
#[no_mangle]
pub unsafe extern "C" fn bs_model_predict_bands(
    model: *const BsModel,
    band700: *const f64,
    band770: *const f64,
    width: usize,
    height: usize,
    equalize_770: bool,
    out_confidence: *mut f64,
) -> BsStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let out = out_ref(out_confidence, "out_confidence")?;
        let sample = bands_to_sample(band700, band770, width, height, equalize_770)?;
        *out = m.inner.forward(&sample)?;
        Ok(())
    })
}

/// Confidence from an already extracted feature vector.
///
/// # Safety
/// `features` must hold `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn bs_model_predict_features(
    model: *const BsModel,
    features: *const f64,
    len: usize,
    out_confidence: *mut f64,
) -> BsStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let out = out_ref(out_confidence, "out_confidence")?;
        *out = m.inner.forward_features(slice_arg(features, len, "features")?)?;
        Ok(())
    })
}

/// Loads an ensemble directory written by `train-ensemble`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_ensemble_load(dir: *const c_char, out: *mut *mut BsEnsemble) -> BsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = EnsembleModel::load(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(BsEnsemble { inner }));
        Ok(())
    })
}

/// # Safety
/// `ensemble` must come from `bs_ensemble_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_ensemble_free(ensemble: *mut BsEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of base learners, or 0 for NULL.
///
/// # Safety
/// `ensemble` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn bs_ensemble_learner_count(ensemble: *const BsEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.inner.learners.len())
}

/// Width of the concatenated feature row, or 0 for NULL.
///
/// # Safety
/// `ensemble` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn bs_ensemble_feature_dim(ensemble: *const BsEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| 2 * e.inner.extractor().output_dim())
}

/// # Safety
/// Both bands must hold `width * height` readable values.
#[no_mangle]
pub unsafe extern "C" fn bs_ensemble_predict_bands(
    ensemble: *const BsEnsemble,
    band700: *const f64,
    band770: *const f64,
    width: usize,
    height: usize,
    equalize_770: bool,
    out_confidence: *mut f64,
) -> BsStatus {
    guard(|| {
        let e = non_null(ensemble, "ensemble")?;
        let out = out_ref(out_confidence, "out_confidence")?;
        let sample = bands_to_sample(band700, band770, width, height, equalize_770)?;
        *out = predict_ensemble(&e.inner, &sample)?;
        Ok(())
    })
}

/// # Safety
/// `features` must hold `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn bs_ensemble_predict_features(
    ensemble: *const BsEnsemble,
    features: *const f64,
    len: usize,
    out_confidence: *mut f64,
) -> BsStatus {
    guard(|| {
        let e = non_null(ensemble, "ensemble")?;
        let out = out_ref(out_confidence, "out_confidence")?;
        *out = e.inner.predict_features(slice_arg(features, len, "features")?)?;
        Ok(())
    })
}
