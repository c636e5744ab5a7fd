//! C ABI over `mote-core`.
//!
//! Every function returns a [`MoteStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`mote_last_error`]. Models are
//! handed out as opaque [`MoteModelHandle`] pointers that must be released with
//! [`mote_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mote_core::baselines::SourceModel;
use mote_core::checkpoint::{checkpoint_kind, load_mote, load_source};
use mote_core::classify::Classifier;
use mote_core::config::load_config;
use mote_core::corpus::Document;
use mote_core::metrics::{auc_macro, macro_f1, EvalRecord};
use mote_core::mote::MoteModel;
use mote_core::report::emit_report;
use mote_core::runner::run_config;
use mote_core::MoteError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Parse = 6,
    Shape = 7,
    Panic = 8,
}

enum Loaded {
    Source(SourceModel),
    Mixture(MoteModel),
}

/// Opaque model loaded from a checkpoint directory.
pub struct MoteModelHandle {
    model: Loaded,
    classes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MoteStatus, String);

impl From<MoteError> for Failure {
    fn from(e: MoteError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn status_of(e: &MoteError) -> MoteStatus {
    match e {
        MoteError::ShapeMismatch { .. } => MoteStatus::Shape,
        MoteError::Parse { .. } => MoteStatus::Parse,
        MoteError::Config { .. } => MoteStatus::Config,
        MoteError::Io { .. } => MoteStatus::Io,
        MoteError::Stage { source, .. } => status_of(source),
        _ => MoteStatus::InvalidArgument,
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MoteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            MoteStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MoteStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MoteStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MoteStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MoteStatus::InvalidArgument, msg.into())
}

/// Message of the last failure on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mote_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mote_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a source-model or mixture checkpoint directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mote_model_load(dir: *const c_char, out: *mut *mut MoteModelHandle) -> MoteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let dir = Path::new(c_str(dir, "dir")?);
        let handle = match checkpoint_kind(dir)?.as_str() {
            "source" => {
                let m = load_source(dir)?;
                MoteModelHandle {
                    classes: m.classes(),
                    model: Loaded::Source(m),
                }
            }
            "mote" => {
                let m = load_mote(dir)?;
                MoteModelHandle {
                    classes: m.classes,
                    model: Loaded::Mixture(m),
                }
            }
            other => return Err(invalid(format!("unknown checkpoint kind `{other}`"))),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Releases a handle from [`mote_model_load`]; null is ignored.
///
/// # Safety
/// `handle` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mote_model_free(handle: *mut MoteModelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of classes the model predicts, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mote_model_classes(handle: *const MoteModelHandle) -> usize {
    handle.as_ref().map_or(0, |h| h.classes)
}

/// True when the handle holds a mixture of temporal experts.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mote_model_is_mixture(handle: *const MoteModelHandle) -> bool {
    matches!(handle.as_ref().map(|h| &h.model), Some(Loaded::Mixture(_)))
}

/// Writes class probabilities for whitespace-separated `text` into
/// `probs[0..classes]`. `len` must be at least the class count.
///
/// # Safety
/// `handle` must be a live handle, `text` a NUL-terminated string and
/// `probs` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn mote_model_predict(
    handle: *const MoteModelHandle,
    text: *const c_char,
    probs: *mut f64,
    len: usize,
) -> MoteStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let text = c_str(text, "text")?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        if len < h.classes {
            return Err(invalid(format!("probs holds {len} values but the model has {} classes", h.classes)));
        }
        let doc = Document {
            id: "ffi".into(),
            tokens: text.split_whitespace().map(str::to_string).collect(),
            label: 0,
            timestamp: 0,
            group: String::new(),
            language: String::new(),
        };
        let p = match &h.model {
            Loaded::Source(m) => m.class_probs(&doc)?,
            Loaded::Mixture(m) => m.class_probs(&doc)?,
        };
        std::slice::from_raw_parts_mut(probs, p.len()).copy_from_slice(&p);
        Ok(())
    })
}

fn check_labels(labels: &[usize], classes: usize, what: &str) -> Result<(), Failure> {
    if classes < 2 {
        return Err(invalid("classes must be at least 2"));
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(invalid(format!("{what} value {l} is not below {classes}"))),
        None => Ok(()),
    }
}

/// Macro-averaged F1 over `n` gold/predicted label pairs.
///
/// # Safety
/// `labels` and `predicted` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mote_macro_f1(
    labels: *const usize,
    predicted: *const usize,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> MoteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let labels = slice(labels, n, "labels")?;
        let predicted = slice(predicted, n, "predicted")?;
        check_labels(labels, classes, "label")?;
        check_labels(predicted, classes, "predicted")?;
        let records: Vec<EvalRecord> = labels
            .iter()
            .zip(predicted)
            .map(|(&label, &predicted)| EvalRecord {
                label,
                predicted,
                scores: Vec::new(),
                group: 0,
            })
            .collect();
        *out = macro_f1(&records, classes);
        Ok(())
    })
}

/// Macro-averaged one-vs-rest ROC-AUC. `scores` is row-major `n × classes`.
///
/// # Safety
/// `labels` must hold `n` values, `scores` `n * classes` values, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mote_auc_macro(
    labels: *const usize,
    scores: *const f64,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> MoteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let labels = slice(labels, n, "labels")?;
        check_labels(labels, classes, "label")?;
        let scores = slice(scores, n * classes, "scores")?;
        let records: Vec<EvalRecord> = labels
            .iter()
            .zip(scores.chunks(classes))
            .map(|(&label, s)| EvalRecord {
                label,
                predicted: label,
                scores: s.to_vec(),
                group: 0,
            })
            .collect();
        *out = auc_macro(&records, classes)?;
        Ok(())
    })
}

/// Runs the experiment described by a config file and writes its reports.
/// A non-null `out_dir` replaces the configured output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` must be null or
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mote_run_experiment(config_path: *const c_char, out_dir: *const c_char) -> MoteStatus {
    guard(|| {
        let mut cfg = load_config(Path::new(c_str(config_path, "config_path")?))?;
        if !out_dir.is_null() {
            cfg.out = PathBuf::from(c_str(out_dir, "out_dir")?);
        }
        cfg.validate()?;
        let report = run_config(&cfg)?;
        emit_report(&report, &cfg.out, cfg.checkpoints)?;
        Ok(())
    })
}
