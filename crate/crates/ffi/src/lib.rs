//! C ABI over beliefkit.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `bk_*_free`. Every fallible call returns a [`BkStatus`]; on
//! failure [`bk_last_error`] describes the most recent error on the calling
//! thread. Strings returned through `out` parameters are owned by the caller
//! and released with [`bk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use beliefkit::data::{BeliefStore, Split, TokenSeq};
use beliefkit::editor::{BaselineSpec, EditRequest, EditorNetwork};
use beliefkit::eval::{evaluate_sequential_updates, EvalConfig};
use beliefkit::model::TaskModel;
use beliefkit::optim::OptimizerKind;
use beliefkit::update::{BaselineUpdater, EditorUpdater, NoOpUpdater, Updater};
use beliefkit::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Invalid = 6,
    Incompatible = 7,
    Numeric = 8,
    Panic = 9,
}

/// A task model.
pub struct BkModel(TaskModel);

/// A trained editor network.
pub struct BkEditor(EditorNetwork);

/// One split of a belief store.
pub struct BkStore(BeliefStore);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(BkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => BkStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) => BkStatus::Parse,
            Error::Config { .. } => BkStatus::Config,
            Error::Shape { .. } | Error::Manifest(_) => BkStatus::Incompatible,
            Error::NonFinite(_) => BkStatus::Numeric,
            _ => BkStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BkStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BkStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(BkStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|_| Failure(BkStatus::Invalid, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn bk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bk_model_load(path: *const c_char, out: *mut *mut BkModel) -> BkStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        write_out(out, BkModel(TaskModel::load(&path)?))
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bk_model_save(model: *const BkModel, path: *const c_char) -> BkStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.0.save(&PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Writes the model's output for a whitespace-tokenized input.
///
/// # Safety
/// `model` must come from this library; `input` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bk_model_predict(model: *const BkModel, input: *const c_char, out: *mut *mut c_char) -> BkStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let label = m.0.predict_label(&TokenSeq::parse(text(input, "input")?))?;
        write_string(out, label.to_string())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bk_editor_load(path: *const c_char, out: *mut *mut BkEditor) -> BkStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        write_out(out, BkEditor(EditorNetwork::load(&path)?))
    })
}

unsafe fn edit_with(
    model: *const BkModel,
    updater: &dyn Updater<TaskModel>,
    input: *const c_char,
    desired: *const c_char,
    out: *mut *mut BkModel,
) -> Result<(), Failure> {
    let m = handle(model, "model")?;
    let input = TokenSeq::parse(text(input, "input")?);
    let desired = TokenSeq::parse(text(desired, "desired")?);
    let current = m.0.predict_label(&input)?;
    updater.check_compatible(&m.0)?;
    let edited = updater.update(&m.0, &EditRequest::new(input, current, desired)?)?;
    write_out(out, BkModel(edited))
}

/// Applies one editor update with `k` inner steps; the input model is unchanged.
///
/// # Safety
/// Handles must come from this library; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bk_model_edit(
    model: *const BkModel,
    editor: *const BkEditor,
    input: *const c_char,
    desired: *const c_char,
    k: usize,
    out: *mut *mut BkModel,
) -> BkStatus {
    guard(|| {
        let e = handle(editor, "editor")?;
        let updater = EditorUpdater { editor: e.0.clone(), k };
        edit_with(model, &updater, input, desired, out)
    })
}

/// Applies one optimizer-baseline update. `optimizer` is `adamw`, `sgd` or `rmsprop`.
///
/// # Safety
/// `model` must come from this library; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bk_model_edit_baseline(
    model: *const BkModel,
    optimizer: *const c_char,
    lr: f64,
    max_steps: usize,
    input: *const c_char,
    desired: *const c_char,
    out: *mut *mut BkModel,
) -> BkStatus {
    guard(|| {
        let kind: OptimizerKind = text(optimizer, "optimizer")?.parse()?;
        let updater = BaselineUpdater { spec: BaselineSpec::new(kind, lr, max_steps) };
        edit_with(model, &updater, input, desired, out)
    })
}

/// Loads one JSONL store split. `split` is `train`, `dev` or `test`.
///
/// # Safety
/// Strings must be NUL-terminated and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bk_store_load(path: *const c_char, split: *const c_char, out: *mut *mut BkStore) -> BkStatus {
    guard(|| {
        let split = match text(split, "split")? {
            "train" => Split::Train,
            "dev" => Split::Dev,
            "test" => Split::Test,
            other => return Err(Failure(BkStatus::Config, format!("unknown split `{other}`"))),
        };
        let path = PathBuf::from(text(path, "path")?);
        write_out(out, BkStore(BeliefStore::load_jsonl(&path, split)?))
    })
}

/// Record count, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bk_store_len(store: *const BkStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.len())
}

/// Runs the sequential update protocol and writes the summary as JSON. A
/// null `editor` evaluates the no-op updater.
///
/// # Safety
/// Handles must be null where allowed or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bk_evaluate(
    model: *const BkModel,
    editor: *const BkEditor,
    store: *const BkStore,
    r_test: usize,
    k: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> BkStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let s = handle(store, "store")?;
        let cfg = EvalConfig { r_test, seed, ..EvalConfig::default() };
        let result = match editor.as_ref() {
            Some(e) => evaluate_sequential_updates(&m.0, &EditorUpdater { editor: e.0.clone(), k }, &s.0, &cfg)?,
            None => evaluate_sequential_updates(&m.0, &NoOpUpdater, &s.0, &cfg)?,
        };
        let json = serde_json::to_string(&result.summary).map_err(Error::from)?;
        write_string(out_json, json)
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bk_model_free(model: *mut BkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `editor` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bk_editor_free(editor: *mut BkEditor) {
    if !editor.is_null() {
        drop(Box::from_raw(editor));
    }
}

/// # Safety
/// `store` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bk_store_free(store: *mut BkStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
