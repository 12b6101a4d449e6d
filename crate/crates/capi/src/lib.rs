//! C ABI for the rgbdad pipeline.
//!
//! All functions return [`RgbdadStatus`]; on failure a thread-local message
//! is readable through [`rgbdad_last_error`]. Models are opaque handles
//! created by [`rgbdad_model_load`] and released by [`rgbdad_model_free`].
//! The generated header lives at `include/rgbdad.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rgbdad::config::RunConfig;
use rgbdad::dataio::{generate_synthetic_dataset, load_sample, DatasetManifest};
use rgbdad::inference::{score_sample, write_raw_map};
use rgbdad::metrics::{aggregate, evaluate, save_report};
use rgbdad::training::{load_checkpoint, save_checkpoint, train, ModelState};
use rgbdad::CoreError;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgbdadStatus {
    Ok = 0,
    /// Bad arguments, bad config, missing inputs.
    UserError = 1,
    /// I/O failures, corrupt data, unexpected internal conditions.
    InternalError = 2,
    NullPointer = 3,
    InvalidUtf8 = 4,
}

/// Opaque trained model: checkpoint contents plus the reconstructed frozen
/// backbone.
pub struct RgbdadModel {
    state: ModelState<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &CoreError) -> RgbdadStatus {
    match err.exit_code() {
        1 => RgbdadStatus::UserError,
        _ => RgbdadStatus::InternalError,
    }
}

fn fail(err: CoreError) -> RgbdadStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// # Safety
/// `ptr` must be a valid NUL-terminated C string or the call fails.
unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, RgbdadStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(RgbdadStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            Err(RgbdadStatus::InvalidUtf8)
        }
    }
}

fn parse_config(json: Option<&str>) -> Result<RunConfig, RgbdadStatus> {
    let cfg = match json {
        None => RunConfig::default(),
        Some(raw) => match serde_json::from_str::<RunConfig>(raw) {
            Ok(cfg) => cfg,
            Err(e) => {
                set_error(&format!("bad config json: {e}"));
                return Err(RgbdadStatus::UserError);
            }
        },
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e));
    }
    Ok(cfg)
}

fn guarded(body: impl FnOnce() -> RgbdadStatus) -> RgbdadStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            RgbdadStatus::InternalError
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rgbdad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rgbdad_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Generate the synthetic benchmark dataset under `out_dir`.
/// `config_json` is an optional run-config document (NULL for defaults).
///
/// # Safety
/// `out_dir` must be a valid C string; `config_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_generate_dataset(
    out_dir: *const c_char,
    config_json: *const c_char,
    seed: u64,
) -> RgbdadStatus {
    guarded(|| {
        let out = match cstr(out_dir, "out_dir") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let json = if config_json.is_null() {
            None
        } else {
            match cstr(config_json, "config_json") {
                Ok(s) => Some(s),
                Err(st) => return st,
            }
        };
        let cfg = match parse_config(json) {
            Ok(c) => c,
            Err(st) => return st,
        };
        match generate_synthetic_dataset(Path::new(out), &cfg.synth, seed) {
            Ok(_) => RgbdadStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Train one class and write the checkpoint to `checkpoint_out`.
///
/// # Safety
/// String arguments must be valid C strings; `config_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_train(
    data_root: *const c_char,
    class_name: *const c_char,
    config_json: *const c_char,
    seed: u64,
    checkpoint_out: *const c_char,
) -> RgbdadStatus {
    guarded(|| {
        let root = match cstr(data_root, "data_root") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let class = match cstr(class_name, "class_name") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let out = match cstr(checkpoint_out, "checkpoint_out") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let json = if config_json.is_null() {
            None
        } else {
            match cstr(config_json, "config_json") {
                Ok(s) => Some(s),
                Err(st) => return st,
            }
        };
        let mut cfg = match parse_config(json) {
            Ok(c) => c,
            Err(st) => return st,
        };
        cfg.train.seed = seed;
        let manifest = match DatasetManifest::load(Path::new(root)) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let (state, _log) = match train::<f32>(&manifest, class, &cfg.model, &cfg.train) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        match save_checkpoint(&state, &cfg.train, class, Path::new(out)) {
            Ok(()) => RgbdadStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Load a checkpoint into an opaque model handle.
///
/// # Safety
/// `checkpoint_path` must be a valid C string; `out_model` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_model_load(
    checkpoint_path: *const c_char,
    out_model: *mut *mut RgbdadModel,
) -> RgbdadStatus {
    guarded(|| {
        if out_model.is_null() {
            set_error("out_model is null");
            return RgbdadStatus::NullPointer;
        }
        let path = match cstr(checkpoint_path, "checkpoint_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match load_checkpoint::<f32>(Path::new(path)) {
            Ok(loaded) => {
                let model = Box::new(RgbdadModel { state: loaded.state });
                *out_model = Box::into_raw(model);
                RgbdadStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must have come from [`rgbdad_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_model_free(model: *mut RgbdadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image side length the model expects, in pixels.
///
/// # Safety
/// `model` must be a live handle; `out_size` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_model_image_size(
    model: *const RgbdadModel,
    out_size: *mut u32,
) -> RgbdadStatus {
    guarded(|| {
        if model.is_null() || out_size.is_null() {
            set_error("null argument");
            return RgbdadStatus::NullPointer;
        }
        *out_size = (*model).state.model.image_size as u32;
        RgbdadStatus::Ok
    })
}

/// Score one sample directory. Writes the image-level score to
/// `out_image_score`; when `raw_map_out` is non-NULL the pixel map is
/// written there in the raw f32 format (u32 height, u32 width, then values,
/// all little-endian).
///
/// # Safety
/// `model` must be a live handle; `sample_dir` a valid C string;
/// `out_image_score` writable; `raw_map_out` NULL or a valid C string.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_model_score_sample(
    model: *const RgbdadModel,
    sample_dir: *const c_char,
    sigma_smooth: f64,
    out_image_score: *mut f64,
    raw_map_out: *const c_char,
) -> RgbdadStatus {
    guarded(|| {
        if model.is_null() || out_image_score.is_null() {
            set_error("null argument");
            return RgbdadStatus::NullPointer;
        }
        let dir = match cstr(sample_dir, "sample_dir") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let bundle = match load_sample(Path::new(dir)) {
            Ok(b) => b,
            Err(e) => return fail(e),
        };
        let map = match score_sample(&bundle, &(*model).state, sigma_smooth) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        if !raw_map_out.is_null() {
            let out = match cstr(raw_map_out, "raw_map_out") {
                Ok(s) => s,
                Err(st) => return st,
            };
            if let Err(e) = write_raw_map(&map, Path::new(out)) {
                return fail(e);
            }
        }
        *out_image_score = map.image_score;
        RgbdadStatus::Ok
    })
}

/// Evaluate a checkpoint on a class's test split. Metric outputs may be
/// NULL when not wanted; `report_json_out` optionally receives the report.
///
/// # Safety
/// Strings must be valid C strings (`report_json_out` may be NULL); metric
/// out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rgbdad_evaluate(
    data_root: *const c_char,
    class_name: *const c_char,
    checkpoint_path: *const c_char,
    sigma_smooth: f64,
    fpr_limit: f64,
    report_json_out: *const c_char,
    out_i_auroc: *mut f64,
    out_p_auroc: *mut f64,
    out_p_aupro: *mut f64,
) -> RgbdadStatus {
    guarded(|| {
        let root = match cstr(data_root, "data_root") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let class = match cstr(class_name, "class_name") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let ckpt = match cstr(checkpoint_path, "checkpoint_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let manifest = match DatasetManifest::load(Path::new(root)) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let loaded = match load_checkpoint::<f32>(Path::new(ckpt)) {
            Ok(l) => l,
            Err(e) => return fail(e),
        };
        let report = match evaluate(&manifest, class, &loaded.state, sigma_smooth, fpr_limit) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        if !out_i_auroc.is_null() {
            *out_i_auroc = report.i_auroc;
        }
        if !out_p_auroc.is_null() {
            *out_p_auroc = report.p_auroc;
        }
        if !out_p_aupro.is_null() {
            *out_p_aupro = report.p_aupro;
        }
        if !report_json_out.is_null() {
            let path = match cstr(report_json_out, "report_json_out") {
                Ok(s) => s,
                Err(st) => return st,
            };
            let agg = match aggregate(vec![report]) {
                Ok(a) => a,
                Err(e) => return fail(e),
            };
            if let Err(e) = save_report(&agg, Path::new(path)) {
                return fail(e);
            }
        }
        RgbdadStatus::Ok
    })
}
