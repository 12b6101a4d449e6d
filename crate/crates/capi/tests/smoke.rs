//! Exercises the C ABI end-to-end: generate, train, load, score, evaluate,
//! and the error paths.

use std::ffi::{CStr, CString};
use std::ptr;

use rgbdad_capi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn tiny_config() -> CString {
    c(r#"{
        "synth": {"image_size": 32, "classes": 1, "train_per_class": 4, "test_per_class": 4},
        "model": {
            "image_size": 32,
            "layers": [{"stride": 4, "channels": 8}, {"stride": 8, "channels": 16}],
            "fused_channels": 48,
            "hidden": 32
        },
        "train": {"epochs": 2}
    }"#)
}

#[test]
fn full_pipeline_through_the_c_surface() {
    let dir = tempfile::tempdir().unwrap();
    let data = c(dir.path().join("data").to_str().unwrap());
    let ckpt = c(dir.path().join("model.ckpt").to_str().unwrap());
    let cfg = tiny_config();

    unsafe {
        let version = CStr::from_ptr(rgbdad_version());
        assert!(!version.to_str().unwrap().is_empty());

        assert_eq!(
            rgbdad_generate_dataset(data.as_ptr(), cfg.as_ptr(), 11),
            RgbdadStatus::Ok
        );

        assert_eq!(
            rgbdad_train(data.as_ptr(), c("cls0").as_ptr(), cfg.as_ptr(), 11, ckpt.as_ptr()),
            RgbdadStatus::Ok
        );

        let mut model: *mut RgbdadModel = ptr::null_mut();
        assert_eq!(rgbdad_model_load(ckpt.as_ptr(), &mut model), RgbdadStatus::Ok);
        assert!(!model.is_null());

        let mut size = 0u32;
        assert_eq!(rgbdad_model_image_size(model, &mut size), RgbdadStatus::Ok);
        assert_eq!(size, 32);

        let sample_dir = c(dir
            .path()
            .join("data/cls0/test/test_0000")
            .to_str()
            .unwrap());
        let raw_out = c(dir.path().join("map.raw").to_str().unwrap());
        let mut score = f64::NAN;
        assert_eq!(
            rgbdad_model_score_sample(model, sample_dir.as_ptr(), 4.0, &mut score, raw_out.as_ptr()),
            RgbdadStatus::Ok
        );
        assert!(score.is_finite() && score > 0.0 && score < 1.0);
        // raw map header matches the image size
        let raw = std::fs::read(dir.path().join("map.raw")).unwrap();
        let h = u32::from_le_bytes(raw[0..4].try_into().unwrap());
        let w = u32::from_le_bytes(raw[4..8].try_into().unwrap());
        assert_eq!((h, w), (32, 32));
        assert_eq!(raw.len(), 8 + 32 * 32 * 4);

        let report = c(dir.path().join("report.json").to_str().unwrap());
        let (mut i_auroc, mut p_auroc, mut p_aupro) = (f64::NAN, f64::NAN, f64::NAN);
        assert_eq!(
            rgbdad_evaluate(
                data.as_ptr(),
                c("cls0").as_ptr(),
                ckpt.as_ptr(),
                4.0,
                0.3,
                report.as_ptr(),
                &mut i_auroc,
                &mut p_auroc,
                &mut p_aupro,
            ),
            RgbdadStatus::Ok
        );
        for v in [i_auroc, p_auroc, p_aupro] {
            assert!((0.0..=1.0).contains(&v), "metric {v}");
        }
        let body = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(body.contains("\"mean_i_auroc\""));

        rgbdad_model_free(model);
        rgbdad_model_free(ptr::null_mut());
    }
}

#[test]
fn error_paths_set_messages_and_codes() {
    unsafe {
        // null pointer
        let mut model: *mut RgbdadModel = ptr::null_mut();
        assert_eq!(
            rgbdad_model_load(ptr::null(), &mut model),
            RgbdadStatus::NullPointer
        );

        // missing checkpoint is an internal (I/O) error
        let missing = c("/nonexistent/path/model.ckpt");
        let status = rgbdad_model_load(missing.as_ptr(), &mut model);
        assert_eq!(status, RgbdadStatus::InternalError);
        let msg = CStr::from_ptr(rgbdad_last_error()).to_str().unwrap();
        assert!(!msg.is_empty());

        // bad config json is a user error
        let dir = tempfile::tempdir().unwrap();
        let out = c(dir.path().join("d").to_str().unwrap());
        let bad = c("{not json");
        assert_eq!(
            rgbdad_generate_dataset(out.as_ptr(), bad.as_ptr(), 0),
            RgbdadStatus::UserError
        );

        // inconsistent config is a user error
        let inconsistent = c(r#"{"synth": {"image_size": 32}}"#);
        assert_eq!(
            rgbdad_generate_dataset(out.as_ptr(), inconsistent.as_ptr(), 0),
            RgbdadStatus::UserError
        );
    }
}
