use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mote_core::checkpoint::{save_mote, save_source};
use mote_core::classify::Classifier;
use mote_core::config::parse_config;
use mote_core::runner::{run_config, TrainedModel};
use mote_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = mote_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn checkpoints_predict_like_the_library() {
    let cfg = parse_config("experiment.kind=adapt-compare\ndrift.docs_per_domain=120\nexperiment.seeds=41\n").unwrap();
    let report = run_config(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let text = "w12 w7 w300 w41 w999";
    let doc = mote_core::corpus::Document {
        id: "ffi".into(),
        tokens: text.split_whitespace().map(str::to_string).collect(),
        label: 0,
        timestamp: 0,
        group: String::new(),
        language: String::new(),
    };
    let mut kinds = Vec::new();
    for (n, (_, _, model)) in report.models.iter().enumerate() {
        let path = dir.path().join(format!("m{n}"));
        let want = match model {
            TrainedModel::Source(m) => {
                save_source(m, &path).unwrap();
                m.class_probs(&doc).unwrap()
            }
            TrainedModel::Mote(m) => {
                save_mote(m, &path).unwrap();
                m.class_probs(&doc).unwrap()
            }
        };
        let mut handle = ptr::null_mut();
        assert_eq!(unsafe { mote_model_load(cstr(&path).as_ptr(), &mut handle) }, MoteStatus::Ok);
        assert!(mote_last_error().is_null());
        let classes = unsafe { mote_model_classes(handle) };
        assert_eq!(classes, want.len());
        kinds.push(unsafe { mote_model_is_mixture(handle) });
        let mut probs = vec![0.0; classes];
        let text_c = CString::new(text).unwrap();
        let status = unsafe { mote_model_predict(handle, text_c.as_ptr(), probs.as_mut_ptr(), probs.len()) };
        assert_eq!(status, MoteStatus::Ok);
        assert_eq!(probs, want);

        let status = unsafe { mote_model_predict(handle, text_c.as_ptr(), probs.as_mut_ptr(), classes - 1) };
        assert_eq!(status, MoteStatus::InvalidArgument);
        assert!(last_error().contains("classes"));
        let blank = CString::new("   ").unwrap();
        let status = unsafe { mote_model_predict(handle, blank.as_ptr(), probs.as_mut_ptr(), classes) };
        assert_eq!(status, MoteStatus::InvalidArgument);
        unsafe { mote_model_free(handle) };
    }
    assert!(kinds.contains(&true) && kinds.contains(&false));
}

#[test]
fn load_errors_carry_codes() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { mote_model_load(ptr::null(), &mut handle) }, MoteStatus::NullPointer);
    assert!(handle.is_null());
    let missing = CString::new("/nonexistent/checkpoint").unwrap();
    assert_eq!(unsafe { mote_model_load(missing.as_ptr(), &mut handle) }, MoteStatus::Io);
    assert!(last_error().contains("/nonexistent/checkpoint"));
    assert_eq!(unsafe { mote_model_load(missing.as_ptr(), ptr::null_mut()) }, MoteStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.txt"), "kind=mystery\n").unwrap();
    assert_eq!(unsafe { mote_model_load(cstr(dir.path()).as_ptr(), &mut handle) }, MoteStatus::InvalidArgument);

    let bytes = [0x66u8, 0xff, 0x00];
    assert_eq!(unsafe { mote_model_load(bytes.as_ptr().cast(), &mut handle) }, MoteStatus::InvalidUtf8);
    assert_eq!(unsafe { mote_model_classes(ptr::null()) }, 0);
    unsafe { mote_model_free(ptr::null_mut()) };
}

#[test]
fn metrics_through_the_abi() {
    let labels = [0usize, 0, 1, 1];
    let predicted = [0usize, 1, 1, 1];
    let mut f1 = 0.0;
    assert_eq!(unsafe { mote_macro_f1(labels.as_ptr(), predicted.as_ptr(), 4, 2, &mut f1) }, MoteStatus::Ok);
    // class 0: p=1, r=0.5 -> 2/3; class 1: p=2/3, r=1 -> 0.8
    assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);

    let scores = [0.9, 0.1, 0.6, 0.4, 0.3, 0.7, 0.2, 0.8];
    let mut auc = 0.0;
    assert_eq!(unsafe { mote_auc_macro(labels.as_ptr(), scores.as_ptr(), 4, 2, &mut auc) }, MoteStatus::Ok);
    assert_eq!(auc, 1.0);

    let bad = [0usize, 5];
    assert_eq!(unsafe { mote_macro_f1(bad.as_ptr(), bad.as_ptr(), 2, 2, &mut f1) }, MoteStatus::InvalidArgument);
    assert_eq!(unsafe { mote_macro_f1(ptr::null(), predicted.as_ptr(), 4, 2, &mut f1) }, MoteStatus::NullPointer);
    let single = [1usize, 1];
    assert_eq!(unsafe { mote_auc_macro(single.as_ptr(), scores.as_ptr(), 2, 2, &mut auc) }, MoteStatus::InvalidArgument);
}

#[test]
fn run_experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "experiment.kind=temporal-effect\nexperiment.metrics=f1_macro\ndrift.docs_per_domain=120\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(unsafe { mote_run_experiment(cstr(&cfg).as_ptr(), cstr(&out).as_ptr()) }, MoteStatus::Ok);
    assert!(out.join("metrics.csv").exists() && out.join("temporal_matrix.csv").exists());

    std::fs::write(&cfg, "experiment.kind=temporal-effect\nbogus=1\n").unwrap();
    assert_eq!(unsafe { mote_run_experiment(cstr(&cfg).as_ptr(), ptr::null()) }, MoteStatus::Config);
    assert!(last_error().contains("bogus"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mote_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mote.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mote_model_load", "mote_model_predict", "mote_model_free", "mote_last_error", "MOTE_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found, header compile check skipped");
        return;
    };
    assert!(status.success());
}
