use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use steerlab::analysis::{self, PeakOptions};
use steerlab::dataset::DatasetSpec;
use steerlab::steering::{self, SteeringMode, SteeringSpec, DEFAULT_TIE_TOL};
use steerlab::ufm;
use steerlab_ffi::*;

fn last_error() -> String {
    let p = sl_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Canonical {
    ds: *mut SlDataset,
    fit: *mut SlUfm,
    st: *mut SlSteering,
}

impl Canonical {
    fn new() -> Self {
        let mut ds = ptr::null_mut();
        let mut fit = ptr::null_mut();
        let mut st = ptr::null_mut();
        unsafe {
            assert_eq!(sl_dataset_canonical(&mut ds), SlStatus::Ok);
            assert_eq!(sl_ufm_perfect_fit(ds, &mut fit), SlStatus::Ok);
            assert_eq!(sl_steering_build(ds, fit, 0, 1, 1, 4, 0, &mut st), SlStatus::Ok);
        }
        Self { ds, fit, st }
    }
}

impl Drop for Canonical {
    fn drop(&mut self) {
        unsafe {
            sl_steering_free(self.st);
            sl_ufm_free(self.fit);
            sl_dataset_free(self.ds);
        }
    }
}

fn native() -> (DatasetSpec, steerlab::steering::LogOddsProfile, SteeringSpec) {
    let ds = DatasetSpec::canonical();
    let fit = ufm::analytic_perfect_fit(&ds);
    let spec = SteeringSpec::build(&ds, &fit, 0, SteeringMode::Contrastive { opposite: 1 }, 4, 0).unwrap();
    let prof = steering::log_odds(&ds, &spec.positive, &spec.negative, DEFAULT_TIE_TOL).unwrap();
    (ds, prof, spec)
}

#[test]
fn handles_match_the_native_library() {
    let c = Canonical::new();
    let (ds, prof, spec) = native();
    let mut v = vec![0.0; 9];
    let mut m = vec![0.0; 9];
    unsafe {
        assert_eq!(sl_steering_vector(c.st, v.as_mut_ptr(), v.len()), SlStatus::Ok);
        assert_eq!(sl_steering_log_odds(c.st, m.as_mut_ptr(), m.len()), SlStatus::Ok);
    }
    assert_eq!(v, spec.vector);
    assert_eq!(m, prof.values);

    for (j, z, a) in [(4, 0, 1.5), (0, 2, -3.0), (9, 7, 0.25)] {
        let mut got = 0.0;
        unsafe { assert_eq!(sl_delta_p(c.ds, c.st, j, z, a, &mut got), SlStatus::Ok) };
        assert_eq!(got, analysis::delta_p(&ds, &prof, j, z, a).unwrap());
        unsafe { assert_eq!(sl_peak_alpha(c.ds, c.st, j, z, &mut got), SlStatus::Ok) };
        let want = analysis::peak_alpha(&ds, &prof, j, z, &PeakOptions::default()).unwrap().as_f64();
        assert_eq!(got, want);
    }
}

#[test]
fn steered_distribution_normalizes_and_peaks_use_infinities() {
    let c = Canonical::new();
    let mut s = [0.0; 9];
    let mut peak = 0.0;
    unsafe {
        assert_eq!(sl_steered_probs(c.ds, c.st, 5, 2.0, s.as_mut_ptr(), 9), SlStatus::Ok);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(sl_peak_alpha(c.ds, c.st, 5, 0, &mut peak), SlStatus::Ok);
        assert_eq!(peak, f64::INFINITY);
        assert_eq!(sl_peak_alpha(c.ds, c.st, 5, 3, &mut peak), SlStatus::Ok);
        assert_eq!(peak, f64::NEG_INFINITY);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let c = Canonical::new();
    let mut out = 0.0;
    let mut buf = [0.0; 2];
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(sl_delta_p(c.ds, c.st, 400, 0, 1.0, &mut out), SlStatus::OutOfRange);
        assert!(last_error().contains("400"));
        assert_eq!(sl_steered_probs(c.ds, c.st, 0, 1.0, buf.as_mut_ptr(), 2), SlStatus::BufferTooSmall);
        assert_eq!(sl_delta_p(ptr::null(), c.st, 0, 0, 1.0, &mut out), SlStatus::NullPointer);
        assert_eq!(sl_delta_p_limit(c.ds, c.st, 0, 0, 0, &mut out), SlStatus::InvalidArgument);
        assert_eq!(sl_dataset_symmetric(9, 3, 4, 0.7, 4, 0, &mut ds), SlStatus::Validation);
        assert!(ds.is_null());
        assert_eq!(entropy_is_positive(c.ds), SlStatus::Ok);
    }
    assert!(sl_last_error().is_null(), "a successful call clears the message");
}

unsafe fn entropy_is_positive(ds: *const SlDataset) -> SlStatus {
    let mut h = 0.0;
    let s = sl_dataset_entropy(ds, &mut h);
    assert!(h > 0.0);
    s
}

#[test]
fn dataset_json_round_trips() {
    let c = Canonical::new();
    let mut json = ptr::null_mut();
    let mut back = ptr::null_mut();
    let mut shape = (0, 0, 0);
    unsafe {
        assert_eq!(sl_dataset_to_json(c.ds, &mut json), SlStatus::Ok);
        assert_eq!(sl_dataset_from_json(json, &mut back), SlStatus::Ok);
        sl_string_free(json);
        assert_eq!(sl_dataset_shape(back, &mut shape.0, &mut shape.1, &mut shape.2), SlStatus::Ok);
        sl_dataset_free(back);
        let bad = CString::new("{not json").unwrap();
        assert_eq!(sl_dataset_from_json(bad.as_ptr(), &mut back), SlStatus::Parse);
    }
    assert_eq!(shape, (9, 3, 12));
}

#[test]
fn toy_model_limit_and_forward() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(sl_toy_from_seed(2, 16, 50, 8, SlNorm::Rms, 7, &mut m), SlStatus::Ok);
        let tokens: Vec<usize> = (0..6).collect();
        let v: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 8.0).collect();
        let mut plain = vec![0.0; 6 * 50];
        let mut zero = vec![0.0; 6 * 50];
        let mut far = vec![0.0; 6 * 50];
        let mut limit = vec![0.0; 50];
        assert_eq!(sl_toy_forward(m, tokens.as_ptr(), 6, 1, ptr::null(), 0, 0.0, 0, plain.as_mut_ptr(), plain.len()), SlStatus::Ok);
        assert_eq!(sl_toy_forward(m, tokens.as_ptr(), 6, 1, v.as_ptr(), 16, 0.0, 0, zero.as_mut_ptr(), zero.len()), SlStatus::Ok);
        assert_eq!(plain, zero);
        assert_eq!(sl_toy_forward(m, tokens.as_ptr(), 6, 2, v.as_ptr(), 16, 1e8, 1, far.as_mut_ptr(), far.len()), SlStatus::Ok);
        assert_eq!(sl_toy_limit_logits(m, v.as_ptr(), 16, 1, limit.as_mut_ptr(), 50), SlStatus::Ok);
        let last = &far[5 * 50..];
        let gap = last.iter().zip(&limit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-6, "gap {gap}");
        let zeros = [0.0; 16];
        assert_eq!(sl_toy_limit_logits(m, zeros.as_ptr(), 16, 1, limit.as_mut_ptr(), 50), SlStatus::Domain);
        sl_toy_free(m);
    }
}

#[test]
fn verify_all_runs_a_config() {
    let path = CString::new(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/weighted.toml").to_str().unwrap(),
    )
    .unwrap();
    let mut passed = 0;
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(sl_verify_all(path.as_ptr(), &mut passed, &mut json), SlStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        sl_string_free(json);
        assert!(text.contains("\"checks\""));
    }
    assert_eq!(passed, 1);
    let missing = CString::new("/nonexistent/run.toml").unwrap();
    unsafe { assert_eq!(sl_verify_all(missing.as_ptr(), &mut passed, &mut json), SlStatus::Io) };
}

#[test]
fn header_declares_the_exported_symbols() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/steerlab.h")).unwrap();
    for name in [
        "typedef struct SlDataset SlDataset;",
        "typedef struct SlSteering SlSteering;",
        "SL_STATUS_BUFFER_TOO_SMALL",
        "sl_last_error(void)",
        "sl_string_free(",
        "sl_peak_alpha(",
        "sl_toy_limit_logits(",
        "sl_verify_all(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = target_dir().join("libsteerlab_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; C link check not run");
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
