use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fruitcount::config::{FlowSource, PipelineConfig};
use fruitcount::pipeline::{run_pipeline, Dataset};
use fruitcount::simulate::{generate, SceneConfig};
use fruitcount::track::age_threshold;
use fruitcount_ffi::*;

fn last_error() -> String {
    let p = fc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn evaluate_through_the_abi() {
    let mut out = FcEvaluation {
        l1: 0,
        error_mean_pct: 0.0,
        error_std_pct: 0.0,
    };
    let est = [110u64, 90];
    let truth = [100u64, 100];
    assert_eq!(unsafe { fc_evaluate(est.as_ptr(), truth.as_ptr(), 2, &mut out) }, FcStatus::Ok);
    assert_eq!(out.l1, 20);
    assert_eq!(out.error_mean_pct, 0.0);
    assert!((out.error_std_pct - 10.0).abs() < 1e-12);
    assert!(fc_last_error_message().is_null());

    let zero = [0u64];
    assert_eq!(unsafe { fc_evaluate([3u64].as_ptr(), zero.as_ptr(), 1, &mut out) }, FcStatus::Ok);
    assert_eq!(out.l1, 3);
    assert!(out.error_mean_pct.is_nan());

    assert_eq!(unsafe { fc_evaluate(ptr::null(), ptr::null(), 0, &mut out) }, FcStatus::Ok);
    assert_eq!(out.l1, 0);
    assert_eq!(unsafe { fc_evaluate(est.as_ptr(), truth.as_ptr(), 2, ptr::null_mut()) }, FcStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn assignment_and_gating() {
    let costs = [0.1, 0.9, 0.9, 0.2];
    let mut rows = [0i64; 2];
    let mut total = 0.0;
    assert_eq!(
        unsafe { fc_solve_assignment(costs.as_ptr(), 2, 2, f64::INFINITY, rows.as_mut_ptr(), &mut total) },
        FcStatus::Ok
    );
    assert_eq!(rows, [0, 1]);
    assert!((total - 0.3).abs() < 1e-12);

    // Rectangular with a gate that rules out the second row.
    let costs = [0.1, 0.5, 2.0, 3.0];
    let mut rows = [0i64; 2];
    assert_eq!(
        unsafe { fc_solve_assignment(costs.as_ptr(), 2, 2, 0.8, rows.as_mut_ptr(), ptr::null_mut()) },
        FcStatus::Ok
    );
    assert_eq!(rows, [0, -1]);

    let bad = [1.0, -1.0];
    let mut rows = [0i64; 1];
    assert_eq!(
        unsafe { fc_solve_assignment(bad.as_ptr(), 1, 2, 1.0, rows.as_mut_ptr(), ptr::null_mut()) },
        FcStatus::Numeric
    );
    assert!(last_error().contains("cost matrix"));
    assert_eq!(
        unsafe { fc_solve_assignment(ptr::null(), 0, 0, 1.0, ptr::null_mut(), ptr::null_mut()) },
        FcStatus::Ok
    );
}

#[test]
fn region_list_handle() {
    let (w, h) = (20usize, 10usize);
    let mut mask = vec![0u8; w * h];
    for r in 2..5 {
        for c in 2..6 {
            mask[r * w + c] = 1;
        }
        for c in 12..18 {
            mask[r * w + c] = 200;
        }
    }
    let mut list = ptr::null_mut();
    assert_eq!(unsafe { fc_mask_to_regions(mask.as_ptr(), w, h, 1, &mut list) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_region_list_len(list) }, 2);
    let mut r = FcRegion {
        u: 0.0,
        v: 0.0,
        row_min: 0.0,
        col_min: 0.0,
        row_max: 0.0,
        col_max: 0.0,
        area: 0,
    };
    assert_eq!(unsafe { fc_region_list_get(list, 1, &mut r) }, FcStatus::Ok);
    assert_eq!(r.area, 18);
    assert_eq!((r.u, r.v), (3.0, 14.5));
    assert_eq!(unsafe { fc_region_list_get(list, 2, &mut r) }, FcStatus::InvalidArgument);
    unsafe { fc_region_list_free(list) };
    unsafe { fc_region_list_free(ptr::null_mut()) };
    assert_eq!(unsafe { fc_region_list_len(ptr::null()) }, 0);

    assert_eq!(unsafe { fc_mask_to_regions(mask.as_ptr(), 0, h, 1, &mut list) }, FcStatus::InvalidArgument);
    assert!(list.is_null());
}

#[test]
fn tracker_handle_matches_pipeline() {
    let sim = generate(&SceneConfig {
        seed: 4,
        fruit_count_front: 15,
        frame_count: 40,
        width: 320,
        height: 240,
        focal: 250.0,
        ..Default::default()
    })
    .unwrap();
    let overlap = 30;
    let mut cfg = PipelineConfig::default();
    cfg.pipeline.enable_correction = false;
    cfg.pipeline.flow_provider = FlowSource::Lk;
    cfg.tracker.overlap_frames = Some(overlap);
    let expected = run_pipeline(&Dataset::from_simulation(&sim), &cfg).unwrap().summary.total_raw;

    let threshold = age_threshold(overlap, cfg.tracker.age_fraction, cfg.tracker.min_count_age);
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { fc_tracker_new(ptr::null(), threshold, &mut t) }, FcStatus::Ok);
    for (frame, mask) in sim.frames.iter().zip(&sim.masks) {
        let gray = frame.to_gray();
        let mut active = 0;
        let status = unsafe {
            fc_tracker_push(t, gray.pixels.as_ptr(), mask.pixels.as_ptr(), gray.width, gray.height, &mut active)
        };
        assert_eq!(status, FcStatus::Ok, "{}", last_error());
    }
    let mut counted = 0;
    assert_eq!(unsafe { fc_tracker_finish(t, &mut counted) }, FcStatus::Ok);
    assert_eq!(counted, expected);
    let px = vec![0u8; 320 * 240];
    assert_eq!(
        unsafe { fc_tracker_push(t, px.as_ptr(), px.as_ptr(), 320, 240, ptr::null_mut()) },
        FcStatus::InvalidArgument
    );
    unsafe { fc_tracker_free(t) };
}

#[test]
fn tracker_rejects_size_change() {
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { fc_tracker_new(ptr::null(), 3, &mut t) }, FcStatus::Ok);
    let a = vec![0u8; 40 * 30];
    let b = vec![0u8; 30 * 40 + 10];
    assert_eq!(unsafe { fc_tracker_push(t, a.as_ptr(), a.as_ptr(), 40, 30, ptr::null_mut()) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_tracker_push(t, b.as_ptr(), b.as_ptr(), 41, 30, ptr::null_mut()) }, FcStatus::Ingest);
    unsafe { fc_tracker_free(t) };
}

#[test]
fn simulate_and_count_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[scene]\nfruit_count_front = 12\nfruit_count_back = 3\nframe_count = 40\nwidth = 320\nheight = 240\nfocal = 250.0\n\n[pipeline]\nflow_provider = \"ground_truth\"\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    let seed = 21u64;
    assert_eq!(unsafe { fc_simulate(c_path(&cfg_path).as_ptr(), c_path(&data).as_ptr(), &seed) }, FcStatus::Ok);

    let mut counts = FcCounts {
        raw: 0,
        corrected: 0,
        truth: 0,
    };
    let out = dir.path().join("out");
    let status = unsafe {
        fc_pipeline_run(c_path(&cfg_path).as_ptr(), c_path(&data).as_ptr(), c_path(&out).as_ptr(), true, &mut counts)
    };
    assert_eq!(status, FcStatus::Ok, "{}", last_error());
    assert!(counts.truth > 0);
    assert!(counts.corrected <= counts.raw);
    assert!(out.join("summary.json").exists());

    let missing = dir.path().join("missing");
    let status = unsafe { fc_pipeline_run(ptr::null(), c_path(&missing).as_ptr(), c_path(&out).as_ptr(), false, &mut counts) };
    assert_eq!(status, FcStatus::Io);
    assert!(last_error().starts_with("ingest:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scene]\nwidth = 0\n").unwrap();
    assert_eq!(unsafe { fc_simulate(c_path(&bad).as_ptr(), c_path(&data).as_ptr(), ptr::null()) }, FcStatus::Config);
    assert!(last_error().starts_with("simulate:"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fruitcount.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "fc_last_error_message",
        "fc_version",
        "fc_evaluate",
        "fc_solve_assignment",
        "fc_mask_to_regions",
        "fc_region_list_len",
        "fc_region_list_get",
        "fc_region_list_free",
        "fc_tracker_new",
        "fc_tracker_push",
        "fc_tracker_finish",
        "fc_tracker_free",
        "fc_simulate",
        "fc_pipeline_run",
        "typedef struct FcTracker FcTracker",
        "FC_STATUS_PANIC = 99",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

/// Compiles the C smoke program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let exe_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = exe_dir.join("libfruitcount_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .expect("C compiler available");
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
