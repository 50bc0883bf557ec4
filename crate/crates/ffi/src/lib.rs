//! C ABI over the `fruitcount` engine.
//!
//! Every fallible call returns an [`FcStatus`]; on failure the message is
//! available from [`fc_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.
//! Panics never cross the boundary: they surface as `FC_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use fruitcount::assign::{solve_assignment, CostMatrix};
use fruitcount::config::PipelineConfig;
use fruitcount::eval::evaluate;
use fruitcount::flow::{FlowConfig, LucasKanade};
use fruitcount::ingest::mask_to_regions;
use fruitcount::model::{FrameImage, Region};
use fruitcount::pipeline::{run_pipeline, Dataset};
use fruitcount::report::emit_reports;
use fruitcount::simulate::{generate, write_dataset};
use fruitcount::track::Tracker;
use fruitcount::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    /// Malformed or inconsistent input files.
    Ingest = 5,
    /// Flow, assignment, filtering or geometry failure.
    Numeric = 6,
    MissingSegment = 7,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Config(_) | Error::ConfigInvalid(_) | Error::InvalidFlowConfig(_) => FcStatus::Config,
        Error::IoFailure { .. } | Error::MissingFile(_) => FcStatus::Io,
        Error::LengthMismatch { .. }
        | Error::MalformedManifest(_)
        | Error::MalformedSvg(_)
        | Error::MalformedPoses(_)
        | Error::MalformedFeatures(_)
        | Error::NonOrthonormalRotation { .. }
        | Error::FrameCountMismatch { .. }
        | Error::Image(_)
        | Error::DimensionMismatch(..)
        | Error::Json(_)
        | Error::Csv(_) => FcStatus::Ingest,
        Error::MissingSegment(_) => FcStatus::MissingSegment,
        _ => FcStatus::Numeric,
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FcStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts panics to `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            FcStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(FcStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Loads a TOML config from `path`, or defaults when `path` is null.
unsafe fn config_arg(path: *const c_char) -> Result<PipelineConfig, Failure> {
    if path.is_null() {
        return Ok(PipelineConfig::default());
    }
    Ok(PipelineConfig::load(&path_arg(path, "config_path")?).map_err(|e| e.in_stage("config"))?)
}

unsafe fn gray_image(index: usize, pixels: *const u8, width: usize, height: usize, name: &str) -> Result<FrameImage, Failure> {
    non_null(pixels, name)?;
    if width == 0 || height == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    let data = slice::from_raw_parts(pixels, width * height).to_vec();
    Ok(FrameImage::new(index, width, height, 1, data)?)
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcEvaluation {
    pub l1: u64,
    /// NaN when no segment has a nonzero truth.
    pub error_mean_pct: f64,
    pub error_std_pct: f64,
}

/// L1 loss and signed percentage error statistics over `len` segments.
///
/// # Safety
/// `estimates` and `truth` must point to `len` readable values (or may be
/// null when `len` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_evaluate(estimates: *const u64, truth: *const u64, len: usize, out: *mut FcEvaluation) -> FcStatus {
    guard(|| {
        non_null(out, "out")?;
        let (est, tru): (&[u64], &[u64]) = if len == 0 {
            (&[], &[])
        } else {
            non_null(estimates, "estimates")?;
            non_null(truth, "truth")?;
            (slice::from_raw_parts(estimates, len), slice::from_raw_parts(truth, len))
        };
        let key = |i: usize| format!("{i:08}");
        let em: BTreeMap<String, usize> = est.iter().enumerate().map(|(i, &v)| (key(i), v as usize)).collect();
        let tm: BTreeMap<String, usize> = tru.iter().enumerate().map(|(i, &v)| (key(i), v as usize)).collect();
        let e = evaluate(&em, &tm)?;
        *out = FcEvaluation {
            l1: e.l1 as u64,
            error_mean_pct: e.error_mean_pct.unwrap_or(f64::NAN),
            error_std_pct: e.error_std_pct.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Minimum-cost assignment of a row-major `rows × cols` cost matrix. Pairs
/// costing more than `gate` stay unmatched (pass `INFINITY` for no gate).
/// `row_to_col[r]` receives the matched column or -1.
///
/// # Safety
/// `costs` must hold `rows * cols` values and `row_to_col` must have room for
/// `rows`; `total_cost` may be null.
#[no_mangle]
pub unsafe extern "C" fn fc_solve_assignment(
    costs: *const f64,
    rows: usize,
    cols: usize,
    gate: f64,
    row_to_col: *mut i64,
    total_cost: *mut f64,
) -> FcStatus {
    guard(|| {
        let buf = if rows * cols == 0 {
            Vec::new()
        } else {
            non_null(costs, "costs")?;
            slice::from_raw_parts(costs, rows * cols).to_vec()
        };
        if rows > 0 {
            non_null(row_to_col, "row_to_col")?;
        }
        let m = CostMatrix::new(rows, cols, buf, gate)?;
        let a = solve_assignment(&m);
        if rows > 0 {
            let out = slice::from_raw_parts_mut(row_to_col, rows);
            out.fill(-1);
            for &(r, c) in &a.matches {
                out[r] = c as i64;
            }
        }
        if !total_cost.is_null() {
            *total_cost = a.total_cost(&m);
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcRegion {
    /// Centroid row.
    pub u: f64,
    /// Centroid column.
    pub v: f64,
    pub row_min: f64,
    pub col_min: f64,
    pub row_max: f64,
    pub col_max: f64,
    pub area: u64,
}

impl From<&Region> for FcRegion {
    fn from(r: &Region) -> Self {
        Self {
            u: r.centroid.u,
            v: r.centroid.v,
            row_min: r.bbox.row_min,
            col_min: r.bbox.col_min,
            row_max: r.bbox.row_max,
            col_max: r.bbox.col_max,
            area: r.area as u64,
        }
    }
}

/// Detections extracted from one mask.
pub struct FcRegionList(Vec<FcRegion>);

/// Connected components (8-neighborhood) of nonzero pixels with at least
/// `min_area` pixels, sorted by centroid.
///
/// # Safety
/// `mask` must hold `width * height` bytes, row-major; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_mask_to_regions(
    mask: *const u8,
    width: usize,
    height: usize,
    min_area: usize,
    out: *mut *mut FcRegionList,
) -> FcStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let img = gray_image(0, mask, width, height, "mask")?;
        let list = mask_to_regions(&img, min_area).iter().map(FcRegion::from).collect();
        *out = Box::into_raw(Box::new(FcRegionList(list)));
        Ok(())
    })
}

/// # Safety
/// `list` must be null or a live handle from [`fc_mask_to_regions`].
#[no_mangle]
pub unsafe extern "C" fn fc_region_list_len(list: *const FcRegionList) -> usize {
    list.as_ref().map_or(0, |l| l.0.len())
}

/// # Safety
/// `list` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_region_list_get(list: *const FcRegionList, index: usize, out: *mut FcRegion) -> FcStatus {
    guard(|| {
        non_null(list, "list")?;
        non_null(out, "out")?;
        let l = &(*list).0;
        *out = *l
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range for {} regions", l.len())))?;
        Ok(())
    })
}

/// # Safety
/// `list` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_region_list_free(list: *mut FcRegionList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// Frame-by-frame tracker fed with grayscale frames and detection masks.
/// Flow between consecutive frames comes from pyramidal Lucas-Kanade.
pub struct FcTracker {
    tracker: Tracker,
    flow: FlowConfig,
    min_area: usize,
    prev: Option<FrameImage>,
    frames: usize,
    finished: bool,
}

/// Creates a tracker. `config_path` may be null for defaults; its
/// `[tracker]`, `[flow]` and `pipeline.min_area` settings apply. A track is
/// counted when it retires with at least `age_threshold` detections.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated path; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_tracker_new(config_path: *const c_char, age_threshold: usize, out: *mut *mut FcTracker) -> FcStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let cfg = config_arg(config_path)?;
        cfg.validate().map_err(|e| e.in_stage("config"))?;
        if age_threshold == 0 {
            return Err(invalid("age_threshold must be >= 1"));
        }
        let t = FcTracker {
            tracker: Tracker::new(cfg.tracker.clone(), age_threshold)?,
            flow: cfg.flow,
            min_area: cfg.pipeline.min_area,
            prev: None,
            frames: 0,
            finished: false,
        };
        *out = Box::into_raw(Box::new(t));
        Ok(())
    })
}

/// Feeds the next frame. The first frame only starts tracks. `active_out`
/// (nullable) receives the number of live tracks afterwards.
///
/// # Safety
/// `tracker` must be a live handle; `gray` and `mask` must each hold
/// `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn fc_tracker_push(
    tracker: *mut FcTracker,
    gray: *const u8,
    mask: *const u8,
    width: usize,
    height: usize,
    active_out: *mut usize,
) -> FcStatus {
    guard(|| {
        non_null(tracker, "tracker")?;
        let t = &mut *tracker;
        if t.finished {
            return Err(invalid("tracker already finished"));
        }
        let k = t.frames;
        let frame = gray_image(k, gray, width, height, "gray")?;
        let mask = gray_image(k, mask, width, height, "mask")?;
        let mut regions = mask_to_regions(&mask, t.min_area);
        for r in &mut regions {
            r.frame = k;
        }
        match &t.prev {
            None => t.tracker.initialize(&regions),
            Some(prev) => {
                let lk = LucasKanade::new(prev, &frame, &t.flow)?;
                t.tracker.step(k, &regions, &lk)?;
            }
        }
        t.prev = Some(frame);
        t.frames += 1;
        if !active_out.is_null() {
            *active_out = t.tracker.active().len();
        }
        Ok(())
    })
}

/// Retires every live track and writes the number of counted tracks.
///
/// # Safety
/// `tracker` must be a live handle; `counted_out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_tracker_finish(tracker: *mut FcTracker, counted_out: *mut usize) -> FcStatus {
    guard(|| {
        non_null(tracker, "tracker")?;
        non_null(counted_out, "counted_out")?;
        let t = &mut *tracker;
        if !t.finished {
            t.tracker.finish();
            t.finished = true;
        }
        *counted_out = t.tracker.counted().len();
        Ok(())
    })
}

/// # Safety
/// `tracker` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_tracker_free(tracker: *mut FcTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcCounts {
    pub raw: u64,
    pub corrected: u64,
    /// -1 when the dataset carries no ground truth.
    pub truth: i64,
}

/// Renders a synthetic dataset into `out_dir` from the `[scene]` section of
/// `config_path` (null for defaults). `seed` (nullable) overrides the scene seed.
///
/// # Safety
/// Paths must be null (where allowed) or NUL-terminated; `seed` null or readable.
#[no_mangle]
pub unsafe extern "C" fn fc_simulate(config_path: *const c_char, out_dir: *const c_char, seed: *const u64) -> FcStatus {
    guard(|| {
        let mut cfg = config_arg(config_path)?;
        let out = path_arg(out_dir, "out_dir")?;
        if let Some(s) = seed.as_ref() {
            cfg.scene.seed = *s;
        }
        let sim = generate(&cfg.scene).map_err(|e| e.in_stage("simulate"))?;
        write_dataset(&sim, &out).map_err(|e| e.in_stage("simulate"))?;
        Ok(())
    })
}

/// Counts the dataset in `dataset_dir` (holding `manifest.json`) and writes
/// the report files to `out_dir`.
///
/// # Safety
/// Paths must be NUL-terminated (`config_path` may be null); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_pipeline_run(
    config_path: *const c_char,
    dataset_dir: *const c_char,
    out_dir: *const c_char,
    enable_correction: bool,
    out: *mut FcCounts,
) -> FcStatus {
    guard(|| {
        non_null(out, "out")?;
        let mut cfg = config_arg(config_path)?;
        cfg.pipeline.enable_correction = enable_correction;
        cfg.validate().map_err(|e| e.in_stage("config"))?;
        let dataset = path_arg(dataset_dir, "dataset_dir")?;
        let report_dir = path_arg(out_dir, "out_dir")?;
        let data = Dataset::load_dir(&dataset).map_err(|e| e.in_stage("ingest"))?;
        let result = run_pipeline(&data, &cfg)?;
        emit_reports(&result, &report_dir).map_err(|e| e.in_stage("report"))?;
        let s = &result.summary;
        *out = FcCounts {
            raw: s.total_raw as u64,
            corrected: s.total_corrected as u64,
            truth: s.total_truth.map_or(-1, |t| t as i64),
        };
        Ok(())
    })
}
