//! Report files written by a counting run.
//!
//! | file                  | contents                                         |
//! |-----------------------|--------------------------------------------------|
//! | `counts.csv`          | per-segment raw/corrected counts and truth        |
//! | `fruits3d.csv`        | per-fruit position, depth, sizes and flags        |
//! | `sizes_histogram.csv` | relative-size histogram, kept vs rejected         |
//! | `tracks.jsonl`        | one counted track per line with its observations  |
//! | `summary.json`        | [`EvaluationSummary`]                             |
//!
//! Percent errors are `(estimate − truth) / truth × 100`; spreads are
//! population standard deviations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::signed_error_pct;
use crate::model::FruitFlag;
use crate::pipeline::{EvaluationSummary, PipelineOutput};

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.25;
pub const HISTOGRAM_BINS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub segment: String,
    pub raw: usize,
    pub corrected: usize,
    pub truth: Option<usize>,
    pub error_pct_raw: Option<f64>,
    pub error_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruitRow {
    pub track_id: usize,
    pub segment: String,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub depth: Option<f64>,
    pub raw_size: Option<f64>,
    pub rel_size: Option<f64>,
    /// `;`-separated flag names.
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub kept: usize,
    pub rejected: usize,
}

#[derive(Serialize)]
struct TrackLine<'a> {
    id: usize,
    segment: Option<&'a str>,
    status: String,
    age: usize,
    observations: Vec<ObservationOut>,
}

#[derive(Serialize)]
struct ObservationOut {
    frame: usize,
    u: f64,
    v: f64,
    area: usize,
    bbox: [f64; 4],
}

pub fn count_rows(summary: &EvaluationSummary) -> Vec<CountRow> {
    summary
        .segments
        .iter()
        .map(|r| CountRow {
            segment: r.segment_id.clone(),
            raw: r.raw_count,
            corrected: r.corrected_count,
            truth: r.ground_truth,
            error_pct_raw: r.ground_truth.and_then(|t| signed_error_pct(r.raw_count, t)),
            error_pct: r.ground_truth.and_then(|t| signed_error_pct(r.corrected_count, t)),
        })
        .collect()
}

pub fn fruit_rows(out: &PipelineOutput) -> Vec<FruitRow> {
    out.fruits
        .iter()
        .map(|f| FruitRow {
            track_id: f.track_id,
            segment: out.track_segments.get(&f.track_id).cloned().unwrap_or_default(),
            x: f.position.map(|p| p.x),
            y: f.position.map(|p| p.y),
            z: f.position.map(|p| p.z),
            depth: f.representative_depth(),
            raw_size: f.is_localized().then_some(f.raw_size),
            rel_size: f.is_localized().then_some(f.rel_size),
            flags: f.flags.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

/// Fixed-width bins over localized fruits; the last bin is open-ended.
pub fn histogram_rows(out: &PipelineOutput) -> Vec<HistogramRow> {
    let mut rows: Vec<HistogramRow> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramRow {
            bin_lower: i as f64 * HISTOGRAM_BIN_WIDTH,
            bin_upper: if i + 1 == HISTOGRAM_BINS {
                f64::INFINITY
            } else {
                (i + 1) as f64 * HISTOGRAM_BIN_WIDTH
            },
            kept: 0,
            rejected: 0,
        })
        .collect();
    for f in out.fruits.iter().filter(|f| f.is_localized()) {
        let bin = ((f.rel_size / HISTOGRAM_BIN_WIDTH).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        if f.is_rejected() {
            rows[bin].rejected += 1;
        } else {
            rows[bin].kept += 1;
        }
    }
    rows
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Writes every report file into `dir`, creating it if needed.
pub fn emit_reports(out: &PipelineOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("counts.csv"),
        &["segment", "raw", "corrected", "truth", "error_pct_raw", "error_pct"],
        &count_rows(&out.summary),
    )?;
    write_csv(
        &dir.join("fruits3d.csv"),
        &["track_id", "segment", "x", "y", "z", "depth", "raw_size", "rel_size", "flags"],
        &fruit_rows(out),
    )?;
    write_csv(
        &dir.join("sizes_histogram.csv"),
        &["bin_lower", "bin_upper", "kept", "rejected"],
        &histogram_rows(out),
    )?;

    let path = dir.join("tracks.jsonl");
    let mut buf = Vec::new();
    for t in &out.tracks {
        let line = TrackLine {
            id: t.id,
            segment: out.track_segments.get(&t.id).map(String::as_str),
            status: format!("{:?}", t.status()).to_lowercase(),
            age: t.age(),
            observations: t
                .observations()
                .values()
                .map(|r| ObservationOut {
                    frame: r.frame,
                    u: r.centroid.u,
                    v: r.centroid.v,
                    area: r.area,
                    bbox: [r.bbox.row_min, r.bbox.col_min, r.bbox.row_max, r.bbox.col_max],
                })
                .collect(),
        };
        serde_json::to_writer(&mut buf, &line)?;
        buf.push(b'\n');
    }
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("summary.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &out.summary)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;

    if !out.masked_frames.is_empty() {
        let masked = dir.join("masked");
        fs::create_dir_all(&masked).map_err(|e| Error::io(&masked, e))?;
        for m in &out.masked_frames {
            crate::ingest::write_png(m, &masked.join(format!("masked_{:04}.png", m.index)))?;
        }
    }
    Ok(())
}

/// Per-segment `(raw, corrected)` recomputed from `fruits3d.csv` rows and
/// per-segment raw counts.
pub fn reaggregate(rows: &[FruitRow], segment: &str) -> (usize, usize) {
    let seg: Vec<&FruitRow> = rows.iter().filter(|r| r.segment == segment).collect();
    let rejected = seg
        .iter()
        .filter(|r| {
            r.flags.split(';').any(|f| {
                f == FruitFlag::Duplicate.to_string() || f == FruitFlag::SizeOutlier.to_string() || f == FruitFlag::DepthOutlier.to_string()
            })
        })
        .count();
    (seg.len(), seg.len() - rejected)
}
