//! End-to-end counting: detections → tracks → 3D fruits → corrected counts.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FlowSource, PipelineConfig};
use crate::correct::{apply_corrections, corrected_count, tally};
use crate::error::{Error, Result, StageExt};
use crate::eval::{evaluate, Evaluation};
use crate::flow::{FlowProvider, LucasKanade};
use crate::ingest::{load_dataset, load_poses, mask_to_regions, read_png, DatasetManifest, Segment};
use crate::localize::{
    associate_features, background_intensity, feature_sufficiency, kept_pixels, load_feature_tracks, localize_fruit,
    mask_for_features, masked_feature_counts, triangulate_all, FeatureTrack,
};
use crate::model::{CameraPose, CountReport, FrameImage, Fruit3D, FruitTrack, PixelPoint, Region};
use crate::simulate::{load_ground_truth, GroundTruth, GroundTruthFlow, Simulation};
use crate::track::{age_threshold, estimate_overlap_frames, Tracker};

/// Frame pairs sampled when estimating the overlap length from flow.
const OVERLAP_SAMPLE_PAIRS: usize = 20;

/// Everything the pipeline reads, held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<FrameImage>,
    pub masks: Vec<FrameImage>,
    pub poses: Option<Vec<CameraPose>>,
    pub features: Option<Vec<FeatureTrack>>,
    pub segments: Vec<Segment>,
    pub ground_truth: Option<GroundTruth>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let n = manifest.frame_count();
        let frames = (0..n)
            .into_par_iter()
            .map(|k| read_png(&manifest.frame_path(k), k))
            .collect::<Result<Vec<_>>>()?;
        let masks = (0..n)
            .into_par_iter()
            .map(|k| read_png(&manifest.mask_path(k), k))
            .collect::<Result<Vec<_>>>()?;
        for (f, m) in frames.iter().zip(&masks) {
            if !f.same_dimensions(m) || !f.same_dimensions(&frames[0]) {
                return Err(Error::DimensionMismatch(f.width, f.height, m.width, m.height));
            }
        }
        let poses = manifest
            .poses
            .as_ref()
            .map(|p| load_poses(&manifest.resolve(p), Some(n)))
            .transpose()?;
        let features = manifest
            .features
            .as_ref()
            .map(|p| load_feature_tracks(&manifest.resolve(p)))
            .transpose()?;
        let ground_truth = manifest
            .ground_truth
            .as_ref()
            .map(|p| load_ground_truth(&manifest.resolve(p)))
            .transpose()?;
        Ok(Self {
            frames,
            masks,
            poses,
            features,
            segments: manifest.effective_segments(),
            ground_truth,
            seed: manifest.seed,
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&load_dataset(&dir.join("manifest.json"))?)
    }

    pub fn from_simulation(sim: &Simulation) -> Self {
        Self {
            frames: sim.frames.clone(),
            masks: sim.masks.clone(),
            poses: Some(sim.truth.poses()),
            features: Some(sim.features.clone()),
            segments: sim.truth.segments.clone(),
            ground_truth: Some(sim.truth.clone()),
            seed: Some(sim.truth.seed),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn effective_segments(&self) -> Vec<Segment> {
        if self.segments.is_empty() {
            vec![Segment {
                id: "all".into(),
                first_frame: 0,
                last_frame: self.frame_count().saturating_sub(1),
                visual_count: None,
            }]
        } else {
            self.segments.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Only feature observations near detected fruit were used.
    Masked,
    /// Too few masked features; every feature observation was used.
    AllFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationStats {
    pub mode: FeatureMode,
    pub features_total: usize,
    pub features_used: usize,
    pub features_triangulated: usize,
    pub fruits_localized: usize,
    pub background_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub segments: Vec<CountReport>,
    pub total_raw: usize,
    pub total_corrected: usize,
    pub total_truth: Option<usize>,
    /// Present when every segment has a ground-truth count.
    pub raw: Option<Evaluation>,
    pub corrected: Option<Evaluation>,
    pub correction_enabled: bool,
    pub overlap_frames: usize,
    pub age_threshold: usize,
    pub tracks_created: usize,
    pub tracks_discarded: usize,
    pub merge_radius: Option<f64>,
    pub localization: Option<LocalizationStats>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub summary: EvaluationSummary,
    /// Counted tracks in counting order.
    pub tracks: Vec<FruitTrack>,
    /// One entry per counted track when correction ran, else empty.
    pub fruits: Vec<Fruit3D>,
    /// Segment id per counted track id.
    pub track_segments: BTreeMap<usize, String>,
    /// Feature-masked frames, when requested.
    pub masked_frames: Vec<FrameImage>,
}

/// Frame at the middle of a track's observations.
pub fn attribution_frame(track: &FruitTrack) -> usize {
    let frames: Vec<usize> = track.observations().keys().copied().collect();
    frames[frames.len() / 2]
}

fn segment_for<'a>(segments: &'a [Segment], frame: usize) -> Option<&'a Segment> {
    segments.iter().find(|s| s.contains(frame))
}

/// Flow source for the frame pair `(k, k + 1)`.
fn provider<'a>(data: &'a Dataset, k: usize, config: &PipelineConfig) -> Result<Box<dyn FlowProvider + 'a>> {
    match config.pipeline.flow_provider {
        FlowSource::Lk => Ok(Box::new(LucasKanade::new(&data.frames[k], &data.frames[k + 1], &config.flow)?)),
        FlowSource::GroundTruth => {
            let truth = data
                .ground_truth
                .as_ref()
                .ok_or_else(|| Error::Config("flow_provider = \"ground_truth\" needs a dataset with ground truth".into()))?;
            Ok(Box::new(GroundTruthFlow { truth, frame: k }))
        }
    }
}

/// Frames a typical fruit stays in view, from flow at detection centroids on
/// evenly spaced frame pairs.
fn estimate_overlap(data: &Dataset, regions: &[Vec<Region>], config: &PipelineConfig) -> Result<Option<usize>> {
    let pairs = data.frame_count().saturating_sub(1);
    if pairs == 0 {
        return Ok(None);
    }
    let step = pairs.div_ceil(OVERLAP_SAMPLE_PAIRS).max(1);
    let sampled: Vec<usize> = (0..pairs).step_by(step).collect();
    let flows = sampled
        .par_iter()
        .map(|&k| {
            let points: Vec<PixelPoint> = regions[k].iter().map(|r| r.centroid).collect();
            if points.is_empty() {
                return Ok(Vec::new());
            }
            let guesses = vec![(0.0, 0.0); points.len()];
            provider(data, k, config)?.flows(&points, &guesses)
        })
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (data.frames[0].width, data.frames[0].height);
    Ok(estimate_overlap_frames(&flows, w, h))
}

/// Runs detection, tracking and, when enabled, localization and correction.
pub fn run_pipeline(data: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate().stage("config")?;
    if data.frames.is_empty() {
        return Err(Error::MalformedManifest("dataset has no frames".into())).stage("ingest");
    }
    let n = data.frame_count();
    let (width, height) = (data.frames[0].width, data.frames[0].height);

    let regions: Vec<Vec<Region>> = data
        .masks
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let mut r = mask_to_regions(m, config.pipeline.min_area);
            for x in &mut r {
                x.frame = k;
            }
            r
        })
        .collect();

    let overlap = match config.tracker.overlap_frames {
        Some(o) => o,
        None => estimate_overlap(data, &regions, config).stage("flow")?.unwrap_or(n),
    };
    let threshold = age_threshold(overlap, config.tracker.age_fraction, config.tracker.min_count_age);

    let mut tracker = Tracker::new(config.tracker.clone(), threshold).stage("track")?;
    tracker.initialize(&regions[0]);
    for k in 1..n {
        let flow = provider(data, k - 1, config).stage("flow")?;
        tracker.step(k, &regions[k], flow.as_ref()).stage("track")?;
    }
    tracker.finish();
    let tracks_created = tracker.total_created();
    let tracks_discarded = tracker.discarded();
    let tracks = tracker.into_counted();

    let segments = data.effective_segments();
    let track_segments: BTreeMap<usize, String> = tracks
        .iter()
        .filter_map(|t| segment_for(&segments, attribution_frame(t)).map(|s| (t.id, s.id.clone())))
        .collect();

    let mut fruits = Vec::new();
    let mut localization = None;
    let mut merge_radius = None;
    let mut masked_frames = Vec::new();
    if config.pipeline.enable_correction {
        let (Some(poses), Some(features)) = (&data.poses, &data.features) else {
            return Err(Error::Config(
                "correction needs camera poses and feature tracks; supply them or disable correction".into(),
            ))
            .stage("localize");
        };
        let (f, stats, masked) = localize(data, poses, features, &regions, &tracks, width, height, config);
        fruits = f;
        localization = Some(stats);
        masked_frames = masked;
        let outcome = apply_corrections(&mut fruits, &tracks, &config.correct);
        merge_radius = outcome.merge_radius;
    }

    let mut reports = Vec::new();
    for seg in &segments {
        let in_seg = |id: usize| track_segments.get(&id).is_some_and(|s| *s == seg.id);
        let raw = tracks.iter().filter(|t| in_seg(t.id)).count();
        let seg_fruits: Vec<Fruit3D> = fruits.iter().filter(|f| in_seg(f.track_id)).cloned().collect();
        let t = tally(&seg_fruits);
        reports.push(CountReport::new(seg.id.clone(), raw, corrected_count(raw, &t), seg.visual_count, t));
    }
    let total_raw = reports.iter().map(|r| r.raw_count).sum();
    let total_corrected = reports.iter().map(|r| r.corrected_count).sum();
    let truth: Option<BTreeMap<String, usize>> = reports
        .iter()
        .map(|r| r.ground_truth.map(|t| (r.segment_id.clone(), t)))
        .collect();
    let (raw_eval, corrected_eval) = match &truth {
        Some(t) => {
            let raw: BTreeMap<String, usize> = reports.iter().map(|r| (r.segment_id.clone(), r.raw_count)).collect();
            let cor: BTreeMap<String, usize> = reports.iter().map(|r| (r.segment_id.clone(), r.corrected_count)).collect();
            (Some(evaluate(&raw, t).stage("evaluate")?), Some(evaluate(&cor, t).stage("evaluate")?))
        }
        None => (None, None),
    };

    Ok(PipelineOutput {
        summary: EvaluationSummary {
            total_truth: truth.as_ref().map(|t| t.values().sum()),
            segments: reports,
            total_raw,
            total_corrected,
            raw: raw_eval,
            corrected: corrected_eval,
            correction_enabled: config.pipeline.enable_correction,
            overlap_frames: overlap,
            age_threshold: threshold,
            tracks_created,
            tracks_discarded,
            merge_radius,
            localization,
            seed: config.pipeline.seed.or(data.seed),
        },
        tracks,
        fruits,
        track_segments,
        masked_frames,
    })
}

/// Feature masking, triangulation, association and per-fruit localization.
#[allow(clippy::too_many_arguments)]
fn localize(
    data: &Dataset,
    poses: &[CameraPose],
    features: &[FeatureTrack],
    regions: &[Vec<Region>],
    tracks: &[FruitTrack],
    width: usize,
    height: usize,
    config: &PipelineConfig,
) -> (Vec<Fruit3D>, LocalizationStats, Vec<FrameImage>) {
    let cfg = &config.localize;
    let gray: Vec<FrameImage> = data.frames.iter().map(|f| f.to_gray()).collect();
    let background = background_intensity(&gray).unwrap_or(0.0);
    let counts = masked_feature_counts(features, regions, width, height, cfg.margin);
    let sufficient = feature_sufficiency(&counts, cfg.min_features_per_frame, cfg.sparse_frame_fraction);

    let mut used: Vec<FeatureTrack> = if sufficient {
        let kept: Vec<Vec<bool>> = regions.par_iter().map(|r| kept_pixels(width, height, r, cfg.margin)).collect();
        features
            .iter()
            .filter_map(|f| {
                let obs: BTreeMap<usize, PixelPoint> = f
                    .observations
                    .iter()
                    .filter(|(&k, p)| {
                        let (r, c) = (p.u.round(), p.v.round());
                        k < kept.len()
                            && r >= 0.0
                            && c >= 0.0
                            && (r as usize) < height
                            && (c as usize) < width
                            && kept[k][r as usize * width + c as usize]
                    })
                    .map(|(&k, p)| (k, *p))
                    .collect();
                (obs.len() >= 2).then(|| FeatureTrack {
                    id: f.id,
                    observations: obs,
                    world: None,
                })
            })
            .collect()
    } else {
        features.to_vec()
    };
    let triangulated = triangulate_all(&mut used, poses, cfg);
    let by_id: BTreeMap<usize, &FeatureTrack> = used.iter().map(|f| (f.id, f)).collect();
    let assoc = associate_features(&used, tracks);
    let fruits: Vec<Fruit3D> = tracks
        .par_iter()
        .map(|t| {
            let feats: Vec<&FeatureTrack> = assoc
                .get(&t.id)
                .map(|ids| ids.iter().map(|id| by_id[id]).collect())
                .unwrap_or_default();
            localize_fruit(t, &feats, poses)
        })
        .collect();

    let masked = if cfg.write_masked_frames {
        let bg = background.round().clamp(0.0, 255.0) as u8;
        gray.par_iter()
            .zip(regions.par_iter())
            .map(|(f, r)| mask_for_features(f, r, bg, cfg))
            .collect()
    } else {
        Vec::new()
    };
    let stats = LocalizationStats {
        mode: if sufficient { FeatureMode::Masked } else { FeatureMode::AllFeatures },
        features_total: features.len(),
        features_used: used.len(),
        features_triangulated: triangulated,
        fruits_localized: fruits.iter().filter(|f| f.is_localized()).count(),
        background_intensity: background,
    };
    (fruits, stats, masked)
}
