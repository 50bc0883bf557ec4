//! Synthetic orchard scenes with exact ground truth.
//!
//! Fruits are flat disks on fronto-parallel planes (a front row and an
//! optional back row) in front of a textured background plane. The camera
//! translates along +X with identity rotation, so image motion is purely
//! along columns at `−f·speed/depth` pixels per frame.

mod config;
mod features;
mod render;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Occlusion, SceneConfig};

use crate::error::{Error, Result};
use crate::flow::{FlowProvider, FlowVector};
use crate::ingest::{write_manifest, write_png, write_poses, write_svg_labels, Circle, DatasetManifest, GroundTruthLabel, Segment};
use crate::localize::{write_feature_tracks, FeatureTrack};
use crate::model::{CameraPose, FrameImage, Intrinsics, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Row {
    Front,
    Back,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFruit {
    pub id: usize,
    pub center: [f64; 3],
    pub radius: f64,
    pub row: Row,
    /// Oversized non-fruit detection.
    pub oversized: bool,
    pub brightness: f64,
    /// Inclusive frame range with the mask erased.
    pub gap: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub background_depth: f64,
    pub camera_centers: Vec<[f64; 3]>,
    pub fruits: Vec<SimFruit>,
    pub segments: Vec<Segment>,
}

impl GroundTruth {
    pub fn frame_count(&self) -> usize {
        self.camera_centers.len()
    }

    pub fn pose(&self, k: usize) -> CameraPose {
        CameraPose {
            frame: k,
            rotation: Matrix3::identity(),
            translation: -Vector3::from(self.camera_centers[k]),
            intrinsics: self.intrinsics,
        }
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        (0..self.frame_count()).map(|k| self.pose(k)).collect()
    }

    pub fn depth(&self, i: usize, k: usize) -> f64 {
        self.fruits[i].center[2] - self.camera_centers[k][2]
    }

    /// Projected disk center and pixel radius of fruit `i` in frame `k`.
    pub fn projected(&self, i: usize, k: usize) -> (PixelPoint, f64) {
        let f = &self.fruits[i];
        let p = self.pose(k).project(&Vector3::from(f.center)).expect("fruits lie in front of the camera");
        (p.pixel, self.intrinsics.fx * f.radius / p.depth)
    }

    /// Whether the projected disk reaches a pixel center of frame `k`.
    pub fn disk_in_view(&self, i: usize, k: usize) -> bool {
        let (c, r) = self.projected(i, k);
        let nu = c.u.clamp(0.0, self.height as f64 - 1.0);
        let nv = c.v.clamp(0.0, self.width as f64 - 1.0);
        (c.u - nu).powi(2) + (c.v - nv).powi(2) <= r * r
    }

    pub fn center_in_image(&self, i: usize, k: usize) -> bool {
        let (c, _) = self.projected(i, k);
        (0.0..=self.height as f64 - 1.0).contains(&c.u) && (0.0..=self.width as f64 - 1.0).contains(&c.v)
    }

    pub fn visible_frames(&self, i: usize) -> Vec<usize> {
        (0..self.frame_count()).filter(|&k| self.disk_in_view(i, k)).collect()
    }

    pub fn in_gap(&self, i: usize, k: usize) -> bool {
        self.fruits[i].gap.is_some_and(|[a, b]| (a..=b).contains(&k))
    }

    /// Front-row, real fruit: what a count of the target row should find.
    pub fn is_target(&self, i: usize) -> bool {
        let f = &self.fruits[i];
        f.row == Row::Front && !f.oversized
    }

    /// Back-to-front painting order; on equal depth the lower id ends on top.
    pub(crate) fn render_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.fruits.len()).collect();
        order.sort_by(|&a, &b| {
            self.fruits[b].center[2]
                .total_cmp(&self.fruits[a].center[2])
                .then(b.cmp(&a))
        });
        order
    }

    /// Front-most fruit whose disk covers `p` in frame `k`.
    pub fn owner(&self, k: usize, p: &PixelPoint) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.fruits.len() {
            let (c, r) = self.projected(i, k);
            if c.distance_squared(p) <= r * r {
                let d = self.depth(i, k);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Exact image motion from frame `k` to `k + 1` of the fruit surface
    /// point under `p`.
    pub fn true_flow(&self, k: usize, p: &PixelPoint) -> Result<(f64, f64)> {
        let not_on = || Error::PointNotOnFruit(p.u, p.v, k);
        if k + 1 >= self.frame_count() {
            return Err(not_on());
        }
        let i = self.owner(k, p).ok_or_else(not_on)?;
        if !self.disk_in_view(i, k + 1) {
            return Err(not_on());
        }
        let world = self.pose(k).back_project(p, self.depth(i, k));
        let next = self.pose(k + 1).project(&world)?;
        Ok((next.pixel.u - p.u, next.pixel.v - p.v))
    }

    /// Real fruit whose disk explains a detection centroid: the owner of the
    /// centroid, else the nearest projected center within its radius + 2 px.
    pub fn fruit_near(&self, k: usize, p: &PixelPoint) -> Option<usize> {
        if let Some(i) = self.owner(k, p) {
            return Some(i);
        }
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.fruits.len() {
            let (c, r) = self.projected(i, k);
            let d = c.distance_squared(p).sqrt();
            if d <= r + 2.0 && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    /// Majority fruit over a track's `(frame, centroid)` observations.
    pub fn fruit_for_track<'a>(&self, observations: impl IntoIterator<Item = (usize, &'a PixelPoint)>) -> Option<usize> {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        let mut total = 0;
        for (k, p) in observations {
            total += 1;
            if let Some(i) = self.fruit_near(k, p) {
                *votes.entry(i).or_default() += 1;
            }
        }
        let (i, n) = votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))?;
        (2 * n > total).then_some(i)
    }

    /// Middle frame of a fruit's visible span, used to attribute it to a segment.
    pub fn attribution_frame(&self, i: usize) -> Option<usize> {
        let v = self.visible_frames(i);
        v.get(v.len() / 2).copied()
    }

    /// Target-row fruits visible in at least one frame.
    pub fn target_count(&self) -> usize {
        (0..self.fruits.len())
            .filter(|&i| self.is_target(i) && !self.visible_frames(i).is_empty())
            .count()
    }

    /// All real fruits (either row) visible in at least one frame.
    pub fn visible_count(&self) -> usize {
        (0..self.fruits.len())
            .filter(|&i| !self.fruits[i].oversized && !self.visible_frames(i).is_empty())
            .count()
    }

    /// Target fruits per frame as pixel circles (`cx` column, `cy` row).
    pub fn label(&self, k: usize) -> GroundTruthLabel {
        let circles = (0..self.fruits.len())
            .filter(|&i| self.is_target(i) && self.disk_in_view(i, k))
            .map(|i| {
                let (c, r) = self.projected(i, k);
                Circle { cx: c.v, cy: c.u, r }
            })
            .collect();
        GroundTruthLabel::new(k, circles)
    }
}

/// Flow provider backed by [`GroundTruth::true_flow`] for one frame pair.
pub struct GroundTruthFlow<'a> {
    pub truth: &'a GroundTruth,
    pub frame: usize,
}

impl FlowProvider for GroundTruthFlow<'_> {
    fn flows(&self, points: &[PixelPoint], _guesses: &[(f64, f64)]) -> Result<Vec<FlowVector>> {
        Ok(points
            .iter()
            .map(|p| match self.truth.true_flow(self.frame, p) {
                Ok((du, dv)) => FlowVector::new(du, dv, true),
                Err(_) => FlowVector::invalid(),
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SceneConfig,
    pub truth: GroundTruth,
    pub frames: Vec<FrameImage>,
    pub masks: Vec<FrameImage>,
    pub features: Vec<FeatureTrack>,
}

fn place_row(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    placed: &mut Vec<SimFruit>,
    count: usize,
    row: Row,
    depth: f64,
    radius: impl Fn(&mut ChaCha8Rng) -> f64,
    oversized: bool,
) -> Result<()> {
    let k = cfg.intrinsics();
    let sweep = cfg.camera_speed * (cfg.frame_count - 1) as f64;
    let half_view = k.cx * depth / k.fx;
    let span = sweep.max(half_view);
    let x0 = sweep / 2.0 - span / 2.0;
    for _ in 0..count {
        let r = radius(rng);
        let y_max = (k.cy * depth / k.fy - 1.5 * r).max(0.0);
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 20_000 {
                return Err(Error::ConfigInvalid(format!(
                    "could not place {count} fruits in the {row:?} row without overlap; reduce counts or min_separation"
                )));
            }
            let x = x0 + rng.random::<f64>() * span;
            let y = if y_max > 0.0 { rng.random_range(-y_max..=y_max) } else { 0.0 };
            let clear = placed.iter().filter(|f| f.row == row).all(|f| {
                let (dx, dy) = (f.center[0] - x, f.center[1] - y);
                (dx * dx + dy * dy).sqrt() >= cfg.min_separation * (f.radius + r)
            });
            if clear {
                placed.push(SimFruit {
                    id: placed.len(),
                    center: [x, y, depth],
                    radius: r,
                    row,
                    oversized,
                    brightness: rng.random_range(150.0..215.0),
                    gap: None,
                });
                break;
            }
        }
    }
    Ok(())
}

fn split_segments(truth: &GroundTruth, n: usize) -> Vec<Segment> {
    let frames = truth.frame_count();
    let bounds: Vec<usize> = (0..=n).map(|s| s * frames / n).collect();
    let attribution: Vec<Option<usize>> = (0..truth.fruits.len())
        .map(|i| if truth.is_target(i) { truth.attribution_frame(i) } else { None })
        .collect();
    (0..n)
        .map(|s| {
            let (a, b) = (bounds[s], bounds[s + 1] - 1);
            Segment {
                id: format!("seg{s}"),
                first_frame: a,
                last_frame: b,
                visual_count: Some(attribution.iter().flatten().filter(|&&f| (a..=b).contains(&f)).count()),
            }
        })
        .collect()
}

/// Builds a scene, renders every frame, and derives the feature tracks.
pub fn generate(cfg: &SceneConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let camera_centers = (0..cfg.frame_count)
        .map(|k| [cfg.camera_speed * k as f64, 0.0, 0.0])
        .collect();

    let mut fruits = Vec::new();
    let n_oversized = (cfg.oversized_fraction * cfg.fruit_count_front as f64).round() as usize;
    let base = cfg.fruit_radius;
    let jitter = cfg.radius_jitter;
    let big = base * cfg.oversized_scale;
    place_row(&mut rng, cfg, &mut fruits, n_oversized, Row::Front, cfg.row_depth_front, |_| big, true)?;
    let jittered = move |r: &mut ChaCha8Rng| base * (1.0 + jitter * r.random_range(-1.0..=1.0));
    place_row(&mut rng, cfg, &mut fruits, cfg.fruit_count_front, Row::Front, cfg.row_depth_front, jittered, false)?;
    place_row(&mut rng, cfg, &mut fruits, cfg.fruit_count_back, Row::Back, cfg.row_depth_back, jittered, false)?;

    let mut truth = GroundTruth {
        seed: cfg.seed,
        width: cfg.width,
        height: cfg.height,
        intrinsics: cfg.intrinsics(),
        background_depth: cfg.background_depth,
        camera_centers,
        fruits,
        segments: Vec::new(),
    };

    if let Occlusion::DropoutGaps { gap_length, affected_fraction } = cfg.occlusion {
        let spans: Vec<(usize, Vec<usize>)> = (0..truth.fruits.len())
            .filter(|&i| truth.is_target(i))
            .map(|i| (i, (0..truth.frame_count()).filter(|&k| truth.center_in_image(i, k)).collect::<Vec<_>>()))
            .filter(|(_, s)| s.len() >= gap_length + 2 * cfg.gap_min_side)
            .collect();
        let wanted = (affected_fraction * cfg.fruit_count_front as f64).round() as usize;
        let mut chosen: Vec<&(usize, Vec<usize>)> = spans.choose_multiple(&mut rng, wanted.min(spans.len())).collect();
        chosen.sort_by_key(|(i, _)| *i);
        for (i, span) in chosen {
            let start = span[0] + (span.len() - gap_length) / 2;
            truth.fruits[*i].gap = Some([start, start + gap_length - 1]);
        }
    }
    truth.segments = split_segments(&truth, cfg.segments);

    let features = features::generate_features(&truth, cfg, &mut rng);
    let rendered: Vec<(FrameImage, FrameImage)> = (0..cfg.frame_count)
        .into_par_iter()
        .map(|k| render::render_frame(&truth, k, cfg.texture_noise))
        .collect();
    let (frames, masks) = rendered.into_iter().unzip();
    Ok(Simulation {
        config: cfg.clone(),
        truth,
        frames,
        masks,
        features,
    })
}

/// Writes the dataset layout read by [`crate::ingest::load_dataset`] and
/// returns its manifest.
pub fn write_dataset(sim: &Simulation, out: &Path) -> Result<DatasetManifest> {
    for d in ["frames", "masks", "labels"] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let n = sim.frames.len();
    let frame_rel = |k: usize| PathBuf::from(format!("frames/frame_{k:04}.png"));
    let mask_rel = |k: usize| PathBuf::from(format!("masks/mask_{k:04}.png"));
    let label_rel = |k: usize| PathBuf::from(format!("labels/label_{k:04}.svg"));
    (0..n).into_par_iter().try_for_each(|k| -> Result<()> {
        write_png(&sim.frames[k], &out.join(frame_rel(k)))?;
        write_png(&sim.masks[k], &out.join(mask_rel(k)))?;
        write_svg_labels(&sim.truth.label(k), sim.truth.width, sim.truth.height, &out.join(label_rel(k)))
    })?;
    let header = format!("seed {}", sim.truth.seed);
    write_poses(&sim.truth.poses(), Some(&header), &out.join("poses.txt"))?;
    write_feature_tracks(&sim.features, Some(&header), &out.join("features.txt"))?;
    let gt_path = out.join("ground_truth.json");
    let mut json = serde_json::to_string_pretty(&sim.truth)?;
    json.push('\n');
    fs::write(&gt_path, json).map_err(|e| Error::io(&gt_path, e))?;

    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        frames: (0..n).map(frame_rel).collect(),
        masks: (0..n).map(mask_rel).collect(),
        poses: Some("poses.txt".into()),
        labels: Some((0..n).map(label_rel).collect()),
        features: Some("features.txt".into()),
        ground_truth: Some("ground_truth.json".into()),
        seed: Some(sim.truth.seed),
        segments: sim.truth.segments.clone(),
    };
    write_manifest(&manifest, &out.join("manifest.json"))?;
    Ok(manifest)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}
