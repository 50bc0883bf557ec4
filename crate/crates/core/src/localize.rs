//! Fruit 3D localization from known camera poses.
//!
//! Feature tracks are triangulated with a linear multi-view solve, assigned
//! to the fruit tracks whose boxes contain them, and averaged into a fruit
//! center. Relative depth is the camera-frame `z` of that center; relative
//! size is pixel area scaled by depth squared, normalized by the cohort mean.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, CameraPose, FrameImage, Fruit3D, FruitTrack, PixelPoint, Region};
use crate::stats::{mean, median};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: usize,
    pub observations: BTreeMap<usize, PixelPoint>,
    pub world: Option<Vector3<f64>>,
}

impl FeatureTrack {
    pub fn new(id: usize, observations: impl IntoIterator<Item = (usize, PixelPoint)>) -> Self {
        Self {
            id,
            observations: observations.into_iter().collect(),
            world: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BackgroundMode {
    #[default]
    LowerThirdMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// Pixels added to each side of a fruit box when masking.
    pub margin: usize,
    /// Odd averaging window applied along the mask boundary.
    pub blur_window: usize,
    pub background_mode: BackgroundMode,
    pub min_features_per_frame: usize,
    /// Frames allowed below `min_features_per_frame` before falling back.
    pub sparse_frame_fraction: f64,
    pub reproj_threshold: f64,
    pub min_angle_deg: f64,
    /// Write masked frames to `<out>/masked/` for external reconstruction.
    pub write_masked_frames: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            margin: 25,
            blur_window: 5,
            background_mode: BackgroundMode::LowerThirdMean,
            min_features_per_frame: 50,
            sparse_frame_fraction: 0.2,
            reproj_threshold: 3.0,
            min_angle_deg: 0.5,
            write_masked_frames: false,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blur_window % 2 == 0 {
            return Err(Error::Config(format!(
                "localize.blur_window must be odd, got {}",
                self.blur_window
            )));
        }
        if !(self.reproj_threshold > 0.0) || !(self.min_angle_deg >= 0.0) {
            return Err(Error::Config("localize thresholds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparse_frame_fraction) {
            return Err(Error::Config("localize.sparse_frame_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Feature masking

/// Pixel-membership mask of the union of margin-expanded region boxes.
pub fn kept_pixels(width: usize, height: usize, regions: &[Region], margin: usize) -> Vec<bool> {
    let mut kept = vec![false; width * height];
    for r in regions {
        let b = r.bbox.expanded(margin as f64);
        // pixel centers inside the expanded box
        let r0 = b.row_min.ceil().max(0.0) as usize;
        let c0 = b.col_min.ceil().max(0.0) as usize;
        let r1 = (b.row_max.ceil() as i64 - 1).min(height as i64 - 1);
        let c1 = (b.col_max.ceil() as i64 - 1).min(width as i64 - 1);
        if r1 < r0 as i64 || c1 < c0 as i64 {
            continue;
        }
        for row in r0..=r1 as usize {
            kept[row * width + c0..=row * width + c1 as usize].fill(true);
        }
    }
    kept
}

/// Keeps pixels near fruit boxes, fills the rest with `background`, and
/// averages a `blur_window` neighborhood wherever that neighborhood
/// straddles the kept/filled boundary.
pub fn mask_for_features(image: &FrameImage, regions: &[Region], background: u8, config: &LocalizeConfig) -> FrameImage {
    let gray = image.to_gray();
    let (w, h) = (gray.width, gray.height);
    let kept = kept_pixels(w, h, regions, config.margin);
    let composite: Vec<u8> = (0..w * h)
        .map(|i| if kept[i] { gray.pixels[i] } else { background })
        .collect();
    let half = (config.blur_window / 2) as isize;
    let mut out = composite.clone();
    if half > 0 {
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (mut any_kept, mut any_bg) = (false, false);
                let (mut sum, mut n) = (0u32, 0u32);
                for dr in -half..=half {
                    for dc in -half..=half {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let j = rr as usize * w + cc as usize;
                        if kept[j] {
                            any_kept = true;
                        } else {
                            any_bg = true;
                        }
                        sum += composite[j] as u32;
                        n += 1;
                    }
                }
                if any_kept && any_bg {
                    out[r as usize * w + c as usize] = ((sum + n / 2) / n) as u8;
                }
            }
        }
    }
    FrameImage {
        index: image.index,
        width: w,
        height: h,
        channels: 1,
        pixels: out,
    }
}

/// Mean intensity of rows `⌊2h/3⌋..h` over all frames.
pub fn background_intensity(frames: &[FrameImage]) -> Option<f64> {
    let (mut sum, mut n) = (0f64, 0u64);
    for f in frames {
        let start = 2 * f.height / 3;
        for r in start..f.height {
            for c in 0..f.width {
                sum += f.get(r, c) as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-frame count of feature observations that fall inside the kept mask.
pub fn masked_feature_counts(
    features: &[FeatureTrack],
    regions_per_frame: &[Vec<Region>],
    width: usize,
    height: usize,
    margin: usize,
) -> Vec<usize> {
    let masks: Vec<Vec<bool>> = regions_per_frame
        .iter()
        .map(|r| kept_pixels(width, height, r, margin))
        .collect();
    let mut counts = vec![0; regions_per_frame.len()];
    for f in features {
        for (&frame, p) in &f.observations {
            let (r, c) = (p.u.round(), p.v.round());
            if frame >= masks.len() || r < 0.0 || c < 0.0 || r >= height as f64 || c >= width as f64 {
                continue;
            }
            if masks[frame][r as usize * width + c as usize] {
                counts[frame] += 1;
            }
        }
    }
    counts
}

/// False when more than `max_sparse_fraction` of frames have fewer than
/// `min_features_per_frame` masked features.
pub fn feature_sufficiency(masked_counts: &[usize], min_features_per_frame: usize, max_sparse_fraction: f64) -> bool {
    if masked_counts.is_empty() {
        return false;
    }
    let sparse = masked_counts.iter().filter(|&&c| c < min_features_per_frame).count();
    sparse as f64 / masked_counts.len() as f64 <= max_sparse_fraction
}

// ---------------------------------------------------------------------------
// Triangulation

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulated {
    pub point: Vector3<f64>,
    pub mean_reprojection_error: f64,
}

pub(crate) fn pose_for(poses: &[CameraPose], frame: usize) -> Option<&CameraPose> {
    match poses.get(frame) {
        Some(p) if p.frame == frame => Some(p),
        _ => poses
            .binary_search_by_key(&frame, |p| p.frame)
            .ok()
            .map(|i| &poses[i]),
    }
}

/// Linear least-squares multi-view triangulation in normalized image
/// coordinates, followed by depth and reprojection checks.
pub fn triangulate(track: &FeatureTrack, poses: &[CameraPose], reproj_threshold: f64, min_angle_deg: f64) -> Result<Triangulated> {
    let views: Vec<(&CameraPose, &PixelPoint)> = track
        .observations
        .iter()
        .filter_map(|(&f, p)| pose_for(poses, f).map(|pose| (pose, p)))
        .collect();
    if views.len() < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "feature {} has {} posed observations",
            track.id,
            views.len()
        )));
    }

    let rays: Vec<Vector3<f64>> = views.iter().map(|(pose, p)| pose.ray_direction(p)).collect();
    let mut max_angle = 0f64;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            max_angle = max_angle.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    if max_angle.to_degrees() < min_angle_deg {
        return Err(Error::DegenerateGeometry(format!(
            "feature {}: maximum ray angle {:.4} deg below {min_angle_deg} deg",
            track.id,
            max_angle.to_degrees()
        )));
    }

    let mut a = DMatrix::<f64>::zeros(2 * views.len(), 4);
    for (i, (pose, p)) in views.iter().enumerate() {
        let (x, y) = pose.intrinsics.normalize(p);
        let r = &pose.rotation;
        let t = &pose.translation;
        let row = |k: usize| [r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]];
        let (p0, p1, p2) = (row(0), row(1), row(2));
        for k in 0..4 {
            a[(2 * i, k)] = x * p2[k] - p0[k];
            a[(2 * i + 1, k)] = y * p2[k] - p1[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("svd did not converge".into()))?;
    let smallest = svd.singular_values.argmin().0;
    let h = v_t.row(smallest);
    if h[3].abs() <= f64::EPSILON * h.amax() {
        return Err(Error::DegenerateGeometry(format!("feature {} triangulates to infinity", track.id)));
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let mut total = 0.0;
    for (pose, p) in &views {
        let proj = pose
            .project(&point)
            .map_err(|_| Error::DegenerateGeometry(format!("feature {} lies behind a camera", track.id)))?;
        total += proj.pixel.distance_squared(p).sqrt();
    }
    let err = total / views.len() as f64;
    if err > reproj_threshold {
        return Err(Error::HighReprojectionError {
            error: err,
            threshold: reproj_threshold,
        });
    }
    Ok(Triangulated {
        point,
        mean_reprojection_error: err,
    })
}

/// Triangulates every track in place, returning how many succeeded.
pub fn triangulate_all(features: &mut [FeatureTrack], poses: &[CameraPose], config: &LocalizeConfig) -> usize {
    use rayon::prelude::*;
    features
        .par_iter_mut()
        .map(|f| {
            f.world = triangulate(f, poses, config.reproj_threshold, config.min_angle_deg)
                .ok()
                .map(|t| t.point);
            f.world.is_some() as usize
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Feature-to-fruit association and localization

/// Maps fruit id → associated feature ids. A feature belongs to a fruit when
/// it lies inside the fruit's box in a strict majority of their co-visible
/// frames; competing fruits are ranked by that ratio, then by mean distance
/// to the fruit centroid, then by id.
pub fn associate_features(features: &[FeatureTrack], fruits: &[FruitTrack]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_frame: BTreeMap<usize, Vec<(usize, &Region)>> = BTreeMap::new();
    for (idx, t) in fruits.iter().enumerate() {
        for (&f, r) in t.observations() {
            by_frame.entry(f).or_default().push((idx, r));
        }
    }
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for feat in features {
        // fruit index → (inside count, summed distance while inside)
        let mut hits: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for (&frame, p) in &feat.observations {
            if let Some(list) = by_frame.get(&frame) {
                for &(idx, region) in list {
                    if region.bbox.contains(p) {
                        let e = hits.entry(idx).or_insert((0, 0.0));
                        e.0 += 1;
                        e.1 += region.centroid.distance_squared(p).sqrt();
                    }
                }
            }
        }
        let mut best: Option<(f64, f64, usize)> = None;
        for (&idx, &(inside, dist_sum)) in &hits {
            let obs = fruits[idx].observations();
            let covisible = feat.observations.keys().filter(|f| obs.contains_key(f)).count();
            if 2 * inside <= covisible {
                continue;
            }
            let ratio = inside as f64 / covisible as f64;
            let dist = dist_sum / inside as f64;
            let better = match best {
                None => true,
                Some((br, bd, _)) => ratio > br || (ratio == br && dist < bd),
            };
            if better {
                best = Some((ratio, dist, idx));
            }
        }
        if let Some((_, _, idx)) = best {
            out.entry(fruits[idx].id).or_default().push(feat.id);
        }
    }
    out
}

/// Places a fruit at the mean of its triangulated features and records its
/// per-frame depth and raw size. The size is left unnormalized
/// (`rel_size == raw_size`) until [`normalize_sizes`].
pub fn localize_fruit(fruit: &FruitTrack, features: &[&FeatureTrack], poses: &[CameraPose]) -> Fruit3D {
    let pts: Vec<Vector3<f64>> = features.iter().filter_map(|f| f.world).collect();
    if pts.is_empty() {
        return Fruit3D::unlocalized(fruit.id);
    }
    let position = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut depths = BTreeMap::new();
    let mut sizes = Vec::new();
    for (&frame, region) in fruit.observations() {
        let Some(pose) = pose_for(poses, frame) else { continue };
        let z = pose.to_camera(&position).z;
        if z > 0.0 {
            depths.insert(frame, z);
            sizes.push(region.area as f64 * z * z);
        }
    }
    let Some(raw) = median(sizes) else {
        return Fruit3D::unlocalized(fruit.id);
    };
    Fruit3D {
        track_id: fruit.id,
        position: Some(position),
        depths,
        raw_size: raw,
        rel_size: raw,
        flags: Default::default(),
    }
}

/// Divides every localized fruit's raw size by the mean raw size of the
/// localized fruits that carry no flag.
pub fn normalize_sizes(fruits: &mut [Fruit3D]) -> Result<()> {
    let m = mean(fruits.iter().filter(|f| f.is_clean()).map(|f| f.raw_size)).ok_or(Error::NoLocalizedFruit)?;
    if !(m > 0.0) {
        return Err(Error::NoLocalizedFruit);
    }
    for f in fruits.iter_mut().filter(|f| f.is_localized()) {
        f.rel_size = f.raw_size / m;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Feature-track files: `id frame u v frame u v ...`, one track per line.

pub fn parse_feature_tracks(text: &str) -> Result<Vec<FeatureTrack>> {
    let mut tracks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::MalformedFeatures(format!("line {}: {what}", i + 1));
        let id: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad track id"))?;
        let rest: Vec<&str> = it.collect();
        if rest.is_empty() || rest.len() % 3 != 0 {
            return Err(bad("expected (frame, u, v) triplets"));
        }
        let mut obs = BTreeMap::new();
        let mut last: Option<usize> = None;
        for t in rest.chunks_exact(3) {
            let frame: usize = t[0].parse().map_err(|_| bad("bad frame"))?;
            let u: f64 = t[1].parse().map_err(|_| bad("bad u"))?;
            let v: f64 = t[2].parse().map_err(|_| bad("bad v"))?;
            if last.is_some_and(|l| frame <= l) {
                return Err(bad("frames must be strictly increasing"));
            }
            last = Some(frame);
            obs.insert(frame, PixelPoint::new(u, v));
        }
        tracks.push(FeatureTrack {
            id,
            observations: obs,
            world: None,
        });
    }
    Ok(tracks)
}

pub fn load_feature_tracks(path: &Path) -> Result<Vec<FeatureTrack>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_feature_tracks(&text)
}

pub fn write_feature_tracks(tracks: &[FeatureTrack], header_comment: Option<&str>, path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = header_comment {
        for l in c.lines() {
            let _ = writeln!(out, "# {l}");
        }
    }
    for t in tracks {
        let _ = write!(out, "{}", t.id);
        for (f, p) in &t.observations {
            let _ = write!(out, " {f} {} {}", p.u, p.v);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Box of a fruit's region translated to a new center (helper for tests and
/// the simulator).
pub fn box_around(center: PixelPoint, half_height: f64, half_width: f64) -> BoundingBox {
    BoundingBox::new(
        center.u - half_height,
        center.v - half_width,
        center.u + half_height,
        center.v + half_width,
    )
}
