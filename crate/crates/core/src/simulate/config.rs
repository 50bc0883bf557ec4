use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Intrinsics;

/// Detection dropout injected into the masks (images are untouched).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Occlusion {
    #[default]
    None,
    /// Erases `gap_length` consecutive mask frames, centered in the visible
    /// span, for `affected_fraction` of the front-row fruits.
    DropoutGaps { gap_length: usize, affected_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub fruit_count_front: usize,
    pub fruit_count_back: usize,
    pub row_depth_front: f64,
    pub row_depth_back: f64,
    pub fruit_radius: f64,
    /// Radii are drawn uniformly from `fruit_radius × (1 ± radius_jitter)`.
    pub radius_jitter: f64,
    /// Lateral camera displacement per frame, world units.
    pub camera_speed: f64,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub occlusion: Occlusion,
    /// Frames a gapped fruit must stay detected on each side of its gap.
    pub gap_min_side: usize,
    /// Uniform per-pixel intensity noise amplitude.
    pub texture_noise: f64,
    /// Extra front-row detections with radius scaled by `oversized_scale`,
    /// as a fraction of `fruit_count_front`. They are not fruit and are
    /// excluded from ground-truth counts.
    pub oversized_fraction: f64,
    pub oversized_scale: f64,
    /// Same-row centers stay at least `min_separation × (r_i + r_j)` apart.
    pub min_separation: f64,
    pub background_depth: f64,
    pub feature_lifetime: usize,
    pub feature_spawn_interval: usize,
    pub features_per_spawn: usize,
    pub background_features_per_frame: usize,
    /// Gaussian pixel noise added to feature observations.
    pub feature_noise: f64,
    pub segments: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            fruit_count_front: 60,
            fruit_count_back: 0,
            row_depth_front: 5.0,
            row_depth_back: 12.5,
            fruit_radius: 0.12,
            radius_jitter: 0.1,
            camera_speed: 0.1,
            frame_count: 100,
            width: 640,
            height: 480,
            focal: 500.0,
            occlusion: Occlusion::None,
            gap_min_side: 24,
            texture_noise: 2.0,
            oversized_fraction: 0.0,
            oversized_scale: 2.5,
            min_separation: 1.25,
            background_depth: 20.0,
            feature_lifetime: 6,
            feature_spawn_interval: 2,
            features_per_spawn: 3,
            background_features_per_frame: 4,
            feature_noise: 0.0,
            segments: 1,
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(self.focal, self.focal, self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.row_depth_front > 0.0 && self.row_depth_back > 0.0 && self.background_depth > 0.0) {
            return bad("depths must be positive".into());
        }
        if self.background_depth <= self.row_depth_front.max(self.row_depth_back) {
            return bad("background_depth must lie behind both fruit rows".into());
        }
        if !(self.fruit_radius > 0.0) || !(0.0..1.0).contains(&self.radius_jitter) {
            return bad("fruit_radius must be positive and radius_jitter in [0, 1)".into());
        }
        if !(self.camera_speed >= 0.0) || !self.camera_speed.is_finite() {
            return bad("camera_speed must be finite and non-negative".into());
        }
        if self.frame_count < 2 || self.width < 8 || self.height < 8 || !(self.focal > 0.0) {
            return bad("need at least 2 frames, an 8x8 image and a positive focal length".into());
        }
        if let Occlusion::DropoutGaps { gap_length, affected_fraction } = self.occlusion {
            if gap_length < 1 || !(0.0..=1.0).contains(&affected_fraction) {
                return bad("dropout gap_length must be >= 1 and affected_fraction in [0, 1]".into());
            }
        }
        if !(0.0..=1.0).contains(&self.oversized_fraction) || !(self.oversized_scale > 0.0) {
            return bad("oversized_fraction must lie in [0, 1] with a positive scale".into());
        }
        if !(self.min_separation >= 1.0) {
            return bad("min_separation must be >= 1".into());
        }
        if self.feature_lifetime < 2 || self.feature_spawn_interval == 0 {
            return bad("feature_lifetime must be >= 2 and feature_spawn_interval >= 1".into());
        }
        if !(self.texture_noise >= 0.0 && self.feature_noise >= 0.0) {
            return bad("noise amplitudes must be non-negative".into());
        }
        if self.segments == 0 || self.segments > self.frame_count {
            return bad(format!("segments must lie in 1..={}", self.frame_count));
        }
        Ok(())
    }
}
