//! Domain types shared by every pipeline stage.
//!
//! Pixel coordinates are `(u, v)` = `(row, column)` everywhere, including
//! every file format this crate reads or writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue floor tolerated when validating covariance matrices.
pub const PSD_FLOOR: f64 = -1e-9;
/// Orthonormality tolerance for camera rotations.
pub const ROTATION_TOL: f64 = 1e-6;
const MIN_DEPTH: f64 = 1e-9;

/// A pixel location, `u` = row and `v` = column.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance_squared(&self, other: &PixelPoint) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }
}

/// An 8-bit raster. `channels` is 1 for intensity images and masks, 3 for RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl FrameImage {
    pub fn new(index: usize, width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty raster {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Image(format!(
                "raster length {} does not match {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        Ok(Self {
            index,
            width,
            height,
            channels,
            pixels,
        })
    }

    /// A single-channel image filled with `value`.
    pub fn filled(index: usize, width: usize, height: usize, value: u8) -> Self {
        Self {
            index,
            width,
            height,
            channels: 1,
            pixels: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[(row * self.width + col) * self.channels]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        let i = (row * self.width + col) * self.channels;
        self.pixels[i..i + self.channels].fill(value);
    }

    /// Collapses an RGB raster to luma; single-channel images are returned as-is.
    pub fn to_gray(&self) -> FrameImage {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        FrameImage {
            index: self.index,
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    pub fn same_dimensions(&self, other: &FrameImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Axis-aligned rectangle in continuous pixel coordinates. Pixel centers sit
/// on integer coordinates, so pixel `(r, c)` covers `[r-0.5, r+0.5) x
/// [c-0.5, c+0.5)` and the box of rows `10..=12` spans `9.5..12.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: f64,
    pub col_min: f64,
    pub row_max: f64,
    pub col_max: f64,
}

impl BoundingBox {
    /// Box covering the inclusive pixel index ranges.
    pub fn from_pixel_span(row_first: usize, col_first: usize, row_last: usize, col_last: usize) -> Self {
        Self::new(
            row_first as f64 - 0.5,
            col_first as f64 - 0.5,
            row_last as f64 + 0.5,
            col_last as f64 + 0.5,
        )
    }

    pub fn new(row_min: f64, col_min: f64, row_max: f64, col_max: f64) -> Self {
        Self {
            row_min,
            col_min,
            row_max,
            col_max,
        }
    }

    pub fn height(&self) -> f64 {
        (self.row_max - self.row_min).max(0.0)
    }

    pub fn width(&self) -> f64 {
        (self.col_max - self.col_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.height() * self.width()
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(0.5 * (self.row_min + self.row_max), 0.5 * (self.col_min + self.col_max))
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= self.row_min && p.u <= self.row_max && p.v >= self.col_min && p.v <= self.col_max
    }

    pub fn translated(&self, du: f64, dv: f64) -> Self {
        Self::new(self.row_min + du, self.col_min + dv, self.row_max + du, self.col_max + dv)
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self::new(
            self.row_min - margin,
            self.col_min - margin,
            self.row_max + margin,
            self.col_max + margin,
        )
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let h = self.row_max.min(other.row_max) - self.row_min.max(other.row_min);
        let w = self.col_max.min(other.col_max) - self.col_min.max(other.col_min);
        if h <= 0.0 || w <= 0.0 {
            0.0
        } else {
            h * w
        }
    }
}

/// One candidate fruit detection in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub frame: usize,
    pub centroid: PixelPoint,
    pub bbox: BoundingBox,
    /// Pixel count of the connected component.
    pub area: usize,
}

/// Kalman state `[u, v, du, dv]` with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
}

impl TrackState {
    pub fn new(x: Vector4<f64>, p: Matrix4<f64>) -> Self {
        Self { x, p }
    }

    pub fn position(&self) -> PixelPoint {
        PixelPoint::new(self.x[0], self.x[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.x[2], self.x[3])
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        validate_covariance(&self.p)
    }
}

/// Checks symmetry and positive semi-definiteness (with [`PSD_FLOOR`]).
pub fn validate_covariance(p: &Matrix4<f64>) -> std::result::Result<(), String> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err("covariance has non-finite entries".into());
    }
    let scale = p.amax().max(1.0);
    let asym = (p - p.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(format!("covariance asymmetric by {asym:e}"));
    }
    let sym = (p + p.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig < PSD_FLOOR * scale {
        return Err(format!("covariance has eigenvalue {min_eig:e}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Tracked,
    Counted,
    Lost,
}

impl TrackStatus {
    /// Allowed moves: Tentative→Tracked→Counted, and anything→Lost.
    /// Counted is reached from Lost when an ended track passes the age gate.
    pub fn can_become(self, next: TrackStatus) -> bool {
        use TrackStatus::*;
        matches!(
            (self, next),
            (Tentative, Tracked) | (Tracked, Counted) | (Lost, Counted) | (_, Lost)
        ) || self == next
    }
}

/// A fruit hypothesis carried across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FruitTrack {
    pub id: usize,
    observations: BTreeMap<usize, Region>,
    pub state: TrackState,
    status: TrackStatus,
}

impl FruitTrack {
    pub fn new(id: usize, first: Region, state: TrackState) -> Self {
        let mut observations = BTreeMap::new();
        observations.insert(first.frame, first);
        Self {
            id,
            observations,
            state,
            status: TrackStatus::Tentative,
        }
    }

    /// Rebuilds a track from stored observations (used by readers and tests).
    pub fn from_observations(
        id: usize,
        observations: impl IntoIterator<Item = Region>,
        state: TrackState,
        status: TrackStatus,
    ) -> Option<Self> {
        let observations: BTreeMap<_, _> = observations.into_iter().map(|r| (r.frame, r)).collect();
        if observations.is_empty() {
            return None;
        }
        Some(Self {
            id,
            observations,
            state,
            status,
        })
    }

    pub fn observations(&self) -> &BTreeMap<usize, Region> {
        &self.observations
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    pub fn age(&self) -> usize {
        self.observations.len()
    }

    pub fn first_frame(&self) -> usize {
        *self.observations.keys().next().expect("track has observations")
    }

    pub fn last_frame(&self) -> usize {
        *self.observations.keys().next_back().expect("track has observations")
    }

    pub fn last_region(&self) -> &Region {
        self.observations.values().next_back().expect("track has observations")
    }

    /// Appends a detection from a later frame.
    pub(crate) fn absorb(&mut self, region: Region) {
        debug_assert!(region.frame > self.last_frame());
        self.observations.insert(region.frame, region);
        if self.status == TrackStatus::Tentative && self.age() >= 2 {
            self.status = TrackStatus::Tracked;
        }
    }

    pub(crate) fn set_status(&mut self, next: TrackStatus) {
        debug_assert!(self.status.can_become(next), "{:?} -> {:?}", self.status, next);
        self.status = next;
    }

    /// True when the two tracks share at least one frame of their spans.
    pub fn overlaps_in_time(&self, other: &FruitTrack) -> bool {
        self.first_frame() <= other.last_frame() && other.first_frame() <= self.last_frame()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub const fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Normalized image coordinates `(x, y)` with `x` along columns.
    pub fn normalize(&self, p: &PixelPoint) -> (f64, f64) {
        ((p.v - self.cx) / self.fx, (p.u - self.cy) / self.fy)
    }
}

/// Per-frame world→camera extrinsics plus shared intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub frame: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

/// Pixel position and camera-frame depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: PixelPoint,
    pub depth: f64,
}

impl CameraPose {
    pub fn new(frame: usize, rotation: Matrix3<f64>, translation: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOL {
            return Err(Error::NonOrthonormalRotation { frame, deviation });
        }
        Ok(Self {
            frame,
            rotation,
            translation,
            intrinsics,
        })
    }

    pub fn identity(frame: usize, intrinsics: Intrinsics) -> Self {
        Self {
            frame,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            intrinsics,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Pinhole projection: row = cy + fy·Y/Z, column = cx + fx·X/Z.
    pub fn project(&self, world: &Vector3<f64>) -> Result<Projection> {
        let c = self.to_camera(world);
        if c.z <= MIN_DEPTH {
            return Err(Error::NonPositiveDepth(c.z));
        }
        let k = &self.intrinsics;
        Ok(Projection {
            pixel: PixelPoint::new(k.cy + k.fy * c.y / c.z, k.cx + k.fx * c.x / c.z),
            depth: c.z,
        })
    }

    /// Inverse of [`CameraPose::project`] for a known depth.
    pub fn back_project(&self, pixel: &PixelPoint, depth: f64) -> Vector3<f64> {
        let (x, y) = self.intrinsics.normalize(pixel);
        let cam = Vector3::new(x * depth, y * depth, depth);
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Unit ray direction through `pixel`, in world coordinates.
    pub fn ray_direction(&self, pixel: &PixelPoint) -> Vector3<f64> {
        let (x, y) = self.intrinsics.normalize(pixel);
        (self.rotation.transpose() * Vector3::new(x, y, 1.0)).normalize()
    }
}

/// Max of `|RᵀR − I|` and `|det R − 1|`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Free-function form of [`CameraPose::project`].
pub fn project(point: &Vector3<f64>, pose: &CameraPose) -> Result<Projection> {
    pose.project(point)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FruitFlag {
    SizeOutlier,
    DepthOutlier,
    Duplicate,
    Unlocalized,
}

impl fmt::Display for FruitFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FruitFlag::SizeOutlier => "size_outlier",
            FruitFlag::DepthOutlier => "depth_outlier",
            FruitFlag::Duplicate => "duplicate",
            FruitFlag::Unlocalized => "unlocalized",
        };
        f.write_str(s)
    }
}

/// A counted track placed in the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Fruit3D {
    pub track_id: usize,
    /// `None` when no triangulated feature supports the fruit.
    pub position: Option<Vector3<f64>>,
    /// Camera-frame depth of `position` for each observation frame.
    pub depths: BTreeMap<usize, f64>,
    /// Median of pixel area × depth² before normalization.
    pub raw_size: f64,
    pub rel_size: f64,
    pub flags: BTreeSet<FruitFlag>,
}

impl Fruit3D {
    pub fn unlocalized(track_id: usize) -> Self {
        Self {
            track_id,
            position: None,
            depths: BTreeMap::new(),
            raw_size: 0.0,
            rel_size: 0.0,
            flags: BTreeSet::from([FruitFlag::Unlocalized]),
        }
    }

    pub fn is_localized(&self) -> bool {
        self.position.is_some() && !self.flags.contains(&FruitFlag::Unlocalized)
    }

    /// Localized and carrying no rejection flag.
    pub fn is_clean(&self) -> bool {
        self.is_localized() && self.flags.is_empty()
    }

    pub fn is_rejected(&self) -> bool {
        self.flags
            .iter()
            .any(|f| matches!(f, FruitFlag::Duplicate | FruitFlag::SizeOutlier | FruitFlag::DepthOutlier))
    }

    /// Median camera-frame depth over observation frames.
    pub fn representative_depth(&self) -> Option<f64> {
        crate::stats::median(self.depths.values().copied())
    }
}

/// Per-flag rejection tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionTally {
    pub duplicate: usize,
    pub size_outlier: usize,
    pub depth_outlier: usize,
    pub unlocalized: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub segment_id: String,
    pub raw_count: usize,
    pub corrected_count: usize,
    pub ground_truth: Option<usize>,
    pub l1_raw: Option<usize>,
    pub l1_corrected: Option<usize>,
    pub rejected: RejectionTally,
}

impl CountReport {
    pub fn new(segment_id: impl Into<String>, raw: usize, corrected: usize, truth: Option<usize>, rejected: RejectionTally) -> Self {
        debug_assert!(corrected <= raw);
        Self {
            segment_id: segment_id.into(),
            raw_count: raw,
            corrected_count: corrected,
            ground_truth: truth,
            l1_raw: truth.map(|t| raw.abs_diff(t)),
            l1_corrected: truth.map(|t| corrected.abs_diff(t)),
            rejected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, UnitQuaternion};
    use proptest::prelude::*;

    const K: Intrinsics = Intrinsics::new(100.0, 100.0, 320.0, 240.0);

    #[test]
    fn project_on_axis_hits_principal_point() {
        let pose = CameraPose::identity(0, K);
        let p = project(&Vector3::new(0.0, 0.0, 5.0), &pose).unwrap();
        assert_eq!(p.pixel, PixelPoint::new(240.0, 320.0));
        assert_eq!(p.depth, 5.0);
    }

    #[test]
    fn project_offset_moves_column() {
        let pose = CameraPose::identity(0, K);
        let p = project(&Vector3::new(1.0, 0.0, 5.0), &pose).unwrap();
        assert_eq!(p.pixel.v, 340.0);
        assert_eq!(p.pixel.u, 240.0);
        assert_eq!(p.depth, 5.0);
    }

    #[test]
    fn project_behind_camera_fails() {
        let pose = CameraPose::identity(0, K);
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &pose),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn reflection_is_rejected() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            CameraPose::new(3, r, Vector3::zeros(), K),
            Err(Error::NonOrthonormalRotation { frame: 3, .. })
        ));
    }

    #[test]
    fn box_geometry() {
        let a = BoundingBox::new(9.5, 9.5, 12.5, 12.5);
        assert_eq!(a.area(), 9.0);
        assert_eq!(a.center(), PixelPoint::new(11.0, 11.0));
        let b = a.translated(1.0, 2.0);
        assert_eq!(a.intersection_area(&b), 2.0);
        assert_eq!(a.intersection_area(&a.translated(10.0, 0.0)), 0.0);
    }

    #[test]
    fn status_transitions() {
        use TrackStatus::*;
        assert!(Tentative.can_become(Tracked));
        assert!(Tracked.can_become(Counted));
        assert!(Tentative.can_become(Lost));
        assert!(!Counted.can_become(Tracked));
        assert!(!Tentative.can_become(Counted));
    }

    #[test]
    fn covariance_validator() {
        assert!(validate_covariance(&Matrix4::identity()).is_ok());
        let mut asym = Matrix4::identity();
        asym[(0, 1)] = 0.5;
        assert!(validate_covariance(&asym).is_err());
        let neg = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -0.1));
        assert!(validate_covariance(&neg).is_err());
    }

    proptest! {
        #[test]
        fn project_then_back_project_round_trips(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
            tx in -10.0f64..10.0, ty in -10.0f64..10.0, tz in -10.0f64..10.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, depth in 0.5f64..50.0,
        ) {
            let rotation = *Rotation3::from_scaled_axis(Vector3::new(ax, ay, az)).matrix();
            let pose = CameraPose::new(0, rotation, Vector3::new(tx, ty, tz), K).unwrap();
            let cam = Vector3::new(px * depth, py * depth, depth);
            let world = rotation.transpose() * (cam - pose.translation);
            let proj = pose.project(&world).unwrap();
            prop_assert!((proj.depth - depth).abs() < 1e-9 * depth.max(1.0));
            let back = pose.back_project(&proj.pixel, proj.depth);
            prop_assert!((back - world).amax() < 1e-9 * world.amax().max(1.0));
        }

        #[test]
        fn quaternion_rotations_are_valid(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-3);
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
            let r = *q.to_rotation_matrix().matrix();
            prop_assert!(CameraPose::new(0, r, Vector3::zeros(), K).is_ok());
            assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-9);
        }
    }
}
