//! Frame-to-frame fruit tracking and age-gated counting.
//!
//! Each step flows every active track's center from frame `k` into `k+1`,
//! corrects the flow with the Kalman filter, matches the corrected
//! predictions against the detections of frame `k+1`, and re-initializes
//! every surviving track on its new detection.

pub mod kalman;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::assign::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::flow::{mean_flow, FlowProvider, FlowVector};
use crate::model::{BoundingBox, FruitTrack, PixelPoint, Region, TrackState, TrackStatus};
use crate::stats::median;

pub use kalman::{observation, predict, transition, update, KalmanConfig, KalmanDiagonals};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 4],
    pub p0_diag: [f64; 4],
    /// Matches costing more than this are rejected.
    pub gate: f64,
    pub age_fraction: f64,
    pub min_count_age: usize,
    /// Fixed overlap length in frames; estimated from flow when absent.
    pub overlap_frames: Option<usize>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        let d = KalmanDiagonals::default();
        Self {
            q_diag: d.q_diag,
            r_diag: d.r_diag,
            p0_diag: d.p0_diag,
            gate: 0.8,
            age_fraction: 0.3333,
            min_count_age: 2,
            overlap_frames: None,
        }
    }
}

impl TrackerConfig {
    pub fn kalman(&self) -> KalmanConfig {
        KalmanConfig::from_diagonals(self.q_diag, self.r_diag, self.p0_diag)
    }

    pub fn validate(&self) -> Result<()> {
        self.kalman().validate().map_err(Error::Config)?;
        if !(self.gate >= 0.0) {
            return Err(Error::Config(format!("tracker.gate must be >= 0, got {}", self.gate)));
        }
        if !(self.age_fraction > 0.0 && self.age_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tracker.age_fraction must lie in (0, 1], got {}",
                self.age_fraction
            )));
        }
        if self.min_count_age == 0 || self.overlap_frames == Some(0) {
            return Err(Error::Config("tracker.min_count_age and tracker.overlap_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// `max(min_count_age, round(age_fraction × overlap_frames))`.
pub fn age_threshold(overlap_frames: usize, age_fraction: f64, min_count_age: usize) -> usize {
    let scaled = (age_fraction * overlap_frames as f64).round() as usize;
    scaled.max(min_count_age)
}

/// Estimates how many frames a typical point stays in view from per-frame
/// flow samples: the travel axis is the one with the larger median motion,
/// and each frame contributes `extent / median |flow|` along that axis.
pub fn estimate_overlap_frames(per_frame_flows: &[Vec<FlowVector>], width: usize, height: usize) -> Option<usize> {
    let valid = || per_frame_flows.iter().flatten().filter(|f| f.valid);
    let med_u = median(valid().map(|f| f.du.abs()))?;
    let med_v = median(valid().map(|f| f.dv.abs()))?;
    let (along_columns, extent) = if med_v >= med_u {
        (true, width as f64)
    } else {
        (false, height as f64)
    };
    let per_frame = per_frame_flows.iter().filter_map(|flows| {
        let m = median(
            flows
                .iter()
                .filter(|f| f.valid)
                .map(|f| if along_columns { f.dv.abs() } else { f.du.abs() }),
        )?;
        (m > 1e-6).then(|| extent / m)
    });
    let frames = median(per_frame)?;
    Some((frames.round() as usize).max(1))
}

/// Share of the smaller box covered by the intersection.
pub fn overlap_fraction(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let smaller = a.area().min(b.area());
    if smaller <= 0.0 {
        return 0.0;
    }
    (a.intersection_area(b) / smaller).clamp(0.0, 1.0)
}

/// `‖p̂ − p‖² / (a_i + a_j) + (1 − λ)`.
pub fn pair_cost(predicted: &PixelPoint, track_area: f64, detection: &PixelPoint, detection_area: f64, overlap: f64) -> f64 {
    debug_assert!(track_area + detection_area > 0.0);
    debug_assert!((0.0..=1.0).contains(&overlap));
    predicted.distance_squared(detection) / (track_area + detection_area) + (1.0 - overlap)
}

/// Measurement `[u + d_u, v + d_v, mean d_u, mean d_v]`.
pub fn build_measurement(flow: &FlowVector, p: &PixelPoint, prev_mean_flow: (f64, f64)) -> Vector4<f64> {
    Vector4::new(p.u + flow.du, p.v + flow.dv, prev_mean_flow.0, prev_mean_flow.1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub frame: usize,
    pub matched: usize,
    pub created: usize,
    pub counted: usize,
    pub discarded: usize,
    pub invalid_flows: usize,
}

/// Single-owner track store.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    kalman: KalmanConfig,
    age_threshold: usize,
    active: Vec<FruitTrack>,
    counted: Vec<FruitTrack>,
    discarded: usize,
    next_id: usize,
    prev_mean_flow: (f64, f64),
    frame: Option<usize>,
    finished: bool,
}

impl Tracker {
    pub fn new(config: TrackerConfig, age_threshold: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            kalman: config.kalman(),
            config,
            age_threshold: age_threshold.max(1),
            active: Vec::new(),
            counted: Vec::new(),
            discarded: 0,
            next_id: 0,
            prev_mean_flow: (0.0, 0.0),
            frame: None,
            finished: false,
        })
    }

    pub fn age_threshold(&self) -> usize {
        self.age_threshold
    }

    pub fn active(&self) -> &[FruitTrack] {
        &self.active
    }

    pub fn counted(&self) -> &[FruitTrack] {
        &self.counted
    }

    pub fn into_counted(self) -> Vec<FruitTrack> {
        self.counted
    }

    pub fn discarded(&self) -> usize {
        self.discarded
    }

    pub fn total_created(&self) -> usize {
        self.next_id
    }

    pub fn prev_mean_flow(&self) -> (f64, f64) {
        self.prev_mean_flow
    }

    fn spawn(&mut self, region: Region, velocity: (f64, f64)) {
        let state = self.initial_state(&region, velocity);
        self.active.push(FruitTrack::new(self.next_id, region, state));
        self.next_id += 1;
    }

    fn initial_state(&self, region: &Region, velocity: (f64, f64)) -> TrackState {
        TrackState::new(
            Vector4::new(region.centroid.u, region.centroid.v, velocity.0, velocity.1),
            self.kalman.p0,
        )
    }

    fn retire(&mut self, mut track: FruitTrack) -> bool {
        track.set_status(TrackStatus::Lost);
        if track.age() >= self.age_threshold {
            track.set_status(TrackStatus::Counted);
            self.counted.push(track);
            true
        } else {
            self.discarded += 1;
            false
        }
    }

    /// Starts tracks on the first frame's detections.
    pub fn initialize(&mut self, regions: &[Region]) {
        assert!(self.frame.is_none(), "tracker already initialized");
        self.frame = Some(regions.first().map_or(0, |r| r.frame));
        for r in regions {
            self.spawn(r.clone(), (0.0, 0.0));
        }
    }

    /// Advances from frame `k` to `frame`, whose detections are `regions`.
    /// `flow` yields flow from frame `k` into `frame`.
    pub fn step(&mut self, frame: usize, regions: &[Region], flow: &dyn FlowProvider) -> Result<StepReport> {
        assert!(!self.finished, "tracker already finished");
        if self.frame.is_none() {
            self.frame = Some(frame);
            for r in regions {
                self.spawn(r.clone(), (0.0, 0.0));
            }
            return Ok(StepReport {
                frame,
                created: regions.len(),
                ..Default::default()
            });
        }
        debug_assert!(regions.iter().all(|r| r.frame == frame));
        let mut report = StepReport {
            frame,
            ..Default::default()
        };

        // (1) flow at each track center, seeded with the track velocity
        let points: Vec<PixelPoint> = self.active.iter().map(|t| t.last_region().centroid).collect();
        let guesses: Vec<(f64, f64)> = self.active.iter().map(|t| t.state.velocity()).collect();
        let flows = if points.is_empty() {
            Vec::new()
        } else {
            flow.flows(&points, &guesses)?
        };
        let current_mean = mean_flow(&flows);
        report.invalid_flows = flows.iter().filter(|f| !f.valid).count();

        // (2) Kalman-corrected predictions
        let h = observation();
        let mut predicted = Vec::with_capacity(self.active.len());
        for (track, f) in self.active.iter_mut().zip(&flows) {
            let prior = predict(&track.state, &self.kalman.q);
            let posterior = if f.valid {
                let z = build_measurement(f, &track.last_region().centroid, self.prev_mean_flow);
                update(&prior, &z, &self.kalman.r, &h)?
            } else {
                prior
            };
            predicted.push(posterior.position());
            track.state = posterior;
        }

        // (3) cost matrix and (4) assignment
        let mut costs = Vec::with_capacity(self.active.len() * regions.len());
        for (track, p_hat) in self.active.iter().zip(&predicted) {
            let last = track.last_region();
            let moved = last.bbox.translated(p_hat.u - last.centroid.u, p_hat.v - last.centroid.v);
            for det in regions {
                let lambda = overlap_fraction(&moved, &det.bbox);
                costs.push(pair_cost(p_hat, last.bbox.area(), &det.centroid, det.bbox.area(), lambda));
            }
        }
        let matrix = CostMatrix::new(self.active.len(), regions.len(), costs, self.config.gate)?;
        let assignment = solve_assignment(&matrix);

        // (5)-(7) lifecycle
        let mut tracks: Vec<Option<FruitTrack>> = std::mem::take(&mut self.active).into_iter().map(Some).collect();
        let mut survivors = Vec::with_capacity(assignment.matches.len());
        for &(row, col) in &assignment.matches {
            let mut t = tracks[row].take().expect("row matched once");
            t.absorb(regions[col].clone());
            survivors.push(t);
        }
        report.matched = survivors.len();
        for t in tracks.into_iter().flatten() {
            if self.retire(t) {
                report.counted += 1;
            } else {
                report.discarded += 1;
            }
        }
        self.active = survivors;
        for &col in &assignment.unmatched_cols {
            self.spawn(regions[col].clone(), current_mean);
        }
        report.created = assignment.unmatched_cols.len();

        // (8) re-initialize on the new detections
        let p0 = self.kalman.p0;
        for t in &mut self.active {
            let c = t.last_region().centroid;
            t.state = TrackState::new(Vector4::new(c.u, c.v, current_mean.0, current_mean.1), p0);
        }
        self.prev_mean_flow = current_mean;
        self.frame = Some(frame);
        Ok(report)
    }

    /// Ends the sequence: every active track is retired through the age gate.
    pub fn finish(&mut self) -> usize {
        if self.finished {
            return 0;
        }
        self.finished = true;
        let mut n = 0;
        for t in std::mem::take(&mut self.active) {
            if self.retire(t) {
                n += 1;
            }
        }
        n
    }
}
