//! Count correction: duplicate merging, size outliers, depth outliers.
//!
//! Passes run in a fixed order (duplicates, size, depth) and each pass only
//! considers fruits left unflagged by the earlier ones, so every fruit ends
//! with at most one rejection flag.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::normalize_sizes;
use crate::model::{Fruit3D, FruitFlag, FruitTrack, RejectionTally};
use crate::stats::{mean, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    pub size_lower: f64,
    pub size_upper: f64,
    pub depth_factor: f64,
    /// Multiple of the median nearest-neighbor distance between fruits.
    pub merge_radius_factor: f64,
    /// Absolute merge radius in reconstruction units; overrides the factor.
    pub merge_radius_abs: Option<f64>,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            size_lower: 0.5,
            size_upper: 4.0,
            depth_factor: 1.5,
            merge_radius_factor: 0.5,
            merge_radius_abs: None,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.size_lower > 0.0 && self.size_lower < self.size_upper) {
            return Err(Error::Config(format!(
                "correct.size_lower/size_upper must satisfy 0 < lower < upper, got {} and {}",
                self.size_lower, self.size_upper
            )));
        }
        if !(self.depth_factor > 1.0) {
            return Err(Error::Config(format!("correct.depth_factor must exceed 1, got {}", self.depth_factor)));
        }
        if !(self.merge_radius_factor > 0.0) {
            return Err(Error::Config("correct.merge_radius_factor must be positive".into()));
        }
        if self.merge_radius_abs.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::Config("correct.merge_radius_abs must be positive".into()));
        }
        Ok(())
    }
}

/// Median distance from each localized fruit to its nearest localized neighbor.
pub fn median_nearest_neighbor(fruits: &[Fruit3D]) -> Option<f64> {
    let pts: Vec<_> = fruits.iter().filter_map(|f| f.position).collect();
    if pts.len() < 2 {
        return None;
    }
    let nn = pts.iter().enumerate().map(|(i, p)| {
        pts.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    });
    median(nn)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-link clustering over localized fruits within `radius`, linking
/// only pairs of tracks that are never visible in the same frame. Within a
/// cluster the longest track survives (lower id on ties); the rest are
/// flagged `Duplicate`. Fruits already flagged are left out.
pub fn merge_duplicates(fruits: &mut [Fruit3D], tracks: &[FruitTrack], radius: f64) -> usize {
    let by_id: BTreeMap<usize, &FruitTrack> = tracks.iter().map(|t| (t.id, t)).collect();
    let cand: Vec<usize> = (0..fruits.len()).filter(|&i| fruits[i].is_clean()).collect();
    let mut parent: Vec<usize> = (0..cand.len()).collect();
    for a in 0..cand.len() {
        for b in a + 1..cand.len() {
            let (fa, fb) = (&fruits[cand[a]], &fruits[cand[b]]);
            let (Some(pa), Some(pb)) = (fa.position, fb.position) else { continue };
            if (pa - pb).norm() > radius {
                continue;
            }
            let covisible = match (by_id.get(&fa.track_id), by_id.get(&fb.track_id)) {
                (Some(ta), Some(tb)) => ta.overlaps_in_time(tb),
                _ => true,
            };
            if !covisible {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let age = |i: usize| by_id.get(&fruits[cand[i]].track_id).map_or(0, |t| t.age());
    let mut survivor: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..cand.len() {
        let root = find(&mut parent, i);
        let better = match survivor.get(&root) {
            None => true,
            Some(&s) => {
                let (ai, as_) = (age(i), age(s));
                ai > as_ || (ai == as_ && fruits[cand[i]].track_id < fruits[cand[s]].track_id)
            }
        };
        if better {
            survivor.insert(root, i);
        }
    }
    let mut flagged = 0;
    for i in 0..cand.len() {
        let root = find(&mut parent, i);
        if survivor[&root] != i {
            fruits[cand[i]].flags.insert(FruitFlag::Duplicate);
            flagged += 1;
        }
    }
    flagged
}

/// Flags unflagged localized fruits whose relative size lies outside
/// `[lower, upper]`. Bounds are inclusive.
pub fn reject_size_outliers(fruits: &mut [Fruit3D], lower: f64, upper: f64) -> usize {
    let mut n = 0;
    for f in fruits.iter_mut().filter(|f| f.is_clean()) {
        if f.rel_size < lower || f.rel_size > upper {
            f.flags.insert(FruitFlag::SizeOutlier);
            n += 1;
        }
    }
    n
}

/// Flags unflagged fruits whose median depth exceeds `factor` times the mean
/// median depth of the unflagged cohort.
pub fn reject_depth_outliers(fruits: &mut [Fruit3D], factor: f64) -> usize {
    let Some(m) = mean(fruits.iter().filter(|f| f.is_clean()).filter_map(|f| f.representative_depth())) else {
        return 0;
    };
    let threshold = factor * m;
    let mut n = 0;
    for f in fruits.iter_mut().filter(|f| f.is_clean()) {
        if f.representative_depth().is_some_and(|d| d > threshold) {
            f.flags.insert(FruitFlag::DepthOutlier);
            n += 1;
        }
    }
    n
}

/// Per-flag tallies over the rejection flags.
pub fn tally(fruits: &[Fruit3D]) -> RejectionTally {
    let mut t = RejectionTally::default();
    for f in fruits {
        for flag in &f.flags {
            match flag {
                FruitFlag::Duplicate => t.duplicate += 1,
                FruitFlag::SizeOutlier => t.size_outlier += 1,
                FruitFlag::DepthOutlier => t.depth_outlier += 1,
                FruitFlag::Unlocalized => t.unlocalized += 1,
            }
        }
    }
    t
}

/// `raw − duplicates − size outliers − depth outliers`, floored at zero.
pub fn corrected_count(raw: usize, tally: &RejectionTally) -> usize {
    raw.saturating_sub(tally.duplicate + tally.size_outlier + tally.depth_outlier)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub merge_radius: Option<f64>,
    pub tally: RejectionTally,
}

/// Runs every pass from a clean slate. `Unlocalized` survives the reset;
/// all other flags are recomputed, so repeated calls give the same result.
pub fn apply_corrections(fruits: &mut [Fruit3D], tracks: &[FruitTrack], config: &CorrectionConfig) -> CorrectionOutcome {
    for f in fruits.iter_mut() {
        f.flags.retain(|fl| *fl == FruitFlag::Unlocalized);
        f.rel_size = f.raw_size;
    }
    let radius = config
        .merge_radius_abs
        .or_else(|| median_nearest_neighbor(fruits).map(|d| d * config.merge_radius_factor));
    if let Some(r) = radius {
        merge_duplicates(fruits, tracks, r);
    }
    if normalize_sizes(fruits).is_ok() {
        reject_size_outliers(fruits, config.size_lower, config.size_upper);
    }
    reject_depth_outliers(fruits, config.depth_factor);
    CorrectionOutcome {
        merge_radius: radius,
        tally: tally(fruits),
    }
}
