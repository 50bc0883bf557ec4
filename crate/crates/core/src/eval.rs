//! Count error metrics: L1 loss and signed percentage error statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, population_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `Σ |estimate − truth|` over all segments.
    pub l1: usize,
    /// `(estimate − truth) / truth × 100`; `None` where the truth is zero.
    pub error_pct: BTreeMap<String, Option<f64>>,
    pub error_mean_pct: Option<f64>,
    /// Population standard deviation of the defined percentage errors.
    pub error_std_pct: Option<f64>,
}

pub fn signed_error_pct(estimate: usize, truth: usize) -> Option<f64> {
    (truth > 0).then(|| (estimate as f64 - truth as f64) / truth as f64 * 100.0)
}

/// Both maps must have the same segment keys. Segments with zero truth
/// count toward L1 but are left out of the percentage statistics.
pub fn evaluate(estimates: &BTreeMap<String, usize>, truth: &BTreeMap<String, usize>) -> Result<Evaluation> {
    if let Some(k) = estimates.keys().find(|k| !truth.contains_key(*k)) {
        return Err(Error::MissingSegment(k.clone()));
    }
    if let Some(k) = truth.keys().find(|k| !estimates.contains_key(*k)) {
        return Err(Error::MissingSegment(k.clone()));
    }
    let mut l1 = 0;
    let mut error_pct = BTreeMap::new();
    for (seg, &z) in estimates {
        let t = truth[seg];
        l1 += z.abs_diff(t);
        error_pct.insert(seg.clone(), signed_error_pct(z, t));
    }
    let defined: Vec<f64> = error_pct.values().flatten().copied().collect();
    Ok(Evaluation {
        l1,
        error_mean_pct: mean(defined.iter().copied()),
        error_std_pct: population_std(&defined),
        error_pct,
    })
}
