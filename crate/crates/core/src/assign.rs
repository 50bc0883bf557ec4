//! Minimum-cost bipartite assignment with gating.
//!
//! Rectangular problems are padded to square with dummy entries. Costs above
//! the gate are clamped to the gate before solving, which makes an over-gate
//! pairing exactly as attractive as leaving both sides unmatched; such pairs
//! are then reported as unmatched.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
    pub gate: f64,
}

impl CostMatrix {
    /// Row-major costs; every entry must be finite and non-negative.
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>, gate: f64) -> Result<Self> {
        assert_eq!(costs.len(), rows * cols, "cost buffer does not match {rows}x{cols}");
        if let Some(i) = costs.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::NonFiniteCost(i / cols.max(1), i % cols.max(1)));
        }
        if gate.is_nan() || gate < 0.0 {
            return Err(Error::NonFiniteCost(usize::MAX, usize::MAX));
        }
        Ok(Self { rows, cols, costs, gate })
    }

    pub fn from_rows(rows: &[Vec<f64>], gate: f64) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self::new(rows.len(), cols, rows.concat(), gate)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.costs[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Sum of matched costs, accumulated in row order.
    pub fn total_cost(&self, m: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, c)| m.get(r, c)).sum()
    }
}

/// Hungarian algorithm (shortest augmenting path with potentials), O(n³).
fn hungarian_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

pub fn solve_assignment(m: &CostMatrix) -> Assignment {
    let n = m.rows.max(m.cols);
    if n == 0 {
        return Assignment::default();
    }
    let gate = m.gate;
    let dummy = if gate.is_finite() { gate } else { 0.0 };
    let row_to_col = hungarian_square(n, |r, c| {
        if r < m.rows && c < m.cols {
            m.get(r, c).min(gate)
        } else {
            dummy
        }
    });

    let mut out = Assignment::default();
    let mut col_taken = vec![false; m.cols];
    for (r, &c) in row_to_col.iter().enumerate().take(m.rows) {
        if c < m.cols && m.get(r, c) <= gate {
            out.matches.push((r, c));
            col_taken[c] = true;
        } else {
            out.unmatched_rows.push(r);
        }
    }
    out.unmatched_cols = (0..m.cols).filter(|&c| !col_taken[c]).collect();
    out
}
