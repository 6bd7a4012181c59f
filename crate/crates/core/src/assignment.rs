//! Minimum-cost linear assignment (Kuhn–Munkres) and gated matching.
//!
//! The square solver is the shortest-augmenting-path form of the Hungarian
//! method with row/column potentials, `O(m³)`. Rectangular problems are padded
//! to square with a caller-chosen constant; gating is applied after the global
//! optimum is found.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A partial injection of rows into columns with its summed cost.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl AssignmentResult {
    fn from_pairs(cost: &Matrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
        Self { pairs, total_cost }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Column assigned to each row, if any.
    pub fn row_to_col(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for &(r, c) in &self.pairs {
            out[r] = Some(c);
        }
        out
    }
}

fn check_finite(cost: &Matrix) -> Result<()> {
    match cost.first_non_finite() {
        Some((row, col)) => Err(Error::NonFinite { row, col }),
        None => Ok(()),
    }
}

/// Perfect matching of minimum total cost on a square matrix.
pub fn hungarian_solve(cost: &Matrix) -> Result<AssignmentResult> {
    let (rows, cols) = cost.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    check_finite(cost)?;
    let assigned = solve_square(cost);
    Ok(AssignmentResult::from_pairs(
        cost,
        assigned.into_iter().enumerate().collect(),
    ))
}

/// Column index per row for a finite square matrix.
fn solve_square(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    if n == 0 {
        return Vec::new();
    }
    // 1-based bookkeeping: index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        min_slack.iter_mut().for_each(|s| *s = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assigned = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] != 0 {
            assigned[col_owner[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Pads an `m×k` problem to `max(m,k)²` with `pad_value`, solves it, and keeps
/// the pairs inside the original block.
pub fn solve_rectangular(cost: &Matrix, pad_value: f64) -> Result<AssignmentResult> {
    check_finite(cost)?;
    if !pad_value.is_finite() {
        return Err(Error::InvalidParameter {
            name: "pad_value",
            reason: "must be finite".into(),
        });
    }
    let (m, k) = cost.shape();
    let size = m.max(k);
    let square = if m == k {
        cost.clone()
    } else {
        let mut padded = Matrix::filled(size, size, pad_value);
        for r in 0..m {
            padded.row_mut(r)[..k].copy_from_slice(cost.row(r));
        }
        padded
    };
    let pairs = solve_square(&square)
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < m && c < k)
        .collect();
    Ok(AssignmentResult::from_pairs(cost, pairs))
}

/// Optimal assignment followed by removal of pairs costing more than
/// `threshold`.
pub fn match_with_threshold(cost: &Matrix, threshold: f64) -> Result<AssignmentResult> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold",
            reason: "must be positive".into(),
        });
    }
    let pad = pad_for(cost);
    let solved = solve_rectangular(cost, pad)?;
    let pairs = solved
        .pairs
        .into_iter()
        .filter(|&(r, c)| cost[(r, c)] <= threshold)
        .collect();
    Ok(AssignmentResult::from_pairs(cost, pairs))
}

/// A padding constant that never undercuts a real entry.
pub(crate) fn pad_for(cost: &Matrix) -> f64 {
    cost.as_slice().iter().copied().fold(0.0f64, f64::max) + 1.0
}
