//! Detection and trajectory tables shared by every tracker and metric.
//!
//! Row indices are 0-based in code. Frames are 1-based integers, `t ∈ [1, T]`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Trajectory label carried by clutter (false-positive) detections.
pub const CLUTTER: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub t: u32,
    pub label: Option<i64>,
}

impl Detection {
    pub fn new(x: f64, y: f64, t: u32) -> Self {
        Self { x, y, t, label: None }
    }

    pub fn labeled(x: f64, y: f64, t: u32, label: i64) -> Self {
        Self {
            x,
            y,
            t,
            label: Some(label),
        }
    }

    pub fn is_clutter(&self) -> bool {
        self.label == Some(CLUTTER)
    }
}

/// Ordered detections of one film.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionTable {
    pub rows: Vec<Detection>,
    pub frame_count: u32,
}

impl DetectionTable {
    /// Builds a table; `frame_count` is the largest frame seen.
    pub fn new(rows: Vec<Detection>) -> Self {
        let frame_count = rows.iter().map(|d| d.t).max().unwrap_or(0);
        Self { rows, frame_count }
    }

    pub fn with_frame_count(rows: Vec<Detection>, frame_count: u32) -> Self {
        let seen = rows.iter().map(|d| d.t).max().unwrap_or(0);
        Self {
            rows,
            frame_count: frame_count.max(seen),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when every row carries a label.
    pub fn is_labeled(&self) -> bool {
        self.rows.iter().all(|d| d.label.is_some())
    }

    pub fn labels(&self) -> Result<Vec<i64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(row, d)| d.label.ok_or(Error::MissingLabel { row }))
            .collect()
    }

    /// The same table with the label column removed.
    pub fn without_labels(&self) -> DetectionTable {
        DetectionTable {
            rows: self.rows.iter().map(|d| Detection { label: None, ..*d }).collect(),
            frame_count: self.frame_count,
        }
    }

    pub fn group_by_frame(&self) -> BTreeMap<u32, Vec<(usize, Detection)>> {
        let mut groups: BTreeMap<u32, Vec<(usize, Detection)>> = BTreeMap::new();
        for (i, d) in self.rows.iter().enumerate() {
            groups.entry(d.t).or_default().push((i, *d));
        }
        groups
    }

    /// Appends the label column `labels[p]` to row `p`.
    pub fn attach_labels(&self, labels: &[i64]) -> Result<DetectionTable> {
        if labels.len() != self.rows.len() {
            return Err(Error::LengthMismatch {
                expected: self.rows.len(),
                actual: labels.len(),
            });
        }
        Ok(DetectionTable {
            rows: self
                .rows
                .iter()
                .zip(labels)
                .map(|(d, &label)| Detection {
                    label: Some(label),
                    ..*d
                })
                .collect(),
            frame_count: self.frame_count,
        })
    }

    /// Splits a labeled table into one subset per label, each sorted by frame
    /// (stable, so equal frames keep row order). Clutter lands under [`CLUTTER`].
    pub fn split_by_label(&self) -> Result<BTreeMap<i64, LabeledSubset>> {
        let mut out: BTreeMap<i64, LabeledSubset> = BTreeMap::new();
        for (i, d) in self.rows.iter().enumerate() {
            let label = d.label.ok_or(Error::MissingLabel { row: i })?;
            let subset = out.entry(label).or_insert_with(|| LabeledSubset {
                indices: Vec::new(),
                table: DetectionTable {
                    rows: Vec::new(),
                    frame_count: self.frame_count,
                },
            });
            subset.indices.push(i);
            subset.table.rows.push(*d);
        }
        for subset in out.values_mut() {
            let mut order: Vec<usize> = (0..subset.indices.len()).collect();
            order.sort_by_key(|&k| subset.table.rows[k].t);
            subset.indices = order.iter().map(|&k| subset.indices[k]).collect();
            subset.table.rows = order.iter().map(|&k| subset.table.rows[k]).collect();
        }
        Ok(out)
    }
}

/// Detections sharing one label, with their row indices in the parent table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSubset {
    pub indices: Vec<usize>,
    pub table: DetectionTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub id: i64,
    pub t: u32,
    pub x: f64,
    pub y: f64,
}

/// Trajectories as `(id, t, x, y)` rows. Within one id frames strictly increase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackTable {
    rows: Vec<TrackPoint>,
}

impl TrackTable {
    /// Validates the per-id ordering invariant.
    pub fn new(rows: Vec<TrackPoint>) -> Result<Self> {
        let mut last: BTreeMap<i64, u32> = BTreeMap::new();
        for p in &rows {
            if let Some(&prev) = last.get(&p.id) {
                if p.t <= prev {
                    return Err(Error::UnorderedFrames { id: p.id, frame: p.t });
                }
            }
            last.insert(p.id, p.t);
        }
        Ok(Self { rows })
    }

    /// Sorts by (id, t) before validating, so only duplicate (id, t) pairs fail.
    pub fn from_unsorted(mut rows: Vec<TrackPoint>) -> Result<Self> {
        rows.sort_by(|a, b| a.id.cmp(&b.id).then(a.t.cmp(&b.t)));
        Self::new(rows)
    }

    pub fn empty() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn rows(&self) -> &[TrackPoint] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<TrackPoint> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn frame_count(&self) -> u32 {
        self.rows.iter().map(|p| p.t).max().unwrap_or(0)
    }

    /// Number of distinct trajectory ids.
    pub fn track_count(&self) -> usize {
        self.by_id().len()
    }

    /// Row indices per id, in frame order.
    pub fn by_id(&self) -> BTreeMap<i64, Vec<usize>> {
        let mut out: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.rows.iter().enumerate() {
            out.entry(p.id).or_default().push(i);
        }
        for idx in out.values_mut() {
            idx.sort_by_key(|&i| self.rows[i].t);
        }
        out
    }

    /// Row indices per frame.
    pub fn by_frame(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.rows.iter().enumerate() {
            out.entry(p.t).or_default().push(i);
        }
        out
    }

    /// Appends all rows of `other`, failing if an (id, t) collides.
    pub fn extend(&mut self, other: TrackTable) -> Result<()> {
        let mut rows = core::mem::take(&mut self.rows);
        rows.extend(other.rows);
        *self = Self::from_unsorted(rows)?;
        Ok(())
    }

    /// Treats every detection as its own trajectory point, keyed by label
    /// (clutter rows get fresh ids below any real label).
    pub fn from_detections(d: &DetectionTable) -> Result<Self> {
        let mut next_clutter = -2;
        let mut rows = Vec::with_capacity(d.len());
        for (row, det) in d.rows.iter().enumerate() {
            let mut id = det.label.ok_or(Error::MissingLabel { row })?;
            if id == CLUTTER {
                id = next_clutter;
                next_clutter -= 1;
            }
            rows.push(TrackPoint {
                id,
                t: det.t,
                x: det.x,
                y: det.y,
            });
        }
        Self::from_unsorted(rows)
    }
}

/// Row-stochastic `n×B` matrix of detection-to-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix(Matrix);

impl AssociationMatrix {
    pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(m: Matrix) -> Result<Self> {
        for r in 0..m.rows() {
            let row = m.row(r);
            if let Some(c) = row.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter {
                    name: "association",
                    reason: format!("entry ({r}, {c}) = {} outside [0, 1]", row[c]),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > Self::ROW_SUM_TOLERANCE {
                return Err(Error::InvalidParameter {
                    name: "association",
                    reason: format!("row {r} sums to {sum}"),
                });
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }
}
