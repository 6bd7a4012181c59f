//! Association by the encoder, then per-label Kalman filtering.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::encoder::{forward_associate, EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::kalman::{filter_track, MotionModel};
use crate::model::{AssociationMatrix, DetectionTable, TrackTable, CLUTTER};
use crate::training::GroundTruthAssociation;

#[derive(Debug, Clone, PartialEq)]
pub struct AbhaConfig {
    pub encoder: EncoderConfig,
    pub motion: MotionModel,
    /// Trajectories with fewer points are dropped.
    pub min_track_length: usize,
    /// Predicted column reserved for clutter, if any.
    pub clutter_column: Option<usize>,
}

impl AbhaConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self {
            clutter_column: Some(encoder.classes - 1),
            encoder,
            motion: MotionModel::default_paper(),
            min_track_length: 1,
        }
    }
}

impl Default for AbhaConfig {
    fn default() -> Self {
        Self::new(EncoderConfig::default())
    }
}

/// Column of the largest entry per row; the lowest index wins ties.
pub fn argmax_labels(a: &AssociationMatrix) -> Vec<usize> {
    let m = a.matrix();
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Class labels with the clutter column mapped to [`CLUTTER`].
pub fn labels_from_associations(a: &AssociationMatrix, clutter_column: Option<usize>) -> Vec<i64> {
    argmax_labels(a)
        .into_iter()
        .map(|c| if Some(c) == clutter_column { CLUTTER } else { c as i64 })
        .collect()
}

/// Keeps, for each (label, frame), only the detection most confidently
/// assigned to that label; the others become clutter. Ties go to the lower row.
pub fn resolve_duplicates(d: &DetectionTable, a: &AssociationMatrix) -> Result<DetectionTable> {
    let labels = d.labels()?;
    let m = a.matrix();
    let mut winner: BTreeMap<(i64, u32), usize> = BTreeMap::new();
    for (row, (&label, det)) in labels.iter().zip(&d.rows).enumerate() {
        if label == CLUTTER {
            continue;
        }
        let col = label as usize;
        winner
            .entry((label, det.t))
            .and_modify(|w| {
                if m[(row, col)] > m[(*w, col)] {
                    *w = row;
                }
            })
            .or_insert(row);
    }
    let resolved: Vec<i64> = labels
        .iter()
        .zip(&d.rows)
        .enumerate()
        .map(|(row, (&label, det))| {
            if label != CLUTTER && winner[&(label, det.t)] != row {
                CLUTTER
            } else {
                label
            }
        })
        .collect();
    d.attach_labels(&resolved)
}

/// Full pipeline from a given association matrix.
pub fn track_with_associations(
    d: &DetectionTable,
    a: &AssociationMatrix,
    clutter_column: Option<usize>,
    cfg: &AbhaConfig,
) -> Result<TrackTable> {
    if d.is_empty() {
        return Ok(TrackTable::empty());
    }
    let labels = labels_from_associations(a, clutter_column);
    let labeled = resolve_duplicates(&d.attach_labels(&labels)?, a)?;
    let mut rows = Vec::new();
    for (label, subset) in labeled.split_by_label()? {
        if label == CLUTTER || subset.table.len() < cfg.min_track_length {
            continue;
        }
        rows.extend(filter_track(&subset.table, label, &cfg.motion)?);
    }
    TrackTable::new(rows)
}

/// Encoder association followed by per-label filtering.
pub fn track(d: &DetectionTable, params: &EncoderParams, cfg: &AbhaConfig) -> Result<TrackTable> {
    if d.is_empty() {
        return Ok(TrackTable::empty());
    }
    let a = forward_associate(d, params, &cfg.encoder)?;
    track_with_associations(d, &a, cfg.clutter_column, cfg)
}

/// The pipeline with the ground-truth association injected in place of the
/// encoder output. Output ids are the ground-truth column indices.
pub fn track_oracle(d: &DetectionTable, cfg: &AbhaConfig) -> Result<TrackTable> {
    if d.is_empty() {
        return Ok(TrackTable::empty());
    }
    let truth = GroundTruthAssociation::from_table(d)?;
    let clutter = truth.clutter_column();
    let a = AssociationMatrix::new(truth.entries)?;
    track_with_associations(&d.without_labels(), &a, clutter, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::filter_track;
    use crate::linalg::Matrix;
    use crate::model::Detection;
    use alloc::vec;

    fn assoc(rows: &[&[f64]]) -> AssociationMatrix {
        AssociationMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn argmax_cases() {
        let a = assoc(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(argmax_labels(&a), vec![1, 0, 2]);
        let a = assoc(&[&[0.5, 0.5]]);
        assert_eq!(argmax_labels(&a), vec![0]);
        let a = AssociationMatrix::new(Matrix::filled(4, 5, 0.2)).unwrap();
        assert_eq!(argmax_labels(&a), vec![0; 4]);
    }

    #[test]
    fn duplicates_resolved_by_confidence() {
        let d = DetectionTable::new(vec![
            Detection::labeled(0.0, 0.0, 1, 0),
            Detection::labeled(1.0, 0.0, 1, 0),
            Detection::labeled(2.0, 0.0, 2, 0),
        ]);
        let a = assoc(&[&[0.9, 0.1], &[0.6, 0.4], &[1.0, 0.0]]);
        let r = resolve_duplicates(&d, &a).unwrap();
        assert_eq!(r.labels().unwrap(), vec![0, CLUTTER, 0]);

        let a = assoc(&[&[0.6, 0.4], &[0.9, 0.1], &[1.0, 0.0]]);
        let r = resolve_duplicates(&d, &a).unwrap();
        assert_eq!(r.labels().unwrap(), vec![CLUTTER, 0, 0]);
    }

    #[test]
    fn three_way_duplicate_leaves_one() {
        let d = DetectionTable::new(vec![
            Detection::labeled(0.0, 0.0, 3, 1),
            Detection::labeled(1.0, 0.0, 3, 1),
            Detection::labeled(2.0, 0.0, 3, 1),
        ]);
        let a = AssociationMatrix::new(Matrix::filled(3, 2, 0.5)).unwrap();
        let r = resolve_duplicates(&d, &a).unwrap();
        assert_eq!(r.labels().unwrap(), vec![1, CLUTTER, CLUTTER]);
    }

    #[test]
    fn no_duplicates_is_identity() {
        let d = DetectionTable::new(vec![
            Detection::labeled(0.0, 0.0, 1, 0),
            Detection::labeled(1.0, 0.0, 1, 1),
            Detection::labeled(2.0, 0.0, 2, CLUTTER),
        ]);
        let a = assoc(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        assert_eq!(resolve_duplicates(&d, &a).unwrap(), d);
    }

    #[test]
    fn empty_input() {
        let cfg = AbhaConfig::default();
        let d = DetectionTable::new(vec![]);
        assert!(track_oracle(&d, &cfg).unwrap().is_empty());
        let a = AssociationMatrix::new(Matrix::zeros(0, 3)).unwrap();
        assert!(track_with_associations(&d, &a, Some(2), &cfg).unwrap().is_empty());
    }

    #[test]
    fn all_clutter_gives_nothing() {
        let cfg = AbhaConfig::default();
        let d = DetectionTable::new(vec![Detection::new(0.0, 0.0, 1), Detection::new(1.0, 1.0, 2)]);
        let a = assoc(&[&[0.1, 0.9], &[0.0, 1.0]]);
        assert!(track_with_associations(&d, &a, Some(1), &cfg).unwrap().is_empty());
    }

    #[test]
    fn oracle_recovers_noise_free_lines() {
        let cfg = AbhaConfig::default();
        let mut rows = Vec::new();
        for t in 1..=40u32 {
            let s = f64::from(t);
            rows.push(Detection::labeled(1.0 + 0.3 * s, 2.0 + 0.1 * s, t, 5));
            rows.push(Detection::labeled(25.0 - 0.2 * s, 20.0, t, 9));
        }
        rows.push(Detection::labeled(3.0, 3.0, 7, CLUTTER));
        let d = DetectionTable::new(rows);
        let out = track_oracle(&d, &cfg).unwrap();
        assert_eq!(out.track_count(), 2);
        assert_eq!(out.len(), 80);
        for p in out.rows().iter().filter(|p| p.t > 10) {
            let s = f64::from(p.t);
            let (ex, ey) = if p.id == 1 {
                (1.0 + 0.3 * s, 2.0 + 0.1 * s)
            } else {
                (25.0 - 0.2 * s, 20.0)
            };
            assert!((p.x - ex).abs() < 1e-3 && (p.y - ey).abs() < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn min_length_filters_short_tracks() {
        let cfg = AbhaConfig {
            min_track_length: 3,
            ..AbhaConfig::default()
        };
        let d = DetectionTable::new(vec![
            Detection::labeled(0.0, 0.0, 1, 0),
            Detection::labeled(0.0, 0.0, 2, 0),
            Detection::labeled(0.0, 0.0, 3, 0),
            Detection::labeled(9.0, 9.0, 1, 1),
        ]);
        let out = track_oracle(&d, &cfg).unwrap();
        assert_eq!(out.track_count(), 1);
    }

    #[test]
    fn labels_are_partitioned_into_filtered_tracks() {
        let cfg = AbhaConfig::default();
        let d = DetectionTable::new(vec![
            Detection::new(0.0, 0.0, 1),
            Detection::new(5.0, 5.0, 1),
            Detection::new(0.1, 0.0, 2),
            Detection::new(5.1, 5.0, 3),
        ]);
        let a = assoc(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.8, 0.1, 0.1], &[0.2, 0.7, 0.1]]);
        let out = track_with_associations(&d, &a, Some(2), &cfg).unwrap();
        let by_id = out.by_id();
        assert_eq!(by_id[&0].len(), 2);
        assert_eq!(by_id[&1].len(), 2);
        let sub = DetectionTable::new(vec![d.rows[1], d.rows[3]]);
        let expected = filter_track(&sub, 1, &cfg.motion).unwrap();
        let got: Vec<_> = by_id[&1].iter().map(|&i| out.rows()[i]).collect();
        assert_eq!(got, expected);
    }
}
