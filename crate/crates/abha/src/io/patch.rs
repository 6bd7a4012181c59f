use abha_core::model::{TrackPoint, TrackTable};
use abha_core::Error;

/// Id offset between consecutive in-patch runs of one track: run `k` of
/// track `id` becomes `id + k·RUN_STRIDE`.
pub const RUN_STRIDE: i64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub x_lim: f64,
    pub y_lim: f64,
}

impl PatchSpec {
    pub fn new(origin_x: f64, origin_y: f64, x_lim: f64, y_lim: f64) -> abha_core::Result<Self> {
        if !(origin_x >= 0.0 && origin_y >= 0.0 && x_lim > 0.0 && y_lim > 0.0) {
            return Err(Error::InvalidParameter {
                name: "patch",
                reason: "origin must be non-negative and extent positive".into(),
            });
        }
        Ok(Self {
            origin_x,
            origin_y,
            x_lim,
            y_lim,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.origin_x && x <= self.origin_x + self.x_lim && y >= self.origin_y && y <= self.origin_y + self.y_lim
    }
}

/// Keeps the rows inside the patch in patch-local coordinates. A track that
/// leaves and re-enters is split into one id per in-patch run. Frames are
/// shifted so the first retained frame is 1. Fails if a run id overflows `i64`.
pub fn crop_patch(x: &TrackTable, p: &PatchSpec) -> abha_core::Result<TrackTable> {
    let mut rows = Vec::new();
    for (&id, idx) in &x.by_id() {
        let mut run = -1i64;
        let mut inside = false;
        for &i in idx {
            let q = x.rows()[i];
            if p.contains(q.x, q.y) {
                if !inside {
                    run += 1;
                    inside = true;
                }
                let run_id = run
                    .checked_mul(RUN_STRIDE)
                    .and_then(|offset| id.checked_add(offset))
                    .ok_or_else(|| Error::InvalidParameter {
                        name: "id",
                        reason: format!("track {id}: run {run} id exceeds the i64 range"),
                    })?;
                rows.push(TrackPoint {
                    id: run_id,
                    t: q.t,
                    x: q.x - p.origin_x,
                    y: q.y - p.origin_y,
                });
            } else {
                inside = false;
            }
        }
    }
    if let Some(first) = rows.iter().map(|r| r.t).min() {
        for r in &mut rows {
            r.t -= first - 1;
        }
    }
    TrackTable::from_unsorted(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: i64, t: u32, x: f64, y: f64) -> TrackPoint {
        TrackPoint { id, t, x, y }
    }

    #[test]
    fn covering_patch_translates() {
        let x = TrackTable::new(vec![pt(0, 1, 10.0, 10.0), pt(0, 2, 11.0, 12.0), pt(1, 1, 20.0, 5.0)]).unwrap();
        let out = crop_patch(&x, &PatchSpec::new(5.0, 2.0, 100.0, 100.0).unwrap()).unwrap();
        let expected = TrackTable::new(vec![pt(0, 1, 5.0, 8.0), pt(0, 2, 6.0, 10.0), pt(1, 1, 15.0, 3.0)]).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn outside_track_removed() {
        let x = TrackTable::new(vec![pt(0, 1, 50.0, 50.0), pt(0, 2, 51.0, 50.0), pt(1, 1, 1.0, 1.0)]).unwrap();
        let out = crop_patch(&x, &PatchSpec::new(0.0, 0.0, 30.0, 30.0).unwrap()).unwrap();
        assert_eq!(out.track_count(), 1);
        assert_eq!(out.rows()[0].id, 1);
    }

    #[test]
    fn zig_zag_splits_into_segments() {
        // in, in, out, in, in, out, out, in
        let xs = [5.0, 10.0, 35.0, 20.0, 25.0, 40.0, 45.0, 29.0];
        let rows: Vec<TrackPoint> = xs
            .iter()
            .enumerate()
            .map(|(k, &x)| pt(3, k as u32 + 1, x, 10.0))
            .collect();
        let out = crop_patch(
            &TrackTable::new(rows).unwrap(),
            &PatchSpec::new(0.0, 0.0, 30.0, 30.0).unwrap(),
        )
        .unwrap();
        let by_id = out.by_id();
        let ids: Vec<i64> = by_id.keys().copied().collect();
        assert_eq!(ids, vec![3, 3 + RUN_STRIDE, 3 + 2 * RUN_STRIDE]);
        let sizes: Vec<usize> = by_id.values().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn frames_renumbered() {
        let x = TrackTable::new(vec![pt(0, 1, 50.0, 50.0), pt(0, 4, 1.0, 1.0), pt(0, 5, 2.0, 1.0)]).unwrap();
        let out = crop_patch(&x, &PatchSpec::new(0.0, 0.0, 30.0, 30.0).unwrap()).unwrap();
        let frames: Vec<u32> = out.rows().iter().map(|p| p.t).collect();
        assert_eq!(frames, vec![1, 2]);
    }

    #[test]
    fn invalid_spec() {
        assert!(PatchSpec::new(-1.0, 0.0, 30.0, 30.0).is_err());
        assert!(PatchSpec::new(0.0, 0.0, 0.0, 30.0).is_err());
    }
}
