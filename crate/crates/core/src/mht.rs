//! Frame-recursive baseline: Kalman prediction, gated Hungarian association,
//! miss-count pruning and spawning of new hypotheses.

use alloc::vec::Vec;

use crate::assignment::match_with_threshold;
use crate::error::{Error, Result};
use crate::kalman::{predict, update, GaussianState, MotionModel};
use crate::linalg::Matrix;
use crate::model::{DetectionTable, TrackPoint, TrackTable};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub id: i64,
    pub state: GaussianState,
    pub misses: usize,
    /// Committed `(t, x, y)` positions; coasted frames are not recorded.
    pub history: Vec<(u32, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhtConfig {
    /// Association gate in px.
    pub gate: f64,
    pub max_misses: usize,
    pub motion: MotionModel,
}

impl Default for MhtConfig {
    fn default() -> Self {
        Self {
            gate: 10.0,
            max_misses: 2,
            motion: MotionModel::default_paper(),
        }
    }
}

impl MhtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gate",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Live and terminated hypotheses of one run.
#[derive(Debug, Clone, Default)]
pub struct MhtState {
    pub alive: Vec<Hypothesis>,
    pub terminated: Vec<Hypothesis>,
    next_id: i64,
}

impl MhtState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spawned(&self) -> i64 {
        self.next_id
    }

    fn spawn(&mut self, t: u32, z: [f64; 2], m: &MotionModel) {
        self.alive.push(Hypothesis {
            id: self.next_id,
            state: GaussianState::from_position(z[0], z[1], m),
            misses: 0,
            history: alloc::vec![(t, z[0], z[1])],
        });
        self.next_id += 1;
    }

    /// Advances every hypothesis to frame `t` and associates `detections`
    /// (all at frame `t`).
    pub fn step(&mut self, t: u32, detections: &[[f64; 2]], cfg: &MhtConfig) -> Result<()> {
        for h in &mut self.alive {
            h.state = predict(&h.state, &cfg.motion);
        }
        let mut matched_det = alloc::vec![false; detections.len()];
        let mut matched_hyp = alloc::vec![false; self.alive.len()];
        if !self.alive.is_empty() && !detections.is_empty() {
            let mut cost = Matrix::zeros(self.alive.len(), detections.len());
            for (i, h) in self.alive.iter().enumerate() {
                let [px, py] = h.state.position();
                for (j, z) in detections.iter().enumerate() {
                    cost[(i, j)] = libm::hypot(z[0] - px, z[1] - py);
                }
            }
            for (i, j) in match_with_threshold(&cost, cfg.gate)?.pairs {
                let h = &mut self.alive[i];
                h.state = update(&h.state, detections[j], &cfg.motion)?;
                h.misses = 0;
                let [x, y] = h.state.position();
                h.history.push((t, x, y));
                matched_hyp[i] = true;
                matched_det[j] = true;
            }
        }
        let mut kept = Vec::with_capacity(self.alive.len());
        for (mut h, matched) in core::mem::take(&mut self.alive).into_iter().zip(matched_hyp) {
            if !matched {
                h.misses += 1;
            }
            if h.misses > cfg.max_misses {
                self.terminated.push(h);
            } else {
                kept.push(h);
            }
        }
        self.alive = kept;
        for (z, used) in detections.iter().zip(matched_det) {
            if !used {
                self.spawn(t, *z, &cfg.motion);
            }
        }
        Ok(())
    }

    /// Histories of every hypothesis ever created.
    pub fn into_tracks(self) -> Result<TrackTable> {
        let rows = self
            .terminated
            .into_iter()
            .chain(self.alive)
            .flat_map(|h| {
                let id = h.id;
                h.history.into_iter().map(move |(t, x, y)| TrackPoint { id, t, x, y })
            })
            .collect();
        TrackTable::from_unsorted(rows)
    }
}

/// Runs the recursion over frames `1..=T`.
pub fn track(d: &DetectionTable, cfg: &MhtConfig) -> Result<TrackTable> {
    cfg.validate()?;
    let frames = d.group_by_frame();
    let last = d.frame_count.max(frames.keys().next_back().copied().unwrap_or(0));
    let mut state = MhtState::new();
    let empty = Vec::new();
    for t in 1..=last {
        let dets: Vec<[f64; 2]> = frames
            .get(&t)
            .unwrap_or(&empty)
            .iter()
            .map(|(_, det)| [det.x, det.y])
            .collect();
        state.step(t, &dets, cfg)?;
    }
    state.into_tracks()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::filter_track;
    use crate::model::Detection;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn detection_at_prediction_matches() {
        let cfg = MhtConfig::default();
        let mut s = MhtState::new();
        s.step(1, &[[5.0, 5.0]], &cfg).unwrap();
        s.step(2, &[[5.0, 5.0]], &cfg).unwrap();
        assert_eq!(s.alive.len(), 1);
        assert_eq!(s.alive[0].misses, 0);
        assert_eq!(s.alive[0].history.len(), 2);
    }

    #[test]
    fn detection_beyond_gate_spawns() {
        let cfg = MhtConfig::default();
        let mut s = MhtState::new();
        s.step(1, &[[5.0, 5.0]], &cfg).unwrap();
        s.step(2, &[[16.0, 5.0]], &cfg).unwrap();
        assert_eq!(s.alive.len(), 2);
        assert_eq!(s.alive[0].misses, 1);
        assert_eq!(s.alive[1].misses, 0);
        assert_eq!(s.spawned(), 2);
    }

    #[test]
    fn removed_after_exceeding_misses() {
        let cfg = MhtConfig::default();
        let mut s = MhtState::new();
        s.step(1, &[[5.0, 5.0]], &cfg).unwrap();
        s.step(2, &[], &cfg).unwrap();
        s.step(3, &[], &cfg).unwrap();
        assert_eq!(s.alive.len(), 1);
        assert_eq!(s.alive[0].misses, 2);
        s.step(4, &[], &cfg).unwrap();
        assert!(s.alive.is_empty());
        assert_eq!(s.terminated.len(), 1);
    }

    #[test]
    fn coasted_hypothesis_can_resume() {
        let cfg = MhtConfig::default();
        let mut s = MhtState::new();
        s.step(1, &[[5.0, 5.0]], &cfg).unwrap();
        s.step(2, &[], &cfg).unwrap();
        s.step(3, &[[5.5, 5.0]], &cfg).unwrap();
        assert_eq!(s.alive.len(), 1);
        let frames: Vec<u32> = s.alive[0].history.iter().map(|h| h.0).collect();
        assert_eq!(frames, vec![1, 3]);
    }

    #[test]
    fn empty_input() {
        let out = track(&DetectionTable::new(vec![]), &MhtConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    fn line(t_max: u32, x0: f64, y0: f64, vx: f64, vy: f64, label: i64) -> Vec<Detection> {
        (1..=t_max)
            .map(|t| {
                let s = f64::from(t - 1);
                Detection::labeled(x0 + vx * s, y0 + vy * s, t, label)
            })
            .collect()
    }

    #[test]
    fn single_particle_single_track() {
        let d = DetectionTable::new(line(50, 2.0, 3.0, 0.4, 0.2, 0));
        let out = track(&d, &MhtConfig::default()).unwrap();
        assert_eq!(out.track_count(), 1);
        assert_eq!(out.len(), 50);
    }

    #[test]
    fn parallel_particles_keep_identity() {
        let mut rows = line(60, 0.0, 0.0, 0.3, 0.0, 0);
        rows.extend(line(60, 0.0, 20.0, 0.3, 0.0, 1));
        let d = DetectionTable::new(rows);
        let out = track(&d, &MhtConfig::default()).unwrap();
        assert_eq!(out.track_count(), 2);
        for idx in out.by_id().values() {
            let y0 = out.rows()[idx[0]].y;
            assert_eq!(idx.len(), 60);
            assert!(idx.iter().all(|&i| (out.rows()[i].y - y0).abs() < 1e-6));
        }
    }

    #[test]
    fn unbounded_gate_equals_filter_track() {
        let cfg = MhtConfig {
            gate: f64::INFINITY,
            max_misses: usize::MAX,
            ..MhtConfig::default()
        };
        let mut rows = line(30, 1.0, 1.0, 0.7, -0.1, 0);
        rows.retain(|d| d.t % 4 != 2);
        for (k, r) in rows.iter_mut().enumerate() {
            r.x += 0.3 * libm::sin(k as f64);
        }
        let d = DetectionTable::new(rows);
        let out = track(&d, &cfg).unwrap();
        let expected = filter_track(&d, 0, &cfg.motion).unwrap();
        assert_eq!(out.rows(), expected.as_slice());
    }

    proptest! {
        #[test]
        fn detections_used_at_most_once(points in prop::collection::vec((1u32..8, 0.0..30.0f64, 0.0..30.0f64), 0..40)) {
            let rows: Vec<Detection> = points.iter().map(|&(t, x, y)| Detection::new(x, y, t)).collect();
            let d = DetectionTable::new(rows);
            let out = track(&d, &MhtConfig::default()).unwrap();
            prop_assert_eq!(out.len(), d.len());
            for (t, idx) in out.by_frame() {
                let n = d.rows.iter().filter(|r| r.t == t).count();
                prop_assert_eq!(idx.len(), n);
            }
        }
    }
}
