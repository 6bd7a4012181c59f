//! Point and link congruence, GOSPA and its frame-averaged form TGOSPA.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::assignment::{match_with_threshold, solve_rectangular};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::TrackTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    /// Point match gate (px).
    pub d_phi: f64,
    /// GOSPA cutoff.
    pub c: f64,
    /// GOSPA order.
    pub p: f64,
    /// Count a link only when both predicted endpoints equal the ground-truth
    /// positions bit for bit.
    pub literal_links: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            d_phi: 3.0,
            c: 5.0,
            p: 2.0,
            literal_links: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_phi > 0.0 && self.c > 0.0 && self.p >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "metric config",
                reason: "need d_phi > 0, c > 0, p >= 1".into(),
            });
        }
        Ok(())
    }
}

/// `num/den`, or 0 with `undefined` set when `den` is 0.
fn ratio(num: usize, den: usize, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-frame matched `(gt row, predicted row)` index pairs.
pub type FrameMatches = BTreeMap<u32, Vec<(usize, usize)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCongruence {
    pub precision: f64,
    pub recall: f64,
    pub jaccard: f64,
    pub matched: usize,
    pub truth_count: usize,
    pub predicted_count: usize,
    pub matches: FrameMatches,
    pub undefined: bool,
}

pub fn point_congruence(x: &TrackTable, xh: &TrackTable, cfg: &MetricConfig) -> Result<PointCongruence> {
    let truth = x.by_frame();
    let pred = xh.by_frame();
    let mut matches = FrameMatches::new();
    for (t, gi) in &truth {
        let Some(pi) = pred.get(t) else { continue };
        let mut d = Matrix::zeros(gi.len(), pi.len());
        for (a, &g) in gi.iter().enumerate() {
            let g = x.rows()[g];
            for (b, &p) in pi.iter().enumerate() {
                let p = xh.rows()[p];
                d[(a, b)] = libm::hypot(g.x - p.x, g.y - p.y);
            }
        }
        let pairs: Vec<(usize, usize)> = match_with_threshold(&d, cfg.d_phi)?
            .pairs
            .into_iter()
            .map(|(a, b)| (gi[a], pi[b]))
            .collect();
        if !pairs.is_empty() {
            matches.insert(*t, pairs);
        }
    }
    let matched: usize = matches.values().map(Vec::len).sum();
    let mut undefined = false;
    let precision = ratio(matched, xh.len(), &mut undefined);
    let recall = ratio(matched, x.len(), &mut undefined);
    let jaccard = ratio(matched, x.len() + xh.len() - matched, &mut undefined);
    Ok(PointCongruence {
        precision,
        recall,
        jaccard,
        matched,
        truth_count: x.len(),
        predicted_count: xh.len(),
        matches,
        undefined,
    })
}

/// Consecutive-frame row pairs `(row at t, row at t+1)` within each id.
pub fn links(x: &TrackTable) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for idx in x.by_id().values() {
        for w in idx.windows(2) {
            if x.rows()[w[1]].t == x.rows()[w[0]].t + 1 {
                out.push((w[0], w[1]));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCongruence {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub intersection: usize,
    pub truth_links: usize,
    pub predicted_links: usize,
    pub undefined: bool,
}

pub fn link_congruence(x: &TrackTable, xh: &TrackTable, matches: &FrameMatches, cfg: &MetricConfig) -> LinkCongruence {
    let truth = links(x);
    let pred = links(xh);
    let intersection = if cfg.literal_links {
        let key = |t: &TrackTable, (a, b): (usize, usize)| {
            let (p, q) = (t.rows()[a], t.rows()[b]);
            (p.t, p.x.to_bits(), p.y.to_bits(), q.x.to_bits(), q.y.to_bits())
        };
        let pred_keys: BTreeSet<_> = pred.iter().map(|&l| key(xh, l)).collect();
        truth.iter().filter(|&&l| pred_keys.contains(&key(x, l))).count()
    } else {
        let partner: BTreeMap<usize, usize> = matches.values().flatten().copied().collect();
        let pred_set: BTreeSet<(usize, usize)> = pred.iter().copied().collect();
        truth
            .iter()
            .filter(|(a, b)| match (partner.get(a), partner.get(b)) {
                (Some(&pa), Some(&pb)) => pred_set.contains(&(pa, pb)),
                _ => false,
            })
            .count()
    };
    let mut undefined = false;
    let precision = ratio(intersection, pred.len(), &mut undefined);
    let recall = ratio(intersection, truth.len(), &mut undefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined = true;
        0.0
    };
    let jaccard = ratio(intersection, truth.len() + pred.len() - intersection, &mut undefined);
    LinkCongruence {
        precision,
        recall,
        f1,
        jaccard,
        intersection,
        truth_links: truth.len(),
        predicted_links: pred.len(),
        undefined,
    }
}

/// GOSPA between two point sets: capped matched costs plus `cᵖ/2` per
/// unmatched point, to the power `1/p`.
pub fn gospa(a: &[[f64; 2]], b: &[[f64; 2]], cfg: &MetricConfig) -> Result<f64> {
    let bits = |s: &[[f64; 2]]| -> Vec<(u64, u64)> { s.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect() };
    // canonical argument order
    let (a, b) = if (a.len(), bits(a)) <= (b.len(), bits(b)) {
        (a, b)
    } else {
        (b, a)
    };
    let cp = libm::pow(cfg.c, cfg.p);
    let k = a.len().min(b.len());
    let mut total = 0.0;
    if k > 0 {
        let mut cost = Matrix::zeros(a.len(), b.len());
        for (i, p) in a.iter().enumerate() {
            for (j, q) in b.iter().enumerate() {
                let d = libm::hypot(p[0] - q[0], p[1] - q[1]);
                cost[(i, j)] = libm::pow(d, cfg.p).min(cp);
            }
        }
        total = solve_rectangular(&cost, cp)?.total_cost;
    }
    total += cp / 2.0 * (a.len() + b.len() - 2 * k) as f64;
    Ok(libm::pow(total, 1.0 / cfg.p))
}

fn frame_points(x: &TrackTable) -> BTreeMap<u32, Vec<[f64; 2]>> {
    let mut out: BTreeMap<u32, Vec<[f64; 2]>> = BTreeMap::new();
    for p in x.rows() {
        out.entry(p.t).or_default().push([p.x, p.y]);
    }
    out
}

/// Per-frame GOSPA for frames `1..=T`, `T` the last frame of either table.
pub fn gospa_per_frame(x: &TrackTable, xh: &TrackTable, cfg: &MetricConfig) -> Result<Vec<f64>> {
    let frames = x.frame_count().max(xh.frame_count());
    let a = frame_points(x);
    let b = frame_points(xh);
    let empty = Vec::new();
    (1..=frames)
        .map(|t| gospa(a.get(&t).unwrap_or(&empty), b.get(&t).unwrap_or(&empty), cfg))
        .collect()
}

/// Power mean of per-frame GOSPA; frames empty on both sides count as 0.
pub fn tgospa(x: &TrackTable, xh: &TrackTable, cfg: &MetricConfig) -> Result<f64> {
    let per_frame = gospa_per_frame(x, xh, cfg)?;
    if per_frame.is_empty() {
        return Ok(0.0);
    }
    let mean = per_frame.iter().map(|g| libm::pow(*g, cfg.p)).sum::<f64>() / per_frame.len() as f64;
    Ok(libm::pow(mean, 1.0 / cfg.p))
}

/// Names of the eight reported metrics, in report order.
pub const METRIC_NAMES: [&str; 8] = ["P_P", "R_P", "JSC_P", "P_L", "R_L", "F1_L", "JSC_L", "TGOSPA"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub p_p: f64,
    pub r_p: f64,
    pub jsc_p: f64,
    pub p_l: f64,
    pub r_l: f64,
    pub f1_l: f64,
    pub jsc_l: f64,
    pub tgospa: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 8] {
        [
            self.p_p,
            self.r_p,
            self.jsc_p,
            self.p_l,
            self.r_l,
            self.f1_l,
            self.jsc_l,
            self.tgospa,
        ]
    }
}

pub fn evaluate(x: &TrackTable, xh: &TrackTable, cfg: &MetricConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let points = point_congruence(x, xh, cfg)?;
    let link = link_congruence(x, xh, &points.matches, cfg);
    Ok(MetricReport {
        p_p: points.precision,
        r_p: points.recall,
        jsc_p: points.jaccard,
        p_l: link.precision,
        r_l: link.recall,
        f1_l: link.f1,
        jsc_l: link.jaccard,
        tgospa: tgospa(x, xh, cfg)?,
        undefined: points.undefined || link.undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrackPoint;
    use alloc::vec;
    use proptest::prelude::*;

    fn table(rows: &[(i64, u32, f64, f64)]) -> TrackTable {
        TrackTable::from_unsorted(rows.iter().map(|&(id, t, x, y)| TrackPoint { id, t, x, y }).collect()).unwrap()
    }

    fn two_tracks() -> TrackTable {
        let mut rows = Vec::new();
        for t in 1..=5u32 {
            rows.push((0, t, f64::from(t), 1.0));
            rows.push((1, t, 10.0, f64::from(t)));
        }
        table(&rows)
    }

    /// GOSPA by enumerating every injection of the smaller set into the larger.
    fn gospa_brute(a: &[[f64; 2]], b: &[[f64; 2]], cfg: &MetricConfig) -> f64 {
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let cp = libm::pow(cfg.c, cfg.p);
        fn rec(
            s: &[[f64; 2]],
            l: &[[f64; 2]],
            i: usize,
            used: &mut [bool],
            acc: f64,
            cfg: &MetricConfig,
            cp: f64,
            best: &mut f64,
        ) {
            if i == s.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..l.len() {
                if !used[j] {
                    used[j] = true;
                    let d = libm::hypot(s[i][0] - l[j][0], s[i][1] - l[j][1]);
                    rec(s, l, i + 1, used, acc + libm::pow(d, cfg.p).min(cp), cfg, cp, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(small, large, 0, &mut vec![false; large.len()], 0.0, cfg, cp, &mut best);
        let total = best + cp / 2.0 * (large.len() - small.len()) as f64;
        libm::pow(total, 1.0 / cfg.p)
    }

    #[test]
    fn perfect_prediction() {
        let x = two_tracks();
        let r = evaluate(&x, &x, &MetricConfig::default()).unwrap();
        assert_eq!(r.values(), [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(!r.undefined);
        let literal = MetricConfig {
            literal_links: true,
            ..MetricConfig::default()
        };
        assert_eq!(evaluate(&x, &x, &literal).unwrap().r_l, 1.0);
    }

    #[test]
    fn empty_prediction() {
        let x = two_tracks();
        let r = evaluate(&x, &TrackTable::empty(), &MetricConfig::default()).unwrap();
        assert_eq!((r.p_p, r.r_p, r.p_l, r.r_l), (0.0, 0.0, 0.0, 0.0));
        assert!(r.undefined);
    }

    #[test]
    fn far_prediction_matches_nothing() {
        let x = table(&[(0, 1, 0.0, 0.0)]);
        let xh = table(&[(0, 1, 4.0, 0.0)]);
        let p = point_congruence(&x, &xh, &MetricConfig::default()).unwrap();
        assert_eq!((p.precision, p.recall, p.jaccard), (0.0, 0.0, 0.0));
    }

    #[test]
    fn points_never_match_across_frames() {
        let x = table(&[(0, 1, 0.0, 0.0)]);
        let xh = table(&[(0, 2, 0.0, 0.0)]);
        assert_eq!(point_congruence(&x, &xh, &MetricConfig::default()).unwrap().matched, 0);
    }

    #[test]
    fn singleton_predictions_have_no_links() {
        let x = two_tracks();
        let rows: Vec<TrackPoint> = x
            .rows()
            .iter()
            .enumerate()
            .map(|(i, p)| TrackPoint { id: i as i64, ..*p })
            .collect();
        let xh = TrackTable::new(rows).unwrap();
        let r = evaluate(&x, &xh, &MetricConfig::default()).unwrap();
        assert_eq!(r.r_p, 1.0);
        assert_eq!((r.p_l, r.r_l), (0.0, 0.0));
        assert!(r.undefined);
    }

    #[test]
    fn id_split_breaks_link() {
        let x = table(&[(0, 1, 0.0, 0.0), (0, 2, 1.0, 0.0)]);
        let xh = table(&[(0, 1, 0.0, 0.0), (1, 2, 1.0, 0.0)]);
        let r = evaluate(&x, &xh, &MetricConfig::default()).unwrap();
        assert_eq!(r.r_p, 1.0);
        assert_eq!(r.r_l, 0.0);
    }

    #[test]
    fn gap_is_not_a_link() {
        let x = table(&[(0, 1, 0.0, 0.0), (0, 3, 1.0, 0.0)]);
        assert!(links(&x).is_empty());
    }

    #[test]
    fn literal_links_need_exact_positions() {
        let x = table(&[(0, 1, 0.0, 0.0), (0, 2, 1.0, 0.0)]);
        let xh = table(&[(7, 1, 0.001, 0.0), (7, 2, 1.0, 0.0)]);
        let cfg = MetricConfig::default();
        assert_eq!(evaluate(&x, &xh, &cfg).unwrap().r_l, 1.0);
        let literal = MetricConfig {
            literal_links: true,
            ..cfg
        };
        assert_eq!(evaluate(&x, &xh, &literal).unwrap().r_l, 0.0);
    }

    #[test]
    fn link_jaccard_follows_set_formula() {
        let x = table(&[(0, 1, 0.0, 0.0), (0, 2, 1.0, 0.0), (0, 3, 2.0, 0.0)]);
        let xh = table(&[(0, 1, 0.0, 0.0), (0, 2, 1.0, 0.0), (1, 3, 2.0, 0.0)]);
        let r = evaluate(&x, &xh, &MetricConfig::default()).unwrap();
        assert_eq!((r.p_l, r.r_l), (1.0, 0.5));
        assert!((r.f1_l - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.jsc_l, 0.5);
        assert!((r.jsc_l - r.f1_l / (2.0 - r.f1_l)).abs() < 1e-15);
    }

    #[test]
    fn gospa_cases() {
        let cfg = MetricConfig::default();
        let s = [[1.0, 2.0], [5.0, 5.0]];
        assert_eq!(gospa(&s, &s, &cfg).unwrap(), 0.0);
        let g = gospa(&[[0.0, 0.0]], &[], &cfg).unwrap();
        assert!((g - libm::sqrt(12.5)).abs() < 1e-15);
        assert!((g - 3.5355).abs() < 1e-4);
        assert_eq!(gospa(&[[0.0, 0.0]], &[[3.0, 4.0]], &cfg).unwrap(), 5.0);
        assert_eq!(gospa(&[], &[], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn tgospa_cases() {
        let cfg = MetricConfig::default();
        let x = two_tracks();
        assert_eq!(tgospa(&x, &x, &cfg).unwrap(), 0.0);

        let x = table(&[(0, 1, 0.0, 0.0), (0, 2, 0.0, 0.0)]);
        let xh = table(&[(0, 1, 0.0, 0.0), (0, 2, 3.0, 4.0)]);
        let g = tgospa(&x, &xh, &cfg).unwrap();
        assert!((g - libm::sqrt(12.5)).abs() < 1e-15);

        // constant per-frame error
        let x = table(&[(0, 1, 0.0, 0.0), (0, 2, 0.0, 0.0), (0, 3, 0.0, 0.0)]);
        let xh = table(&[(0, 1, 1.0, 0.0), (0, 2, 1.0, 0.0), (0, 3, 1.0, 0.0)]);
        assert!((tgospa(&x, &xh, &cfg).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_frames_count_in_average() {
        let cfg = MetricConfig::default();
        let x = table(&[(0, 1, 0.0, 0.0), (0, 4, 0.0, 0.0)]);
        let xh = table(&[(0, 1, 0.0, 0.0)]);
        let g = tgospa(&x, &xh, &cfg).unwrap();
        assert!((g - libm::sqrt(12.5 / 4.0)).abs() < 1e-15);
    }

    fn point_set() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((0.0..12.0f64, 0.0..12.0f64).prop_map(|(x, y)| [x, y]), 0..6)
    }

    proptest! {
        #[test]
        fn gospa_matches_brute_force(a in point_set(), b in point_set()) {
            let cfg = MetricConfig::default();
            let fast = gospa(&a, &b, &cfg).unwrap();
            prop_assert!((fast - gospa_brute(&a, &b, &cfg)).abs() <= 1e-12);
            prop_assert_eq!(fast, gospa(&b, &a, &cfg).unwrap());
            prop_assert_eq!(gospa(&a, &a, &cfg).unwrap(), 0.0);
            let bound = libm::pow(libm::pow(cfg.c, cfg.p) * (a.len() + b.len()) as f64, 1.0 / cfg.p);
            prop_assert!(fast <= bound + 1e-12);
        }

        #[test]
        fn gospa_triangle(a in point_set(), b in point_set(), c in point_set()) {
            let cfg = MetricConfig::default();
            let ab = gospa(&a, &b, &cfg).unwrap();
            let bc = gospa(&b, &c, &cfg).unwrap();
            let ac = gospa(&a, &c, &cfg).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn scores_in_unit_interval(
            gt in prop::collection::vec((0i64..3, 1u32..6, 0.0..10.0f64, 0.0..10.0f64), 0..20),
            pr in prop::collection::vec((0i64..4, 1u32..6, 0.0..10.0f64, 0.0..10.0f64), 0..20),
        ) {
            let dedup = |v: Vec<(i64, u32, f64, f64)>| {
                let mut seen = BTreeSet::new();
                v.into_iter().filter(|r| seen.insert((r.0, r.1))).collect::<Vec<_>>()
            };
            let x = table(&dedup(gt));
            let xh = table(&dedup(pr));
            let r = evaluate(&x, &xh, &MetricConfig::default()).unwrap();
            for v in &r.values()[..7] {
                prop_assert!((0.0..=1.0).contains(v));
            }
            prop_assert!(r.tgospa >= 0.0);
        }
    }
}
