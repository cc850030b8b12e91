//! Tracking-quality metrics: mean endpoint error, mean chamfer distance,
//! threshold accuracy δ, occluded-point δ<64, and the error-over-duration
//! curve.
//!
//! Inclusion convention: a point-frame pair enters MEE/δ iff ground truth
//! marks the point visible there. Predictions flagged occluded by the
//! tracker are still scored at their frozen position. δ<64 is the complement
//! view: it scores exactly the ground-truth-occluded pairs.
//!
//! MCD is the symmetric average chamfer distance
//! `(mean_pred nearest-gt + mean_gt nearest-pred) / 2`, computed per frame on
//! the visible subsets and averaged over frames that have at least one pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// δ accuracy thresholds, px.
pub const DELTA_THRESHOLDS_PX: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

/// Report schema version (bump on breaking field changes).
pub const REPORT_VERSION: u32 = 1;

fn check_aligned(pred: &[Point2], gt: &[Point2], flags: &[bool]) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != flags.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions, {} ground-truth points, {} flags",
            pred.len(),
            gt.len(),
            flags.len()
        )));
    }
    Ok(())
}

/// Mean Euclidean error over the included pairs.
pub fn mee(pred: &[Point2], gt: &[Point2], include: &[bool]) -> Result<f64> {
    check_aligned(pred, gt, include)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if include[i] {
            sum += pred[i].distance(&gt[i]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("MEE over zero included pairs".into()));
    }
    Ok(sum / n as f64)
}

fn mean_nearest(from: &[Point2], to: &[Point2]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| a.distance(b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric mean chamfer distance between two non-empty point sets.
pub fn mcd(pred_set: &[Point2], gt_set: &[Point2]) -> Result<f64> {
    if pred_set.is_empty() || gt_set.is_empty() {
        return Err(Error::UndefinedMetric(
            "MCD of an empty point set".into(),
        ));
    }
    Ok((mean_nearest(pred_set, gt_set) + mean_nearest(gt_set, pred_set)) / 2.0)
}

/// Fraction of included pairs with error strictly under `threshold`.
pub fn delta_fraction(
    pred: &[Point2],
    gt: &[Point2],
    include: &[bool],
    threshold: f64,
) -> Result<f64> {
    check_aligned(pred, gt, include)?;
    let mut hit = 0usize;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if include[i] {
            n += 1;
            if pred[i].distance(&gt[i]) < threshold {
                hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("δ over zero included pairs".into()));
    }
    Ok(hit as f64 / n as f64)
}

/// δ averaged over the standard thresholds [4, 8, 16, 32, 64] px.
pub fn delta_avg(pred: &[Point2], gt: &[Point2], include: &[bool]) -> Result<f64> {
    let sum: f64 = DELTA_THRESHOLDS_PX
        .iter()
        .map(|&t| delta_fraction(pred, gt, include, t))
        .sum::<Result<f64>>()?;
    Ok(sum / DELTA_THRESHOLDS_PX.len() as f64)
}

/// Fraction of mask-occluded pairs with error under 64 px.
pub fn delta64_occluded(
    pred: &[Point2],
    gt: &[Point2],
    occluded_by_mask: &[bool],
) -> Result<f64> {
    check_aligned(pred, gt, occluded_by_mask)?;
    if !occluded_by_mask.iter().any(|&o| o) {
        return Err(Error::UndefinedMetric(
            "δ<64 with no mask-occluded pairs".into(),
        ));
    }
    delta_fraction(pred, gt, occluded_by_mask, 64.0)
}

/// Per-frame MEE over ground-truth-visible points. Frames with no visible
/// point are skipped, so the result may be shorter than the input.
pub fn mee_over_duration(
    pred: &[Vec<Point2>],
    gt: &[Vec<Point2>],
    gt_occluded: &[Vec<bool>],
) -> Result<Vec<(u32, f64)>> {
    if pred.len() != gt.len() || pred.len() != gt_occluded.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted frames, {} ground-truth frames, {} occlusion frames",
            pred.len(),
            gt.len(),
            gt_occluded.len()
        )));
    }
    let mut out = Vec::with_capacity(pred.len());
    for t in 0..pred.len() {
        let include: Vec<bool> = gt_occluded[t].iter().map(|&o| !o).collect();
        if include.iter().any(|&v| v) {
            out.push((t as u32, mee(&pred[t], &gt[t], &include)?));
        }
    }
    Ok(out)
}

/// Point-frame pair counts behind each metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    /// Ground-truth-visible pairs scored by MEE and δ_avg.
    pub visible_pairs: usize,
    /// Ground-truth-occluded pairs scored by δ<64.
    pub occluded_pairs: usize,
    /// Frames contributing to the MCD average.
    pub mcd_frames: usize,
}

/// One run's metric suite, serializable as versioned JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub mee_px: f64,
    pub mcd_px: f64,
    pub delta_avg: f64,
    /// None when the run has no ground-truth-occluded pair.
    pub delta64_occluded: Option<f64>,
    pub mee_by_duration: Vec<(u32, f64)>,
    pub counts: MetricCounts,
}

/// Score a full run: `pred[t][p]` against `gt[t][p]` with
/// `gt_occluded[t][p]` marking pairs hidden in ground truth.
pub fn evaluate_run(
    pred: &[Vec<Point2>],
    gt: &[Vec<Point2>],
    gt_occluded: &[Vec<bool>],
) -> Result<MetricsReport> {
    if pred.len() != gt.len() || pred.len() != gt_occluded.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted frames, {} ground-truth frames, {} occlusion frames",
            pred.len(),
            gt.len(),
            gt_occluded.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("run with zero frames".into()));
    }

    // Flatten with the visibility convention, tracking per-frame subsets for
    // MCD along the way.
    let mut flat_pred = Vec::new();
    let mut flat_gt = Vec::new();
    let mut flat_visible = Vec::new();
    let mut flat_occluded = Vec::new();
    let mut mcd_sum = 0.0;
    let mut mcd_frames = 0usize;
    for t in 0..pred.len() {
        check_aligned(&pred[t], &gt[t], &gt_occluded[t]).map_err(|_| {
            Error::DimensionMismatch(format!(
                "frame {}: {} predictions vs {} ground-truth points vs {} flags",
                t,
                pred[t].len(),
                gt[t].len(),
                gt_occluded[t].len()
            ))
        })?;
        let mut frame_pred = Vec::new();
        let mut frame_gt = Vec::new();
        for p in 0..pred[t].len() {
            let visible = !gt_occluded[t][p];
            flat_pred.push(pred[t][p]);
            flat_gt.push(gt[t][p]);
            flat_visible.push(visible);
            flat_occluded.push(!visible);
            if visible {
                frame_pred.push(pred[t][p]);
                frame_gt.push(gt[t][p]);
            }
        }
        if !frame_pred.is_empty() {
            mcd_sum += mcd(&frame_pred, &frame_gt)?;
            mcd_frames += 1;
        }
    }
    if mcd_frames == 0 {
        return Err(Error::UndefinedMetric(
            "no frame has a ground-truth-visible point".into(),
        ));
    }

    let occluded_pairs = flat_occluded.iter().filter(|&&o| o).count();
    Ok(MetricsReport {
        version: REPORT_VERSION,
        mee_px: mee(&flat_pred, &flat_gt, &flat_visible)?,
        mcd_px: mcd_sum / mcd_frames as f64,
        delta_avg: delta_avg(&flat_pred, &flat_gt, &flat_visible)?,
        delta64_occluded: if occluded_pairs > 0 {
            Some(delta64_occluded(&flat_pred, &flat_gt, &flat_occluded)?)
        } else {
            None
        },
        mee_by_duration: mee_over_duration(pred, gt, gt_occluded)?,
        counts: MetricCounts {
            visible_pairs: flat_visible.iter().filter(|&&v| v).count(),
            occluded_pairs,
            mcd_frames,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn pts(coords: &[(f64, f64)]) -> Vec<Point2> {
        coords.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn mee_worked_examples() {
        let gt = pts(&[(0.0, 0.0), (10.0, 10.0)]);
        assert_eq!(mee(&gt, &gt, &[true, true]).unwrap(), 0.0);
        let off = pts(&[(3.0, 4.0)]);
        assert_eq!(mee(&off, &pts(&[(0.0, 0.0)]), &[true]).unwrap(), 5.0);
        let two = pts(&[(2.0, 0.0), (0.0, 4.0)]);
        let origin = pts(&[(0.0, 0.0), (0.0, 0.0)]);
        assert_eq!(mee(&two, &origin, &[true, true]).unwrap(), 3.0);
        // Exclusion drops the second pair.
        assert_eq!(mee(&two, &origin, &[true, false]).unwrap(), 2.0);
        assert!(matches!(
            mee(&two, &origin, &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(mee(&two, &origin, &[true]).is_err());
    }

    #[test]
    fn mcd_worked_examples() {
        let a = pts(&[(1.0, 2.0), (5.0, 5.0)]);
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        assert_eq!(
            mcd(&pts(&[(0.0, 0.0)]), &pts(&[(3.0, 4.0)])).unwrap(),
            5.0
        );
        let pred = pts(&[(0.0, 0.0), (10.0, 0.0)]);
        let gt = pts(&[(0.0, 0.0)]);
        assert_eq!(mcd(&pred, &gt).unwrap(), 2.5);
        assert!(matches!(mcd(&[], &gt), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mcd_is_symmetric() {
        let mut r = rng::seeded_rng(&[0xc0de]);
        for _ in 0..50 {
            let n = r.gen_range(1..20);
            let m = r.gen_range(1..20);
            let a: Vec<Point2> = (0..n)
                .map(|_| Point2::new(r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0)))
                .collect();
            let b: Vec<Point2> = (0..m)
                .map(|_| Point2::new(r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0)))
                .collect();
            assert_eq!(mcd(&a, &b).unwrap(), mcd(&b, &a).unwrap());
        }
    }

    #[test]
    fn delta_worked_examples() {
        let gt = pts(&[(0.0, 0.0)]);
        let inc = [true];
        assert_eq!(delta_avg(&gt, &gt, &inc).unwrap(), 1.0);
        // Error 5: within {8, 16, 32, 64} -> 4/5.
        assert_eq!(delta_avg(&pts(&[(3.0, 4.0)]), &gt, &inc).unwrap(), 0.8);
        assert_eq!(delta_avg(&pts(&[(100.0, 0.0)]), &gt, &inc).unwrap(), 0.0);
    }

    #[test]
    fn delta_is_monotone_in_threshold() {
        let mut r = rng::seeded_rng(&[7]);
        let n = 60;
        let gt: Vec<Point2> = (0..n)
            .map(|_| Point2::new(r.gen_range(0.0..100.0), r.gen_range(0.0..100.0)))
            .collect();
        let pred: Vec<Point2> = gt
            .iter()
            .map(|p| p.offset(r.gen_range(-40.0..40.0), r.gen_range(-40.0..40.0)))
            .collect();
        let inc = vec![true; n];
        let mut prev = 0.0;
        for t in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0] {
            let d = delta_fraction(&pred, &gt, &inc, t).unwrap();
            assert!(d >= prev, "δ decreased between thresholds");
            prev = d;
        }
    }

    #[test]
    fn delta64_occluded_worked_examples() {
        let gt = pts(&[(0.0, 0.0), (0.0, 0.0)]);
        let near_far = pts(&[(10.0, 0.0), (100.0, 0.0)]);
        assert_eq!(
            delta64_occluded(&pts(&[(10.0, 0.0)]), &pts(&[(0.0, 0.0)]), &[true]).unwrap(),
            1.0
        );
        assert_eq!(delta64_occluded(&near_far, &gt, &[true, true]).unwrap(), 0.5);
        assert!(matches!(
            delta64_occluded(&near_far, &gt, &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn mee_is_permutation_invariant() {
        let mut r = rng::seeded_rng(&[99]);
        let n = 40;
        let gt: Vec<Point2> = (0..n)
            .map(|_| Point2::new(r.gen_range(0.0..10.0), r.gen_range(0.0..10.0)))
            .collect();
        let pred: Vec<Point2> = gt
            .iter()
            .map(|p| p.offset(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)))
            .collect();
        let inc = vec![true; n];
        let base = mee(&pred, &gt, &inc).unwrap();
        // Reverse both sides: same multiset of pairs.
        let pred_r: Vec<Point2> = pred.iter().rev().copied().collect();
        let gt_r: Vec<Point2> = gt.iter().rev().copied().collect();
        let rev = mee(&pred_r, &gt_r, &inc).unwrap();
        assert!((base - rev).abs() < 1e-12);
    }

    #[test]
    fn duration_curve_tracks_linear_drift() {
        let n_frames = 30usize;
        let n_pts = 8usize;
        let d = 0.75;
        let gt: Vec<Vec<Point2>> = (0..n_frames)
            .map(|_| (0..n_pts).map(|p| Point2::new(p as f64, 0.0)).collect())
            .collect();
        let pred: Vec<Vec<Point2>> = (0..n_frames)
            .map(|t| {
                (0..n_pts)
                    .map(|p| Point2::new(p as f64 + d * t as f64, 0.0))
                    .collect()
            })
            .collect();
        let occ = vec![vec![false; n_pts]; n_frames];
        let curve = mee_over_duration(&pred, &gt, &occ).unwrap();
        assert_eq!(curve.len(), n_frames);
        for &(t, e) in &curve {
            assert!((e - d * t as f64).abs() < 1e-12, "t={} e={}", t, e);
        }
        // Exact tracking -> all zeros.
        let zero = mee_over_duration(&gt, &gt, &occ).unwrap();
        assert!(zero.iter().all(|&(_, e)| e == 0.0));
    }

    #[test]
    fn duration_curve_skips_fully_occluded_frames() {
        let gt = vec![pts(&[(1.0, 1.0)]), pts(&[(2.0, 2.0)]), pts(&[(3.0, 3.0)])];
        let occ = vec![vec![false], vec![true], vec![false]];
        let curve = mee_over_duration(&gt, &gt, &occ).unwrap();
        assert_eq!(curve.iter().map(|&(t, _)| t).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn random_walk_mee_grows_like_sqrt_t() {
        // Median-over-seeds MEE of a pure random walk: log-log slope vs t
        // should sit near 0.5.
        let n_frames = 64usize;
        let n_pts = 50usize;
        let seeds = 15u64;
        let mut per_seed: Vec<Vec<f64>> = Vec::new();
        for s in 0..seeds {
            let mut r = rng::seeded_rng(&[0xa1b2, s]);
            let mut pos = vec![(0.0f64, 0.0f64); n_pts];
            let mut curve = Vec::new();
            for _t in 1..n_frames {
                for p in pos.iter_mut() {
                    p.0 += r.gen_range(-1.0..1.0);
                    p.1 += r.gen_range(-1.0..1.0);
                }
                let mee_t =
                    pos.iter().map(|p| p.0.hypot(p.1)).sum::<f64>() / n_pts as f64;
                curve.push(mee_t);
            }
            per_seed.push(curve);
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in 4..n_frames {
            let mut vals: Vec<f64> = per_seed.iter().map(|c| c[t - 1]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = vals[vals.len() / 2];
            xs.push((t as f64).ln());
            ys.push(median.ln());
        }
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope - 0.5).abs() <= 0.15,
            "random-walk growth slope {} outside 0.5 ± 0.15",
            slope
        );
    }

    #[test]
    fn metrics_match_brute_force_reference() {
        let mut r = rng::seeded_rng(&[0xbf]);
        for _ in 0..40 {
            let n = r.gen_range(1..=200usize);
            let gt: Vec<Point2> = (0..n)
                .map(|_| Point2::new(r.gen_range(0.0..500.0), r.gen_range(0.0..500.0)))
                .collect();
            let pred: Vec<Point2> = gt
                .iter()
                .map(|p| p.offset(r.gen_range(-80.0..80.0), r.gen_range(-80.0..80.0)))
                .collect();
            let include: Vec<bool> = (0..n).map(|_| r.gen_bool(0.8)).collect();
            if !include.iter().any(|&v| v) {
                continue;
            }

            // Independent reference: explicit loops, sqrt form.
            let mut sum = 0.0;
            let mut cnt = 0;
            for i in 0..n {
                if include[i] {
                    let dx = pred[i].x - gt[i].x;
                    let dy = pred[i].y - gt[i].y;
                    sum += (dx * dx + dy * dy).sqrt();
                    cnt += 1;
                }
            }
            let ref_mee = sum / cnt as f64;
            let got = mee(&pred, &gt, &include).unwrap();
            assert!((got - ref_mee).abs() <= 1e-9 * ref_mee.max(1.0));

            let ref_mcd = {
                let near = |a: &[Point2], b: &[Point2]| -> f64 {
                    a.iter()
                        .map(|p| {
                            b.iter()
                                .map(|q| {
                                    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
                                })
                                .fold(f64::INFINITY, f64::min)
                        })
                        .sum::<f64>()
                        / a.len() as f64
                };
                (near(&pred, &gt) + near(&gt, &pred)) / 2.0
            };
            let got_mcd = mcd(&pred, &gt).unwrap();
            assert!((got_mcd - ref_mcd).abs() <= 1e-9 * ref_mcd.max(1.0));
        }
    }

    #[test]
    fn evaluate_run_report_shape_and_json_fields() {
        let gt = vec![
            pts(&[(10.0, 10.0), (20.0, 20.0)]),
            pts(&[(11.0, 10.0), (21.0, 20.0)]),
        ];
        let occ = vec![vec![false, false], vec![false, true]];
        let report = evaluate_run(&gt, &gt, &occ).unwrap();
        assert_eq!(report.version, REPORT_VERSION);
        assert_eq!(report.mee_px, 0.0);
        assert_eq!(report.mcd_px, 0.0);
        assert_eq!(report.delta_avg, 1.0);
        assert_eq!(report.delta64_occluded, Some(1.0));
        assert_eq!(report.counts.visible_pairs, 3);
        assert_eq!(report.counts.occluded_pairs, 1);
        assert_eq!(report.counts.mcd_frames, 2);
        assert_eq!(report.mee_by_duration.len(), 2);

        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "version",
            "mee_px",
            "mcd_px",
            "delta_avg",
            "delta64_occluded",
            "mee_by_duration",
            "counts",
        ] {
            assert!(json.get(key).is_some(), "missing JSON field {}", key);
        }

        // No occluded pair anywhere -> δ<64 absent, not an error.
        let none = evaluate_run(&gt, &gt, &vec![vec![false, false]; 2]).unwrap();
        assert_eq!(none.delta64_occluded, None);
    }
}
