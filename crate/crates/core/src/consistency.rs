//! Forward-backward consistency checks and candidate grids.
//!
//! A retained reference frame is a [`FrameRecord`]: cached features plus the
//! tracked per-point positions ("anchors") at that frame. Scoring a reference
//! against the current frame runs flow forward (anchor -> current) and back
//! (prediction -> reference); the round-trip gap to the anchor is the
//! end-point error (EPE). A low EPE means the two flow estimates are
//! consistent, which is the only self-supervised reliability signal available
//! without ground truth.
//!
//! EPE entries are `Option<f64>`: `None` is the INVALID sentinel (frozen
//! anchor, failed flow) and is excluded from every min/argmin downstream —
//! equivalently it compares greater than any threshold.

use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FrameFeatures};
use crate::geometry::{in_bounds, FrameId, Point2};
use crate::image::GrayImage;

/// A retained reference frame: features plus per-point anchors.
/// `anchor_valid[p] = false` means the point was occluded when this frame was
/// recorded; its anchor is the frozen last-visible position and the record
/// cannot vouch for the point.
pub struct FrameRecord {
    pub frame_id: FrameId,
    pub features: FrameFeatures,
    pub anchors: Vec<Point2>,
    pub anchor_valid: Vec<bool>,
}

impl FrameRecord {
    pub fn new(
        frame_id: FrameId,
        features: FrameFeatures,
        anchors: Vec<Point2>,
        anchor_valid: Vec<bool>,
    ) -> Result<Self> {
        if anchors.len() != anchor_valid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} anchors vs {} validity flags",
                anchors.len(),
                anchor_valid.len()
            )));
        }
        Ok(FrameRecord {
            frame_id,
            features,
            anchors,
            anchor_valid,
        })
    }

    pub fn point_count(&self) -> usize {
        self.anchors.len()
    }
}

/// Dense (frames x points) EPE matrix with an INVALID sentinel (`None`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpeMatrix {
    n_frames: usize,
    n_points: usize,
    values: Vec<Option<f64>>,
}

impl EpeMatrix {
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n_frames = rows.len();
        let n_points = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(n_frames * n_points);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_points {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    n_points
                )));
            }
            for x in row.iter().flatten() {
                if !x.is_finite() || *x < 0.0 {
                    return Err(Error::ContractViolation(format!(
                        "EPE entries must be finite and >= 0, got {}",
                        x
                    )));
                }
            }
            values.extend(row);
        }
        Ok(EpeMatrix {
            n_frames,
            n_points,
            values,
        })
    }

    /// All-valid matrix from a flat row-major value list.
    pub fn from_values(n_frames: usize, n_points: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_frames * n_points {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} matrix",
                values.len(),
                n_frames,
                n_points
            )));
        }
        Self::from_rows(
            values
                .chunks(n_points.max(1))
                .map(|c| c.iter().map(|&v| Some(v)).collect())
                .collect(),
        )
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn get(&self, frame: usize, point: usize) -> Option<f64> {
        self.values[frame * self.n_points + point]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, point: usize, v: Option<f64>) {
        self.values[frame * self.n_points + point] = v;
    }

    /// Smallest valid entry in a column together with its row, or `None` if
    /// the whole column is INVALID. Ties resolve to the lowest row index.
    pub fn column_min(&self, point: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for f in 0..self.n_frames {
            if let Some(v) = self.get(f, point) {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((f, v));
                }
            }
        }
        best
    }
}

/// Dense (frames x points) boolean matrix of mask-occlusion flags.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMatrix {
    n_frames: usize,
    n_points: usize,
    values: Vec<bool>,
}

impl OcclusionMatrix {
    pub fn new(n_frames: usize, n_points: usize) -> Self {
        OcclusionMatrix {
            n_frames,
            n_points,
            values: vec![false; n_frames * n_points],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn get(&self, frame: usize, point: usize) -> bool {
        self.values[frame * self.n_points + point]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, point: usize, v: bool) {
        self.values[frame * self.n_points + point] = v;
    }
}

/// Forward-backward scores of every candidate reference against the current
/// frame. Row order matches the candidate list handed to
/// [`build_candidate_grid`].
#[derive(Debug)]
pub struct CandidateGrid {
    pub frame_ids: Vec<FrameId>,
    /// `predictions[f][p]` — forward-flow position of point `p` from
    /// candidate `f` (the reference anchor when the row is INVALID).
    pub predictions: Vec<Vec<Point2>>,
    pub epe: EpeMatrix,
    pub mask_occluded: OcclusionMatrix,
}

/// Score one reference frame against the current frame.
///
/// For each point with a valid anchor: forward flow displaces the anchor into
/// the current frame, backward flow returns it, and the EPE is the distance
/// between anchor and round-trip result. Points with invalid (frozen)
/// anchors, or where either flow reports invalid, get the INVALID sentinel
/// and their prediction falls back to the anchor.
pub fn forward_backward_epe(
    record: &FrameRecord,
    current: &FrameFeatures,
    backend: &dyn FlowBackend,
) -> Result<(Vec<Point2>, Vec<Option<f64>>)> {
    if record.anchors.len() != record.anchor_valid.len() {
        return Err(Error::DimensionMismatch(
            "anchors vs anchor_valid length".into(),
        ));
    }
    let n = record.anchors.len();
    let fwd = backend.estimate_flow(&record.features, current, &record.anchors)?;
    let back = backend.estimate_flow(current, &record.features, &fwd.displaced)?;
    let mut predictions = Vec::with_capacity(n);
    let mut epe = Vec::with_capacity(n);
    for p in 0..n {
        if !record.anchor_valid[p] || !fwd.valid[p] || !back.valid[p] {
            predictions.push(record.anchors[p]);
            epe.push(None);
        } else {
            predictions.push(fwd.displaced[p]);
            epe.push(Some(record.anchors[p].distance(&back.displaced[p])));
        }
    }
    Ok((predictions, epe))
}

/// Score a whole candidate list and fold in the instrument mask.
///
/// `mask_occluded[f][p]` is true when the prediction falls outside the image
/// or (if a mask is supplied) its nearest pixel is nonzero.
pub fn build_candidate_grid(
    frames: &[&FrameRecord],
    current: &FrameFeatures,
    mask: Option<&GrayImage>,
    backend: &dyn FlowBackend,
) -> Result<CandidateGrid> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no candidate frames".into()));
    }
    let n_points = frames[0].point_count();
    for rec in frames {
        if rec.point_count() != n_points {
            return Err(Error::DimensionMismatch(format!(
                "candidate frame {} has {} points, expected {}",
                rec.frame_id,
                rec.point_count(),
                n_points
            )));
        }
    }
    if let Some(m) = mask {
        if m.width() != current.width() || m.height() != current.height() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs frame {}x{}",
                m.width(),
                m.height(),
                current.width(),
                current.height()
            )));
        }
    }

    let mut frame_ids = Vec::with_capacity(frames.len());
    let mut predictions = Vec::with_capacity(frames.len());
    let mut epe_rows = Vec::with_capacity(frames.len());
    let mut mask_occ = OcclusionMatrix::new(frames.len(), n_points);
    for (fi, rec) in frames.iter().enumerate() {
        let (preds, epes) = forward_backward_epe(rec, current, backend)?;
        for (p, pred) in preds.iter().enumerate() {
            let outside = !in_bounds(*pred, current.width(), current.height());
            let masked = mask.is_some_and(|m| m.contains_point(*pred));
            mask_occ.set(fi, p, outside || masked);
        }
        frame_ids.push(rec.frame_id);
        predictions.push(preds);
        epe_rows.push(epes);
    }
    Ok(CandidateGrid {
        frame_ids,
        predictions,
        epe: EpeMatrix::from_rows(epe_rows)?,
        mask_occluded: mask_occ,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::flow::OracleBackend;
    use crate::rng;
    use crate::synth::{generate_scene, DeformationParams, SceneConfig};
    use crate::test_util::OffsetBackend;

    fn scene_cfg() -> SceneConfig {
        SceneConfig {
            width: 128,
            height: 96,
            frame_count: 12,
            point_count: 25,
            deformation: DeformationParams {
                translation: [0.3, 0.1],
                affine_rate: 0.001,
                nonrigid_amplitude: 1.0,
                nonrigid_wavelength: 40.0,
                temporal_frequency: 0.05,
            },
            occluders: vec![],
            texture_seed: 2,
            rng_seed: 8,
            margin_fraction: 0.15,
        }
    }

    #[test]
    fn exact_oracle_gives_zero_epe_everywhere() {
        let cfg = scene_cfg();
        let (gt, field) = generate_scene(&cfg).unwrap();
        let backend = OracleBackend::exact(field);
        let rec = FrameRecord::new(
            2,
            backend.scene_features(2),
            gt.positions[2].clone(),
            vec![true; cfg.point_count],
        )
        .unwrap();
        let current = backend.scene_features(9);
        let (preds, epes) = forward_backward_epe(&rec, &current, &backend).unwrap();
        for p in 0..cfg.point_count {
            assert!(epes[p].unwrap() < 1e-9, "epe {} at point {}", epes[p].unwrap(), p);
            assert!(preds[p].distance(&gt.positions[9][p]) < 1e-9);
        }
    }

    #[test]
    fn constant_backward_offset_shows_up_as_epe() {
        // Forward flow exact, backward flow off by (3,4): every EPE is 5.
        let backend = OffsetBackend::new(64, 64, (0.0, 0.0), (3.0, 4.0));
        let anchors: Vec<Point2> = (0..6).map(|i| Point2::new(10.0 + i as f64, 20.0)).collect();
        let rec = FrameRecord::new(
            0,
            backend.features(0),
            anchors.clone(),
            vec![true; anchors.len()],
        )
        .unwrap();
        let current = backend.features(1);
        let (_, epes) = forward_backward_epe(&rec, &current, &backend).unwrap();
        for e in &epes {
            assert!((e.unwrap() - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_anchor_is_invalid_prediction_falls_back() {
        let backend = OffsetBackend::new(64, 64, (1.0, 0.0), (0.0, 0.0));
        let anchors = vec![Point2::new(10.0, 10.0), Point2::new(20.0, 20.0)];
        let rec =
            FrameRecord::new(0, backend.features(0), anchors.clone(), vec![true, false]).unwrap();
        let current = backend.features(1);
        let (preds, epes) = forward_backward_epe(&rec, &current, &backend).unwrap();
        assert!(epes[0].is_some());
        assert!(epes[1].is_none(), "frozen anchor must be INVALID");
        assert_eq!(preds[1], anchors[1], "prediction falls back to the anchor");
    }

    #[test]
    fn noisy_epe_mean_matches_simulation_oracle() {
        // sigma = 0.5 on both legs of a pure translation (identity Jacobian):
        // EPE is exactly |n1 + n2| with n ~ N(0, 0.25 I2). A simulation
        // oracle pins the expected mean (~0.886); the spec-level sanity band
        // is [0.4, 0.9].
        let cfg = SceneConfig {
            width: 256,
            height: 192,
            frame_count: 41,
            point_count: 1000,
            deformation: DeformationParams {
                translation: [0.3, 0.2],
                affine_rate: 0.0,
                nonrigid_amplitude: 0.0,
                nonrigid_wavelength: 64.0,
                temporal_frequency: 0.05,
            },
            occluders: vec![],
            texture_seed: 2,
            rng_seed: 8,
            margin_fraction: 0.2,
        };
        let (gt, field) = generate_scene(&cfg).unwrap();
        let backend = OracleBackend::with_noise(field, 0.5, 31).unwrap();
        let mut all = Vec::new();
        for t in 1..cfg.frame_count {
            let rec = FrameRecord::new(
                t - 1,
                backend.scene_features(t - 1),
                gt.positions[(t - 1) as usize].clone(),
                vec![true; cfg.point_count],
            )
            .unwrap();
            let current = backend.scene_features(t);
            let (_, epes) = forward_backward_epe(&rec, &current, &backend).unwrap();
            all.extend(epes.into_iter().flatten());
        }
        assert!(all.len() >= 1000, "spec band is stated over 1e3+ samples");
        let mean = all.iter().sum::<f64>() / all.len() as f64;

        // Monte-Carlo reference for E|n1 + n2|.
        use rand_distr::{Distribution, Normal};
        let mut r = rng::seeded_rng(&[1234]);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let mut acc = 0.0;
        let n = 200_000;
        for _ in 0..n {
            let dx: f64 = normal.sample(&mut r) + normal.sample(&mut r);
            let dy: f64 = normal.sample(&mut r) + normal.sample(&mut r);
            acc += dx.hypot(dy);
        }
        let reference = acc / n as f64;
        assert!(
            (mean - reference).abs() < 0.02,
            "mean EPE {} vs simulated reference {}",
            mean,
            reference
        );
        assert!(mean > 0.4 && mean < 0.9, "mean EPE {} outside sanity band", mean);
    }

    #[test]
    fn grid_rows_follow_candidate_order_and_permutation() {
        let cfg = scene_cfg();
        let (gt, field) = generate_scene(&cfg).unwrap();
        let backend = OracleBackend::with_noise(field, 0.3, 4).unwrap();
        let recs: Vec<FrameRecord> = (0..3u32)
            .map(|t| {
                FrameRecord::new(
                    t,
                    backend.scene_features(t),
                    gt.positions[t as usize].clone(),
                    vec![true; cfg.point_count],
                )
                .unwrap()
            })
            .collect();
        let current = backend.scene_features(5);
        let refs: Vec<&FrameRecord> = recs.iter().collect();
        let grid = build_candidate_grid(&refs, &current, None, &backend).unwrap();
        let reversed: Vec<&FrameRecord> = recs.iter().rev().collect();
        let grid_rev = build_candidate_grid(&reversed, &current, None, &backend).unwrap();
        assert_eq!(grid.frame_ids, vec![0, 1, 2]);
        assert_eq!(grid_rev.frame_ids, vec![2, 1, 0]);
        for p in 0..cfg.point_count {
            assert_eq!(grid.epe.get(0, p), grid_rev.epe.get(2, p));
            assert_eq!(grid.epe.get(2, p), grid_rev.epe.get(0, p));
        }
    }

    #[test]
    fn mask_flags_predictions_inside_mask_and_out_of_bounds() {
        // Mask covers the left half of the image.
        let backend = OffsetBackend::new(64, 64, (0.0, 0.0), (0.0, 0.0));
        let mut mask = GrayImage::new(64, 64);
        for y in 0..64 {
            for x in 0..32 {
                mask.set(x, y, 255);
            }
        }
        let anchors = vec![Point2::new(10.0, 10.0), Point2::new(50.0, 10.0)];
        let rec = FrameRecord::new(0, backend.features(0), anchors, vec![true, true]).unwrap();
        let current = backend.features(1);
        let grid =
            build_candidate_grid(&[&rec], &current, Some(&mask), &backend).unwrap();
        assert!(grid.mask_occluded.get(0, 0), "prediction in masked half");
        assert!(!grid.mask_occluded.get(0, 1), "prediction in free half");
    }

    #[test]
    fn out_of_bounds_prediction_is_flagged_regardless_of_mask() {
        // Forward flow pushes anchors off the image; flag must be set even
        // with no mask supplied.
        let backend = OffsetBackend::new(64, 64, (30.0, 0.0), (0.0, 0.0)).valid_everywhere();
        let anchors = vec![Point2::new(50.0, 10.0)];
        let rec = FrameRecord::new(0, backend.features(0), anchors, vec![true]).unwrap();
        let current = backend.features(1);
        let grid = build_candidate_grid(&[&rec], &current, None, &backend).unwrap();
        assert!(
            grid.mask_occluded.get(0, 0),
            "out-of-bounds prediction must be mask-flagged even without a mask"
        );
    }

    #[test]
    fn ragged_candidate_lists_are_rejected() {
        let backend = OffsetBackend::new(64, 64, (0.0, 0.0), (0.0, 0.0));
        let rec_a = FrameRecord::new(
            0,
            backend.features(0),
            vec![Point2::new(1.0, 1.0)],
            vec![true],
        )
        .unwrap();
        let rec_b = FrameRecord::new(
            1,
            backend.features(1),
            vec![Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)],
            vec![true, true],
        )
        .unwrap();
        let current = backend.features(2);
        let err = build_candidate_grid(&[&rec_a, &rec_b], &current, None, &backend).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn matrix_rejects_negative_and_non_finite() {
        assert!(EpeMatrix::from_values(1, 2, vec![0.0, -1.0]).is_err());
        assert!(EpeMatrix::from_values(1, 1, vec![f64::NAN]).is_err());
        let m = Arc::new(EpeMatrix::from_values(2, 2, vec![1.0, 2.0, 3.0, 0.5]).unwrap());
        assert_eq!(m.column_min(1), Some((1, 0.5)));
    }
}
