//! Fixed-schedule multi-frame tracking (MFST).
//!
//! Every step compares the current frame against a log-spaced set of past
//! references — frame 0 plus `t − Δ` for Δ in `{1, 2, 4, 8, 16, 32}` by
//! default — and re-anchors each point independently to whichever reference
//! round-trips with the smallest forward-backward EPE. A point whose best
//! usable EPE exceeds τ (or that has no usable candidate at all) is flagged
//! occluded and frozen until a later frame re-detects it.
//!
//! Memory is bounded: only frame 0 and the trailing `max(Δ)` frames can ever
//! be referenced again, so older records are dropped as the window slides.
//!
//! `MfstConfig::chain` degenerates the schedule to the previous frame only,
//! giving the classic drift-prone chain tracker used as a baseline.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::amfst::{fold_mask, occlusion_condition};
use crate::consistency::{build_candidate_grid, FrameRecord};
use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FrameFeatures};
use crate::geometry::{FrameId, Point2};
use crate::image::GrayImage;
use crate::tracker::{validate_queries, PointTracker, TrackOutputFrame, TrackedPoint};

/// Default reference intervals Δ.
pub const DEFAULT_INTERVALS: [u32; 6] = [1, 2, 4, 8, 16, 32];

/// MFST configuration.
#[derive(Debug, Clone)]
pub struct MfstConfig {
    /// Reference intervals Δ; candidates are `t − Δ` where that is a valid
    /// past frame.
    pub intervals: Vec<u32>,
    /// Always include frame 0 as a candidate (drift anchor).
    pub include_frame_zero: bool,
    /// Occlusion threshold, px.
    pub tau: f64,
}

impl MfstConfig {
    pub fn new(tau: f64) -> Self {
        MfstConfig {
            intervals: DEFAULT_INTERVALS.to_vec(),
            include_frame_zero: true,
            tau,
        }
    }

    /// Previous-frame-only chain tracker (drift baseline).
    pub fn chain(tau: f64) -> Self {
        MfstConfig {
            intervals: vec![1],
            include_frame_zero: false,
            tau,
        }
    }

    pub fn with_intervals(mut self, intervals: Vec<u32>) -> Self {
        self.intervals = intervals;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::InvalidInput("intervals must be non-empty".into()));
        }
        if self.intervals.contains(&0) {
            return Err(Error::InvalidInput("interval 0 is not a past frame".into()));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Candidate reference frames for step `t`, ascending and deduplicated.
    /// When frame 0 is included explicitly, `t − Δ` candidates stop at 1 so
    /// frame 0 never appears twice.
    pub fn candidate_frames(&self, t: FrameId) -> Vec<FrameId> {
        let floor: FrameId = if self.include_frame_zero { 1 } else { 0 };
        let mut ids: Vec<FrameId> = Vec::new();
        if self.include_frame_zero {
            ids.push(0);
        }
        for &delta in &self.intervals {
            if t >= delta && t - delta >= floor {
                let c = t - delta;
                if !ids.contains(&c) {
                    ids.push(c);
                }
            }
        }
        ids.sort_unstable();
        ids
    }

    fn max_interval(&self) -> u32 {
        *self.intervals.iter().max().expect("validated non-empty")
    }
}

struct MfstPoint {
    position: Point2,
    occluded: bool,
    last_source: FrameId,
}

/// Fixed-schedule tracker.
pub struct MfstTracker {
    config: MfstConfig,
    backend: Arc<dyn FlowBackend>,
    width: u32,
    height: u32,
    records: BTreeMap<FrameId, FrameRecord>,
    points: Vec<MfstPoint>,
    next_frame: FrameId,
}

impl MfstTracker {
    /// Initialize at frame 0 with the given query points.
    pub fn new(
        backend: Arc<dyn FlowBackend>,
        features: FrameFeatures,
        queries: &[Point2],
        config: MfstConfig,
    ) -> Result<Self> {
        config.validate()?;
        validate_queries(queries, features.width(), features.height())?;
        if features.frame_id() != 0 {
            return Err(Error::ContractViolation(format!(
                "tracker must be initialized with frame 0, got {}",
                features.frame_id()
            )));
        }
        let (width, height) = (features.width(), features.height());
        let record = FrameRecord::new(0, features, queries.to_vec(), vec![true; queries.len()])?;
        let mut records = BTreeMap::new();
        records.insert(0, record);
        Ok(MfstTracker {
            config,
            backend,
            width,
            height,
            records,
            points: queries
                .iter()
                .map(|&q| MfstPoint {
                    position: q,
                    occluded: false,
                    last_source: 0,
                })
                .collect(),
            next_frame: 1,
        })
    }

    /// Number of frame records currently held.
    pub fn retained_record_count(&self) -> usize {
        self.records.len()
    }
}

impl PointTracker for MfstTracker {
    fn initial_frame(&self) -> TrackOutputFrame {
        TrackOutputFrame {
            frame_id: 0,
            points: self
                .points
                .iter()
                .map(|pt| TrackedPoint {
                    position: pt.position,
                    occluded: false,
                    source_frame: None,
                })
                .collect(),
        }
    }

    fn step(
        &mut self,
        features: FrameFeatures,
        mask: Option<&GrayImage>,
    ) -> Result<TrackOutputFrame> {
        let t = self.next_frame;
        if features.frame_id() != t {
            return Err(Error::ContractViolation(format!(
                "expected frame {}, got {}",
                t,
                features.frame_id()
            )));
        }
        if features.width() != self.width || features.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "frame {}x{} vs tracker {}x{}",
                features.width(),
                features.height(),
                self.width,
                self.height
            )));
        }

        let candidates = self.config.candidate_frames(t);
        let recs: Vec<&FrameRecord> = candidates
            .iter()
            .map(|id| self.records.get(id).expect("scheduled record retained"))
            .collect();
        let grid = build_candidate_grid(&recs, &features, mask, self.backend.as_ref())?;

        let occluded = occlusion_condition(&grid.epe, &grid.mask_occluded, self.config.tau)?;
        let usable = fold_mask(&grid.epe, &grid.mask_occluded);
        for (p, occ) in occluded.iter().enumerate() {
            if *occ {
                self.points[p].occluded = true;
                continue; // frozen at the pre-occlusion position
            }
            let (row, _) = usable
                .column_min(p)
                .expect("visible point has a usable candidate");
            self.points[p].position = grid.predictions[row][p];
            self.points[p].occluded = false;
            self.points[p].last_source = candidates[row];
        }

        let record = FrameRecord::new(
            t,
            features,
            self.points.iter().map(|pt| pt.position).collect(),
            self.points.iter().map(|pt| !pt.occluded).collect(),
        )?;
        self.records.insert(t, record);
        // Slide the window: keep frame 0 (if scheduled) plus the trailing
        // max(Δ) frames (t − max Δ, t]. The next step's oldest non-zero
        // candidate is (t + 1) − max Δ, which that half-open window covers.
        let window = self.config.max_interval();
        let keep_zero = self.config.include_frame_zero;
        self.records
            .retain(|&id, _| (keep_zero && id == 0) || id + window > t);
        self.next_frame = t + 1;

        Ok(TrackOutputFrame {
            frame_id: t,
            points: self
                .points
                .iter()
                .map(|pt| TrackedPoint {
                    position: pt.position,
                    occluded: pt.occluded,
                    source_frame: if pt.occluded {
                        None
                    } else {
                        Some(pt.last_source)
                    },
                })
                .collect(),
        })
    }

    fn point_count(&self) -> usize {
        self.points.len()
    }

    fn next_frame_id(&self) -> FrameId {
        self.next_frame
    }
}
