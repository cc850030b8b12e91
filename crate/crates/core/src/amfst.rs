//! Adaptive reliable-frame tracking (A-MFST).
//!
//! Instead of a fixed log-spaced reference schedule, this tracker keeps a
//! small set of "reliable" frames and re-derives it every step from the EPE
//! matrix `E` (candidates x points):
//!
//! 1. A point is occluded when every candidate prediction is mask-flagged or
//!    the smallest usable EPE exceeds τ.
//! 2. Columns of occluded points are zeroed so they cannot steer selection.
//! 3. Every size-N combination `C` of the candidate pool (reliable set plus
//!    frame t−1) is scored `E(C) = Σ_p min_{f∈C} E[f][p]`.
//! 4. The cheapest combination becomes the new reliable set; each visible
//!    point takes its prediction from its per-point argmin frame.
//!
//! With the default `N = n_f` and a pool of `n_f + 1`, selection reduces to
//! evicting a single frame (leave-one-out), for which a linear-time path is
//! provided; it is exercised against the generic enumeration in tests.
//! Frames "pinned" by occluded points (their last source frame before
//! occlusion) are never evicted, so a re-appearing point can always be
//! re-anchored to a record that saw it.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::consistency::{build_candidate_grid, EpeMatrix, FrameRecord, OcclusionMatrix};
use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FrameFeatures};
use crate::geometry::{FrameId, Point2};
use crate::image::GrayImage;
use crate::tracker::{validate_queries, PointTracker, TrackOutputFrame, TrackedPoint};

/// Eq.-1-style occlusion test, one flag per point: occluded iff no usable
/// candidate exists (INVALID or mask-flagged everywhere) or the smallest
/// usable EPE exceeds `tau`.
pub fn occlusion_condition(
    epe: &EpeMatrix,
    mask_occluded: &OcclusionMatrix,
    tau: f64,
) -> Result<Vec<bool>> {
    if epe.n_frames() != mask_occluded.n_frames() || epe.n_points() != mask_occluded.n_points() {
        return Err(Error::DimensionMismatch(format!(
            "epe {}x{} vs mask flags {}x{}",
            epe.n_frames(),
            epe.n_points(),
            mask_occluded.n_frames(),
            mask_occluded.n_points()
        )));
    }
    let mut out = Vec::with_capacity(epe.n_points());
    for p in 0..epe.n_points() {
        let mut min_usable: Option<f64> = None;
        for f in 0..epe.n_frames() {
            if mask_occluded.get(f, p) {
                continue;
            }
            if let Some(v) = epe.get(f, p) {
                if min_usable.is_none_or(|m| v < m) {
                    min_usable = Some(v);
                }
            }
        }
        out.push(match min_usable {
            None => true,
            Some(m) => m > tau,
        });
    }
    Ok(out)
}

/// Zero the columns of occluded points (INVALID entries become 0 as well) so
/// they contribute nothing to combination costs.
pub fn zero_occluded_columns(epe: &EpeMatrix, occluded: &[bool]) -> Result<EpeMatrix> {
    if occluded.len() != epe.n_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} occlusion flags for {} points",
            occluded.len(),
            epe.n_points()
        )));
    }
    let mut out = epe.clone();
    for (p, &occ) in occluded.iter().enumerate() {
        if occ {
            for f in 0..epe.n_frames() {
                out.set(f, p, Some(0.0));
            }
        }
    }
    Ok(out)
}

/// One subset of the candidate pool; `rows` index the EPE matrix, `frame_ids`
/// are the corresponding frames. Both are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCombination {
    pub rows: Vec<usize>,
    pub frame_ids: Vec<FrameId>,
}

/// All size-`n` subsets of the candidate list, in lexicographic row order.
pub fn enumerate_combinations(candidates: &[FrameId], n: usize) -> Result<Vec<FrameCombination>> {
    if n == 0 {
        return Err(Error::InvalidInput("combination size must be >= 1".into()));
    }
    if n > candidates.len() {
        return Err(Error::InvalidInput(format!(
            "combination size {} exceeds candidate count {}",
            n,
            candidates.len()
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(n);
    fn recurse(
        candidates: &[FrameId],
        n: usize,
        start: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<FrameCombination>,
    ) {
        if current.len() == n {
            out.push(FrameCombination {
                rows: current.clone(),
                frame_ids: current.iter().map(|&i| candidates[i]).collect(),
            });
            return;
        }
        let needed = n - current.len();
        for i in start..=candidates.len() - needed {
            current.push(i);
            recurse(candidates, n, i + 1, current, out);
            current.pop();
        }
    }
    recurse(candidates, n, 0, &mut current, &mut out);
    Ok(out)
}

/// Eq.-3 cost of one combination: per-point minimum over the member rows,
/// summed. Columns whose member entries are all INVALID contribute +inf —
/// such a combination cannot serve that point and loses to any that can.
pub fn combination_cost(epe: &EpeMatrix, combo: &FrameCombination) -> (f64, Vec<f64>) {
    let mut per_point = Vec::with_capacity(epe.n_points());
    let mut total = 0.0f64;
    for p in 0..epe.n_points() {
        let mut min = f64::INFINITY;
        for &row in &combo.rows {
            if let Some(v) = epe.get(row, p) {
                if v < min {
                    min = v;
                }
            }
        }
        per_point.push(min);
        total += min;
    }
    (total, per_point)
}

/// How `select_optimal` searches the combination space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// Leave-one-out when exactly one frame must be evicted, generic
    /// enumeration otherwise.
    Auto,
    Generic,
    LeaveOneOut,
}

/// Result of Eq.-4 selection: the winning combination, the per-point source
/// assignment (None for occluded or unservable points) and the total cost.
#[derive(Debug, Clone)]
pub struct Selection {
    pub combination: FrameCombination,
    pub assignment: Vec<Option<FrameId>>,
    pub total_cost: f64,
}

fn assign_points(
    epe: &EpeMatrix,
    combo: &FrameCombination,
    candidates: &[FrameId],
    occluded: &[bool],
) -> Vec<Option<FrameId>> {
    let mut out = Vec::with_capacity(epe.n_points());
    for (p, &occ) in occluded.iter().enumerate() {
        if occ {
            out.push(None);
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &row in &combo.rows {
            if let Some(v) = epe.get(row, p) {
                // Strict < keeps the lowest row (oldest frame) on ties.
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((row, v));
                }
            }
        }
        out.push(best.map(|(row, _)| candidates[row]));
    }
    out
}

/// Pick the cheapest combination (Eq. 4) among size-`n` subsets of
/// `candidates` that contain every pinned frame, then assign each visible
/// point to its argmin member frame.
///
/// `epe` must already have occluded columns zeroed. Ties in total cost go to
/// the lexicographically smallest combination; assignment ties go to the
/// lowest frame. If more than `n` frames are pinned the result grows to hold
/// them all (and nothing else).
pub fn select_optimal(
    epe: &EpeMatrix,
    candidates: &[FrameId],
    n: usize,
    occluded: &[bool],
    pinned: &[FrameId],
) -> Result<Selection> {
    select_optimal_with(epe, candidates, n, occluded, pinned, SelectionStrategy::Auto)
}

pub fn select_optimal_with(
    epe: &EpeMatrix,
    candidates: &[FrameId],
    n: usize,
    occluded: &[bool],
    pinned: &[FrameId],
    strategy: SelectionStrategy,
) -> Result<Selection> {
    if epe.n_frames() != candidates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrix rows vs {} candidates",
            epe.n_frames(),
            candidates.len()
        )));
    }
    if occluded.len() != epe.n_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} occlusion flags for {} points",
            occluded.len(),
            epe.n_points()
        )));
    }
    if n == 0 || n > candidates.len() {
        return Err(Error::InvalidInput(format!(
            "combination size {} invalid for {} candidates",
            n,
            candidates.len()
        )));
    }
    let mut pinned_rows: Vec<usize> = Vec::with_capacity(pinned.len());
    for pf in pinned {
        match candidates.iter().position(|c| c == pf) {
            Some(row) => {
                if !pinned_rows.contains(&row) {
                    pinned_rows.push(row);
                }
            }
            None => {
                return Err(Error::ContractViolation(format!(
                    "pinned frame {} not in candidate list",
                    pf
                )))
            }
        }
    }
    pinned_rows.sort_unstable();

    // Pins beyond the budget: the set grows to hold exactly the pins.
    if pinned_rows.len() >= n {
        let combo = FrameCombination {
            frame_ids: pinned_rows.iter().map(|&r| candidates[r]).collect(),
            rows: pinned_rows,
        };
        let (total, _) = combination_cost(epe, &combo);
        let assignment = assign_points(epe, &combo, candidates, occluded);
        return Ok(Selection {
            combination: combo,
            assignment,
            total_cost: total,
        });
    }

    let use_loo = match strategy {
        SelectionStrategy::Generic => false,
        SelectionStrategy::LeaveOneOut => {
            if n != candidates.len() - 1 {
                return Err(Error::InvalidInput(
                    "leave-one-out requires n = candidates - 1".into(),
                ));
            }
            true
        }
        SelectionStrategy::Auto => n == candidates.len() - 1,
    };

    let best_combo = if use_loo {
        leave_one_out_best(epe, candidates.len(), &pinned_rows)
    } else {
        generic_best(epe, candidates, n, &pinned_rows)?
    };
    let combo = FrameCombination {
        frame_ids: best_combo.iter().map(|&r| candidates[r]).collect(),
        rows: best_combo,
    };
    let (total, _) = combination_cost(epe, &combo);
    let assignment = assign_points(epe, &combo, candidates, occluded);
    Ok(Selection {
        combination: combo,
        assignment,
        total_cost: total,
    })
}

/// Generic path: enumerate size-(n - |pins|) subsets of the non-pinned rows
/// in lexicographic order and merge the pins in. Merged combinations appear
/// in full lexicographic order, so "first strictly better" implements the
/// tie-break.
fn generic_best(
    epe: &EpeMatrix,
    candidates: &[FrameId],
    n: usize,
    pinned_rows: &[usize],
) -> Result<Vec<usize>> {
    let free_rows: Vec<usize> = (0..candidates.len())
        .filter(|r| !pinned_rows.contains(r))
        .collect();
    let free_ids: Vec<FrameId> = free_rows.iter().map(|&r| candidates[r]).collect();
    let free_n = n - pinned_rows.len();

    let mut best: Option<(f64, Vec<usize>)> = None;
    if free_n == 0 {
        return Ok(pinned_rows.to_vec());
    }
    for sub in enumerate_combinations(&free_ids, free_n)? {
        let mut rows: Vec<usize> = sub.rows.iter().map(|&i| free_rows[i]).collect();
        rows.extend_from_slice(pinned_rows);
        rows.sort_unstable();
        let combo = FrameCombination {
            frame_ids: rows.iter().map(|&r| candidates[r]).collect(),
            rows,
        };
        let (total, _) = combination_cost(epe, &combo);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, combo.rows));
        }
    }
    Ok(best.expect("at least one combination").1)
}

/// Leave-one-out fast path: per column, find the smallest and second-smallest
/// valid entries once, then score every eviction in one pass. Evictions are
/// tried from the highest row down because dropping a higher row yields a
/// lexicographically smaller combination (matches the generic tie-break).
fn leave_one_out_best(epe: &EpeMatrix, n_candidates: usize, pinned_rows: &[usize]) -> Vec<usize> {
    let mut totals = vec![0.0f64; n_candidates];
    for p in 0..epe.n_points() {
        let mut min1 = f64::INFINITY;
        let mut row1 = usize::MAX;
        let mut min2 = f64::INFINITY;
        for f in 0..n_candidates {
            if let Some(v) = epe.get(f, p) {
                if v < min1 {
                    min2 = min1;
                    min1 = v;
                    row1 = f;
                } else if v < min2 {
                    min2 = v;
                }
            }
        }
        for (f, t) in totals.iter_mut().enumerate() {
            *t += if f == row1 { min2 } else { min1 };
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for drop in (0..n_candidates).rev() {
        if pinned_rows.contains(&drop) {
            continue;
        }
        if best.is_none_or(|(b, _)| totals[drop] < b) {
            best = Some((totals[drop], drop));
        }
    }
    let drop = best.expect("at least one evictable row").1;
    (0..n_candidates).filter(|&r| r != drop).collect()
}

/// Replace mask-flagged entries with INVALID so cost and assignment skip
/// them, mirroring their exclusion from the occlusion test.
pub(crate) fn fold_mask(epe: &EpeMatrix, mask_occluded: &OcclusionMatrix) -> EpeMatrix {
    let mut out = epe.clone();
    for f in 0..epe.n_frames() {
        for p in 0..epe.n_points() {
            if mask_occluded.get(f, p) {
                out.set(f, p, None);
            }
        }
    }
    out
}

/// A-MFST configuration.
#[derive(Debug, Clone)]
pub struct AmfstConfig {
    /// Size of the reliable-frame set.
    pub n_f: usize,
    /// Combination size N selected each step (defaults to `n_f`, i.e. evict
    /// exactly one frame from the pool of `n_f + 1`).
    pub combo_size: usize,
    /// Occlusion threshold, px.
    pub tau: f64,
}

impl AmfstConfig {
    pub fn new(n_f: usize, tau: f64) -> Self {
        AmfstConfig {
            n_f,
            combo_size: n_f,
            tau,
        }
    }

    pub fn with_combo_size(mut self, n: usize) -> Self {
        self.combo_size = n;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_f == 0 {
            return Err(Error::InvalidInput("n_f must be >= 1".into()));
        }
        if self.combo_size == 0 || self.combo_size > self.n_f + 1 {
            return Err(Error::InvalidInput(format!(
                "combo_size {} outside [1, n_f + 1 = {}]",
                self.combo_size,
                self.n_f + 1
            )));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

struct AmfstPoint {
    position: Point2,
    occluded: bool,
    /// Frame kept alive for re-detection while occluded.
    pinned_frame: Option<FrameId>,
    /// Source of the last accepted position (frame 0 right after init).
    last_source: FrameId,
}

/// Adaptive reliable-frame tracker.
pub struct AmfstTracker {
    config: AmfstConfig,
    backend: Arc<dyn FlowBackend>,
    width: u32,
    height: u32,
    /// Current reliable set (ascending); record for every member is retained.
    reliable: Vec<FrameId>,
    /// Most recent frame's record id (the t−1 candidate of the next step).
    latest: FrameId,
    records: BTreeMap<FrameId, FrameRecord>,
    points: Vec<AmfstPoint>,
    next_frame: FrameId,
}

impl AmfstTracker {
    /// Initialize at frame 0 with the given query points.
    pub fn new(
        backend: Arc<dyn FlowBackend>,
        features: FrameFeatures,
        queries: &[Point2],
        config: AmfstConfig,
    ) -> Result<Self> {
        config.validate()?;
        validate_queries(queries, features.width(), features.height())?;
        let (width, height) = (features.width(), features.height());
        let frame0 = features.frame_id();
        if frame0 != 0 {
            return Err(Error::ContractViolation(format!(
                "tracker must be initialized with frame 0, got {}",
                frame0
            )));
        }
        let record = FrameRecord::new(0, features, queries.to_vec(), vec![true; queries.len()])?;
        let mut records = BTreeMap::new();
        records.insert(0, record);
        Ok(AmfstTracker {
            config,
            backend,
            width,
            height,
            reliable: Vec::new(),
            latest: 0,
            records,
            points: queries
                .iter()
                .map(|&q| AmfstPoint {
                    position: q,
                    occluded: false,
                    pinned_frame: None,
                    last_source: 0,
                })
                .collect(),
            next_frame: 1,
        })
    }

    /// Current reliable set (ascending frame ids).
    pub fn reliable_frames(&self) -> &[FrameId] {
        &self.reliable
    }

    /// Number of frame records currently held.
    pub fn retained_record_count(&self) -> usize {
        self.records.len()
    }

    /// (occluded, pinned_frame) of one point.
    pub fn point_status(&self, p: usize) -> (bool, Option<FrameId>) {
        (self.points[p].occluded, self.points[p].pinned_frame)
    }

    fn candidate_ids(&self) -> Vec<FrameId> {
        let mut ids = self.reliable.clone();
        if !ids.contains(&self.latest) {
            ids.push(self.latest);
        }
        ids.sort_unstable();
        ids
    }

    fn output(&self, frame_id: FrameId) -> TrackOutputFrame {
        TrackOutputFrame {
            frame_id,
            points: self
                .points
                .iter()
                .map(|pt| TrackedPoint {
                    position: pt.position,
                    occluded: pt.occluded,
                    source_frame: if pt.occluded || frame_id == 0 {
                        None
                    } else {
                        Some(pt.last_source)
                    },
                })
                .collect(),
        }
    }
}

impl PointTracker for AmfstTracker {
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

        let candidates = self.candidate_ids();
        let recs: Vec<&FrameRecord> = candidates
            .iter()
            .map(|id| self.records.get(id).expect("candidate record retained"))
            .collect();
        let grid = build_candidate_grid(&recs, &features, mask, self.backend.as_ref())?;

        let occluded_now = occlusion_condition(&grid.epe, &grid.mask_occluded, self.config.tau)?;

        // Pins that constrain this step: points that remain occluded keep
        // their pin, newly occluded points pin their previous source. Points
        // that re-appear this step keep their pin alive through selection so
        // the re-detecting record stays assignable; it is released after.
        let mut pins: Vec<FrameId> = Vec::new();
        for (p, occ) in occluded_now.iter().enumerate() {
            let pin = if *occ {
                match self.points[p].pinned_frame {
                    Some(f) => Some(f),
                    None => Some(self.points[p].last_source),
                }
            } else {
                self.points[p].pinned_frame
            };
            if let Some(f) = pin {
                if !pins.contains(&f) {
                    pins.push(f);
                }
            }
            if *occ {
                self.points[p].pinned_frame = Some(match self.points[p].pinned_frame {
                    Some(f) => f,
                    None => self.points[p].last_source,
                });
            }
        }

        let usable = fold_mask(&grid.epe, &grid.mask_occluded);
        let zeroed = zero_occluded_columns(&usable, &occluded_now)?;
        let n = self.config.combo_size.min(candidates.len());
        let selection = select_optimal(&zeroed, &candidates, n, &occluded_now, &pins)?;

        // Apply per-point outcomes.
        let row_of: BTreeMap<FrameId, usize> = selection
            .combination
            .rows
            .iter()
            .map(|&r| (candidates[r], r))
            .collect();
        for (p, point) in self.points.iter_mut().enumerate() {
            if occluded_now[p] {
                point.occluded = true;
                continue; // position stays frozen, pin already set
            }
            match selection.assignment[p] {
                Some(src) => {
                    let row = row_of[&src];
                    point.position = grid.predictions[row][p];
                    point.occluded = false;
                    point.last_source = src;
                    point.pinned_frame = None;
                }
                None => {
                    // Visible by Eq. 1 but no usable entry inside C*; freeze
                    // conservatively and keep the pin so it can recover.
                    point.occluded = true;
                    point.pinned_frame = Some(point.pinned_frame.unwrap_or(point.last_source));
                }
            }
        }

        // Reliable set <- C*; retain exactly its records plus the new frame.
        self.reliable = selection.combination.frame_ids.clone();
        let record = FrameRecord::new(
            t,
            features,
            self.points.iter().map(|pt| pt.position).collect(),
            self.points.iter().map(|pt| !pt.occluded).collect(),
        )?;
        self.records.insert(t, record);
        self.latest = t;
        let keep: Vec<FrameId> = self
            .reliable
            .iter()
            .copied()
            .chain(std::iter::once(t))
            .collect();
        self.records.retain(|id, _| keep.contains(id));
        self.next_frame = t + 1;

        Ok(self.output(t))
    }

    fn point_count(&self) -> usize {
        self.points.len()
    }

    fn next_frame_id(&self) -> FrameId {
        self.next_frame
    }
}
