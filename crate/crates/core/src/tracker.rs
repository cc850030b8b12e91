//! Types shared by the point trackers.

use crate::error::{Error, Result};
use crate::flow::FrameFeatures;
use crate::geometry::{in_bounds, FrameId, Point2};
use crate::image::GrayImage;

/// Per-point output of one tracked frame. An occluded point reports its
/// frozen last-visible position and no source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPoint {
    pub position: Point2,
    pub occluded: bool,
    /// Reference frame whose prediction was accepted (visible points only).
    pub source_frame: Option<FrameId>,
}

/// All points at one frame.
#[derive(Debug, Clone)]
pub struct TrackOutputFrame {
    pub frame_id: FrameId,
    pub points: Vec<TrackedPoint>,
}

/// Common driver interface for the trackers: feed frames strictly in order,
/// get per-point positions and occlusion flags back.
pub trait PointTracker {
    /// Echo of the initialization frame (positions = queries, all visible).
    fn initial_frame(&self) -> TrackOutputFrame;

    /// Advance to the next frame. `features.frame_id` must be exactly the
    /// next expected id; `mask` is the instrument mask for that frame.
    fn step(&mut self, features: FrameFeatures, mask: Option<&GrayImage>)
        -> Result<TrackOutputFrame>;

    fn point_count(&self) -> usize;

    /// Frame id the next `step` call must carry.
    fn next_frame_id(&self) -> FrameId;
}

/// Default occlusion threshold: 2 px at 512x512, scaled linearly with the
/// image diagonal.
pub fn default_tau(width: u32, height: u32) -> f64 {
    let diag = (width as f64).hypot(height as f64);
    let base = 512.0f64.hypot(512.0);
    2.0 * diag / base
}

/// Validate initial query points: non-empty and inside the image; offenders
/// are listed by index.
pub(crate) fn validate_queries(queries: &[Point2], width: u32, height: u32) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("no query points".into()));
    }
    let bad: Vec<String> = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| !in_bounds(**q, width, height))
        .map(|(i, q)| format!("{} at ({}, {})", i, q.x, q.y))
        .collect();
    if !bad.is_empty() {
        return Err(Error::InvalidInput(format!(
            "query points outside the {}x{} image: {}",
            width,
            height,
            bad.join(", ")
        )));
    }
    Ok(())
}
