//! Pluggable sparse optical-flow backends.
//!
//! A backend turns video frames into cached per-frame features once
//! ([`FlowBackend::extract_features`]) and then answers sparse flow queries
//! between any two cached frames ([`FlowBackend::estimate_flow`]). Caching is
//! what makes many-reference tracking affordable: a tracker keeps the
//! features of its retained frames and never re-reads pixels.
//!
//! Validity contract shared by all backends: `displaced[i]` is always finite;
//! `valid[i]` is false when the query is outside the source frame (the query
//! is then returned unchanged) or when the match/flow target leaves the
//! destination frame.

use std::any::Any;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{FrameId, Point2};
use crate::image::GrayImage;

pub mod block_matching;
pub mod oracle;

pub use block_matching::{BlockMatchingBackend, BlockMatchingConfig};
pub use oracle::OracleBackend;

/// Cached per-frame features. The payload is backend-specific (an image
/// pyramid, a scene handle, ...) and immutable once built; trackers treat it
/// as an opaque token tied to `frame_id`.
#[derive(Clone)]
pub struct FrameFeatures {
    frame_id: FrameId,
    width: u32,
    height: u32,
    payload: Arc<dyn Any + Send + Sync>,
}

impl FrameFeatures {
    pub fn new(
        frame_id: FrameId,
        width: u32,
        height: u32,
        payload: Arc<dyn Any + Send + Sync>,
    ) -> Self {
        FrameFeatures {
            frame_id,
            width,
            height,
            payload,
        }
    }

    pub fn frame_id(&self) -> FrameId {
        self.frame_id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn payload(&self) -> &(dyn Any + Send + Sync) {
        self.payload.as_ref()
    }
}

impl std::fmt::Debug for FrameFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameFeatures")
            .field("frame_id", &self.frame_id)
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

/// Result of one sparse flow query batch; `displaced.len() == valid.len()
/// == queries.len()`.
#[derive(Debug, Clone)]
pub struct FlowQueryResult {
    pub displaced: Vec<Point2>,
    pub valid: Vec<bool>,
}

impl FlowQueryResult {
    pub fn new(displaced: Vec<Point2>, valid: Vec<bool>) -> Result<Self> {
        if displaced.len() != valid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} displaced points vs {} validity flags",
                displaced.len(),
                valid.len()
            )));
        }
        for (i, (d, &v)) in displaced.iter().zip(&valid).enumerate() {
            if v && !d.is_finite() {
                return Err(Error::ContractViolation(format!(
                    "non-finite displaced point {} marked valid",
                    i
                )));
            }
        }
        Ok(FlowQueryResult { displaced, valid })
    }

    pub fn len(&self) -> usize {
        self.displaced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displaced.is_empty()
    }
}

/// Sparse flow estimation between cached frames.
pub trait FlowBackend: Send + Sync {
    /// Build the cached features for one frame. Fails on empty images.
    fn extract_features(&self, image: &GrayImage, frame_id: FrameId) -> Result<FrameFeatures>;

    /// Displace `queries` (positions in `src`) into `dst` coordinates.
    /// Features from a different backend family are a contract violation.
    fn estimate_flow(
        &self,
        src: &FrameFeatures,
        dst: &FrameFeatures,
        queries: &[Point2],
    ) -> Result<FlowQueryResult>;
}
