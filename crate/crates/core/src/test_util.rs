//! Mock flow backend for unit tests with controllable per-frame offsets.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FlowQueryResult, FrameFeatures};
use crate::geometry::{in_bounds, FrameId, Point2};
use crate::image::GrayImage;

struct MockPayload;

/// Flow backend that displaces every query by a fixed offset. The offset can
/// be set per reference frame (the lower frame id of the pair); the "forward"
/// offset applies when flowing away from the reference, the "backward" offset
/// when flowing toward it. Round-trip EPE through a reference is therefore
/// `|fwd + bwd|`, independent of the query.
/// (forward, backward) displacement pair.
type FlowPair = ((f64, f64), (f64, f64));

pub struct OffsetBackend {
    width: u32,
    height: u32,
    default_fwd: (f64, f64),
    default_bwd: (f64, f64),
    per_ref: HashMap<FrameId, FlowPair>,
    force_valid: bool,
}

impl OffsetBackend {
    pub fn new(width: u32, height: u32, fwd: (f64, f64), bwd: (f64, f64)) -> Self {
        OffsetBackend {
            width,
            height,
            default_fwd: fwd,
            default_bwd: bwd,
            per_ref: HashMap::new(),
            force_valid: false,
        }
    }

    /// Report every result as valid even if it leaves the image (to exercise
    /// defensive bounds handling downstream).
    pub fn valid_everywhere(mut self) -> Self {
        self.force_valid = true;
        self
    }

    /// Configure the offsets used whenever `ref_id` is the reference side.
    pub fn set_ref_offsets(&mut self, ref_id: FrameId, fwd: (f64, f64), bwd: (f64, f64)) {
        self.per_ref.insert(ref_id, (fwd, bwd));
    }

    pub fn features(&self, frame_id: FrameId) -> FrameFeatures {
        FrameFeatures::new(frame_id, self.width, self.height, Arc::new(MockPayload))
    }
}

impl FlowBackend for OffsetBackend {
    fn extract_features(&self, image: &GrayImage, frame_id: FrameId) -> Result<FrameFeatures> {
        if image.is_empty() {
            return Err(Error::InvalidInput("empty image".into()));
        }
        Ok(self.features(frame_id))
    }

    fn estimate_flow(
        &self,
        src: &FrameFeatures,
        dst: &FrameFeatures,
        queries: &[Point2],
    ) -> Result<FlowQueryResult> {
        let mut displaced = Vec::with_capacity(queries.len());
        let mut valid = Vec::with_capacity(queries.len());
        for &q in queries {
            if !self.force_valid && !in_bounds(q, src.width(), src.height()) {
                displaced.push(q);
                valid.push(false);
                continue;
            }
            if src.frame_id() == dst.frame_id() {
                displaced.push(q);
                valid.push(true);
                continue;
            }
            let (ref_id, away) = if src.frame_id() < dst.frame_id() {
                (src.frame_id(), true)
            } else {
                (dst.frame_id(), false)
            };
            let (fwd, bwd) = self
                .per_ref
                .get(&ref_id)
                .copied()
                .unwrap_or((self.default_fwd, self.default_bwd));
            let off = if away { fwd } else { bwd };
            let out = q.offset(off.0, off.1);
            let ok = self.force_valid || in_bounds(out, dst.width(), dst.height());
            displaced.push(out);
            valid.push(ok);
        }
        FlowQueryResult::new(displaced, valid)
    }
}
