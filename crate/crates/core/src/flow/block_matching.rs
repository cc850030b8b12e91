//! Pyramidal block-matching flow backend.
//!
//! Dependency-free stand-in for a learned flow estimator: a 3-level image
//! pyramid, SAD matching over an 11x11 window with a ±8 px search per level
//! (so ±32 px total at full resolution), and parabolic sub-pixel refinement
//! of the finest-level cost surface. Windows are sampled bilinearly with
//! clamp-to-edge so fractional query positions and borders behave.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FlowQueryResult, FrameFeatures};
use crate::geometry::{in_bounds, FrameId, Point2};
use crate::image::{build_pyramid, FloatImage, GrayImage};

#[derive(Debug, Clone)]
pub struct BlockMatchingConfig {
    /// Pyramid depth (level 0 = full resolution).
    pub levels: u32,
    /// Match window half-size; the window is `2r+1` pixels on a side.
    pub window_radius: u32,
    /// Integer search radius per level, px.
    pub search_radius: u32,
}

impl Default for BlockMatchingConfig {
    fn default() -> Self {
        BlockMatchingConfig {
            levels: 3,
            window_radius: 5,
            search_radius: 8,
        }
    }
}

struct PyramidPayload {
    levels: Vec<FloatImage>,
}

/// SAD block matcher over an image pyramid.
pub struct BlockMatchingBackend {
    config: BlockMatchingConfig,
}

impl BlockMatchingBackend {
    pub fn new(config: BlockMatchingConfig) -> Result<Self> {
        if config.levels == 0 || config.window_radius == 0 || config.search_radius == 0 {
            return Err(Error::InvalidInput(
                "block matching needs levels, window_radius and search_radius >= 1".into(),
            ));
        }
        Ok(BlockMatchingBackend { config })
    }

    /// SAD between the window at `(sx, sy)` in `src` and `(dx, dy)` in `dst`.
    fn window_sad(&self, src: &FloatImage, dst: &FloatImage, sx: f64, sy: f64, dx: f64, dy: f64) -> f64 {
        let r = self.config.window_radius as i64;
        let mut acc = 0.0f64;
        for oy in -r..=r {
            for ox in -r..=r {
                let a = src.sample(sx + ox as f64, sy + oy as f64);
                let b = dst.sample(dx + ox as f64, dy + oy as f64);
                acc += (a - b).abs() as f64;
            }
        }
        acc
    }

    /// Match one query coarse-to-fine; returns the displaced position.
    fn match_query(&self, src: &PyramidPayload, dst: &PyramidPayload, q: Point2) -> Point2 {
        let n_levels = src.levels.len().min(dst.levels.len());
        let sr = self.config.search_radius as i64;
        let side = (2 * sr + 1) as usize;
        // Displacement estimate, refined from coarsest to finest level.
        let mut disp = (0.0f64, 0.0f64);
        let mut costs = vec![0.0f64; side * side];
        for level in (0..n_levels).rev() {
            let scale = (1u32 << level) as f64;
            let s_img = &src.levels[level];
            let d_img = &dst.levels[level];
            let qx = q.x / scale;
            let qy = q.y / scale;
            let cx = qx + disp.0 / scale;
            let cy = qy + disp.1 / scale;
            let mut best = (f64::INFINITY, 0i64, 0i64);
            for oy in -sr..=sr {
                for ox in -sr..=sr {
                    let cand_x = cx + ox as f64;
                    let cand_y = cy + oy as f64;
                    let sad = self.window_sad(s_img, d_img, qx, qy, cand_x, cand_y);
                    costs[((oy + sr) * (2 * sr + 1) + (ox + sr)) as usize] = sad;
                    if sad < best.0 {
                        best = (sad, ox, oy);
                    }
                }
            }
            let (mut fx, mut fy) = (best.1 as f64, best.2 as f64);
            if level == 0 {
                // Parabolic sub-pixel refinement on the cost row/column
                // through the best offset.
                let idx = |ox: i64, oy: i64| ((oy + sr) * (2 * sr + 1) + (ox + sr)) as usize;
                if best.1 > -sr && best.1 < sr {
                    let c0 = costs[idx(best.1 - 1, best.2)];
                    let c1 = costs[idx(best.1, best.2)];
                    let c2 = costs[idx(best.1 + 1, best.2)];
                    fx += parabolic_offset(c0, c1, c2);
                }
                if best.2 > -sr && best.2 < sr {
                    let c0 = costs[idx(best.1, best.2 - 1)];
                    let c1 = costs[idx(best.1, best.2)];
                    let c2 = costs[idx(best.1, best.2 + 1)];
                    fy += parabolic_offset(c0, c1, c2);
                }
            }
            disp = (
                (cx + fx - qx) * scale,
                (cy + fy - qy) * scale,
            );
        }
        q.offset(disp.0, disp.1)
    }
}

/// Sub-pixel peak offset of a parabola through three equally spaced costs;
/// clamped to ±0.5 and guarded against flat neighborhoods.
fn parabolic_offset(c0: f64, c1: f64, c2: f64) -> f64 {
    let denom = c0 - 2.0 * c1 + c2;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * (c0 - c2) / denom).clamp(-0.5, 0.5)
}

impl FlowBackend for BlockMatchingBackend {
    fn extract_features(&self, image: &GrayImage, frame_id: FrameId) -> Result<FrameFeatures> {
        if image.is_empty() {
            return Err(Error::InvalidInput("empty image".into()));
        }
        // Coarsest level must still fit a window plus some search room.
        let min_dim = 2 * (self.config.window_radius + 1);
        let levels = build_pyramid(image, self.config.levels, min_dim);
        Ok(FrameFeatures::new(
            frame_id,
            image.width(),
            image.height(),
            Arc::new(PyramidPayload { levels }),
        ))
    }

    fn estimate_flow(
        &self,
        src: &FrameFeatures,
        dst: &FrameFeatures,
        queries: &[Point2],
    ) -> Result<FlowQueryResult> {
        let sp = src
            .payload()
            .downcast_ref::<PyramidPayload>()
            .ok_or_else(|| {
                Error::ContractViolation("block-matching backend fed non-pyramid features".into())
            })?;
        let dp = dst
            .payload()
            .downcast_ref::<PyramidPayload>()
            .ok_or_else(|| {
                Error::ContractViolation("block-matching backend fed non-pyramid features".into())
            })?;

        let mut displaced = Vec::with_capacity(queries.len());
        let mut valid = Vec::with_capacity(queries.len());
        for &q in queries {
            if !in_bounds(q, src.width(), src.height()) {
                displaced.push(q);
                valid.push(false);
                continue;
            }
            let out = self.match_query(sp, dp, q);
            let ok = in_bounds(out, dst.width(), dst.height());
            displaced.push(out);
            valid.push(ok);
        }
        FlowQueryResult::new(displaced, valid)
    }
}
