//! Ground-truth flow oracle over synthetic scenes.
//!
//! Features carry only a handle to the scene's deformation field plus the
//! frame time, so flow queries are evaluated in closed form:
//! `flow(q, t1→t2) = Φ_{t2}(Φ_{t1}⁻¹(q))`. The noisy variant perturbs each
//! answer with isotropic Gaussian noise that is a pure function of
//! `(seed, src frame, dst frame, query index)` — repeated calls are
//! bit-identical and forward/backward queries draw independent noise.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FlowQueryResult, FrameFeatures};
use crate::geometry::{in_bounds, FrameId, Point2};
use crate::image::GrayImage;
use crate::rng;
use crate::synth::DeformationField;

struct OraclePayload {
    field: Arc<DeformationField>,
    t: f64,
}

/// Flow backend that answers queries from a scene's exact deformation,
/// optionally with seeded Gaussian noise.
pub struct OracleBackend {
    field: Arc<DeformationField>,
    sigma: f64,
    seed: u64,
}

impl OracleBackend {
    /// Exact oracle: answers are the true scene flow.
    pub fn exact(field: Arc<DeformationField>) -> Self {
        OracleBackend {
            field,
            sigma: 0.0,
            seed: 0,
        }
    }

    /// Oracle with per-query isotropic Gaussian noise of std `sigma` px.
    /// `sigma = 0` behaves exactly like [`OracleBackend::exact`].
    pub fn with_noise(field: Arc<DeformationField>, sigma: f64, seed: u64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be finite and >= 0, got {}",
                sigma
            )));
        }
        Ok(OracleBackend { field, sigma, seed })
    }

    /// Features for a scene frame without a rendered image (the oracle only
    /// needs the frame time and scene dimensions).
    pub fn scene_features(&self, frame_id: FrameId) -> FrameFeatures {
        FrameFeatures::new(
            frame_id,
            self.field.width(),
            self.field.height(),
            Arc::new(OraclePayload {
                field: self.field.clone(),
                t: frame_id as f64,
            }),
        )
    }

    fn noise(&self, src: FrameId, dst: FrameId, index: usize) -> (f64, f64) {
        if self.sigma == 0.0 {
            return (0.0, 0.0);
        }
        let mut r = rng::seeded_rng(&[self.seed, src as u64, dst as u64, index as u64]);
        let normal = Normal::new(0.0, self.sigma).expect("sigma validated at construction");
        (normal.sample(&mut r), normal.sample(&mut r))
    }
}

impl FlowBackend for OracleBackend {
    fn extract_features(&self, image: &GrayImage, frame_id: FrameId) -> Result<FrameFeatures> {
        if image.is_empty() {
            return Err(Error::InvalidInput("empty image".into()));
        }
        if image.width() != self.field.width() || image.height() != self.field.height() {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} does not match scene {}x{}",
                image.width(),
                image.height(),
                self.field.width(),
                self.field.height()
            )));
        }
        Ok(self.scene_features(frame_id))
    }

    fn estimate_flow(
        &self,
        src: &FrameFeatures,
        dst: &FrameFeatures,
        queries: &[Point2],
    ) -> Result<FlowQueryResult> {
        let sp = src
            .payload()
            .downcast_ref::<OraclePayload>()
            .ok_or_else(|| {
                Error::ContractViolation("oracle backend fed non-oracle features".into())
            })?;
        let dp = dst
            .payload()
            .downcast_ref::<OraclePayload>()
            .ok_or_else(|| {
                Error::ContractViolation("oracle backend fed non-oracle features".into())
            })?;
        if sp.field.id() != self.field.id() || dp.field.id() != self.field.id() {
            return Err(Error::ContractViolation(
                "features belong to a different scene".into(),
            ));
        }

        let mut displaced = Vec::with_capacity(queries.len());
        let mut valid = Vec::with_capacity(queries.len());
        for (i, &q) in queries.iter().enumerate() {
            if !in_bounds(q, src.width(), src.height()) {
                displaced.push(q);
                valid.push(false);
                continue;
            }
            // Same frame: the true flow is the identity, noise-free.
            if src.frame_id() == dst.frame_id() {
                displaced.push(q);
                valid.push(true);
                continue;
            }
            let moved = self.field.flow(q, sp.t, dp.t);
            let (nx, ny) = self.noise(src.frame_id(), dst.frame_id(), i);
            let out = moved.offset(nx, ny);
            let ok = in_bounds(out, dst.width(), dst.height());
            displaced.push(out);
            valid.push(ok);
        }
        FlowQueryResult::new(displaced, valid)
    }
}
