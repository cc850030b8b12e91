//! Occlusion-aware sparse point tracking over pluggable optical-flow backends.
//!
//! The crate tracks a fixed set of query points through a video by estimating
//! flow from a small set of retained reference frames to the current frame and
//! scoring each reference with a forward-backward round-trip error (EPE).
//! Two trackers are provided:
//!
//! * [`mfst::MfstTracker`] — references frame 0 plus a fixed log-spaced set of
//!   past frames and accepts, per point, the reference with the smallest EPE.
//! * [`amfst::AmfstTracker`] — maintains an adaptive set of "reliable" frames,
//!   re-selected every step by minimizing the summed per-point minimum EPE
//!   over frame combinations (with frames pinned by occluded points kept
//!   alive so those points can be re-detected later).
//!
//! Flow estimation is behind the [`flow::FlowBackend`] trait with two
//! implementations: a closed-form oracle over synthetic scenes (optionally
//! with seeded Gaussian noise) and a pyramidal block matcher for real images.
//! [`synth`] generates invertible ground-truth scenes for benchmarking,
//! [`metrics`] implements the evaluation suite (MEE, chamfer, delta scores),
//! and [`init`] covers instrument-mask ingestion and stereo-based query-point
//! initialization.

pub mod amfst;
pub mod consistency;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod init;
pub mod metrics;
pub mod mfst;
pub mod rng;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{FrameId, Point2};

#[cfg(test)]
pub(crate) mod test_util;
