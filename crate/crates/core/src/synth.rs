//! Synthetic benchmark scenes with exact ground truth.
//!
//! A scene is defined by a smooth, invertible deformation applied to material
//! coordinates `u` (a point's frame-0 position):
//!
//! ```text
//! x(u, t) = c + R(a·t)·(u − c) + t·v + A·w(u, t)
//! w(u, t) = ( sin(2π(u_y/λ + ω t)) − sin(2π u_y/λ),
//!             sin(2π(u_x/λ + ω t)) − sin(2π u_x/λ) )
//! ```
//!
//! where `c` is the image center, `R` a rotation, `v` a translation per
//! frame, and `w` a non-rigid sinusoidal wave (x-displacement driven by the
//! transverse coordinate and vice versa). At `t = 0` the map is the identity,
//! so material coordinates coincide with frame-0 positions. The map is
//! invertible whenever `2πA/λ < 1`: solving `Φ_t(u) = q` reduces to a fixed
//! point `u ← c + Rᵀ(q − c − t·v − A·w(u,t))`, a contraction with factor
//! `2πA/λ` (the rotation is orthonormal). Flow between two frames is the
//! exact composition `Φ_{t2} ∘ Φ_{t1}⁻¹`, which is what the oracle backend
//! evaluates per query.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowBackend, FrameFeatures};
use crate::geometry::{in_bounds, Point2};
use crate::image::GrayImage;
use crate::rng;

/// Deformation parameters; all rates are per frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeformationParams {
    /// Rigid translation in px/frame.
    pub translation: [f64; 2],
    /// Rotation about the image center, radians/frame.
    pub affine_rate: f64,
    /// Amplitude of the non-rigid wave, px.
    pub nonrigid_amplitude: f64,
    /// Spatial wavelength of the wave, px.
    pub nonrigid_wavelength: f64,
    /// Temporal frequency of the wave, cycles/frame.
    pub temporal_frequency: f64,
}

impl Default for DeformationParams {
    fn default() -> Self {
        DeformationParams {
            translation: [0.0, 0.0],
            affine_rate: 0.0,
            nonrigid_amplitude: 0.0,
            nonrigid_wavelength: 64.0,
            temporal_frequency: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccluderShape {
    Rectangle,
    Ellipse,
}

/// A flat occluder moving along a linear trajectory, active over an
/// inclusive frame interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Occluder {
    pub shape: OccluderShape,
    /// Center position at frame 0 (even if inactive then).
    pub center: [f64; 2],
    /// Full extents (width, height) for rectangles, axis diameters for
    /// ellipses.
    pub size: [f64; 2],
    /// Center velocity, px/frame.
    pub velocity: [f64; 2],
    /// Inclusive [first, last] active frame.
    pub active: [u32; 2],
}

impl Occluder {
    pub fn active_at(&self, t: u32) -> bool {
        t >= self.active[0] && t <= self.active[1]
    }

    /// Geometric containment of a point at frame `t` (false when inactive).
    pub fn contains(&self, p: Point2, t: u32) -> bool {
        if !self.active_at(t) {
            return false;
        }
        let cx = self.center[0] + self.velocity[0] * t as f64;
        let cy = self.center[1] + self.velocity[1] * t as f64;
        let hx = self.size[0] / 2.0;
        let hy = self.size[1] / 2.0;
        match self.shape {
            OccluderShape::Rectangle => {
                (p.x - cx).abs() <= hx && (p.y - cy).abs() <= hy
            }
            OccluderShape::Ellipse => {
                if hx <= 0.0 || hy <= 0.0 {
                    return false;
                }
                let nx = (p.x - cx) / hx;
                let ny = (p.y - cy) / hy;
                nx * nx + ny * ny <= 1.0
            }
        }
    }
}

/// Full description of a synthetic scene; serializable as the scene-config
/// JSON consumed by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub point_count: usize,
    #[serde(default)]
    pub deformation: DeformationParams,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    /// Seed for the rendered texture.
    #[serde(default)]
    pub texture_seed: u64,
    /// Seed for query-point placement.
    #[serde(default)]
    pub rng_seed: u64,
    /// Margin (fraction of the image side) kept free when sampling frame-0
    /// positions. Trajectories may still wander; the generator verifies every
    /// frame and rejects configs whose points leave the image.
    #[serde(default = "default_margin")]
    pub margin_fraction: f64,
}

fn default_margin() -> f64 {
    0.12
}

/// The invertible deformation of one scene; shared by the ground truth and
/// the oracle flow backend.
#[derive(Debug)]
pub struct DeformationField {
    id: u64,
    width: u32,
    height: u32,
    params: DeformationParams,
}

const INVERT_TOL: f64 = 1e-13;
const INVERT_MAX_ITERS: usize = 200;

impl DeformationField {
    pub fn new(width: u32, height: u32, params: DeformationParams) -> Result<Self> {
        let lam = params.nonrigid_wavelength;
        let amp = params.nonrigid_amplitude;
        if amp < 0.0 || lam < 0.0 {
            return Err(Error::ConfigRejected {
                reason: "non-rigid amplitude and wavelength must be non-negative".into(),
            });
        }
        if amp > 0.0 {
            if lam <= 0.0 {
                return Err(Error::ConfigRejected {
                    reason: "non-rigid wavelength must be positive when amplitude > 0".into(),
                });
            }
            let contraction = 2.0 * PI * amp / lam;
            if contraction >= 0.9 {
                return Err(Error::ConfigRejected {
                    reason: format!(
                        "deformation not safely invertible: 2π·amplitude/wavelength = {:.3} (must be < 0.9)",
                        contraction
                    ),
                });
            }
        }
        // Identity derived from the parameters so two backends built from the
        // same config agree and differently-configured ones are rejected.
        let id = rng::mix(&[
            width as u64,
            height as u64,
            params.translation[0].to_bits(),
            params.translation[1].to_bits(),
            params.affine_rate.to_bits(),
            params.nonrigid_amplitude.to_bits(),
            params.nonrigid_wavelength.to_bits(),
            params.temporal_frequency.to_bits(),
        ]);
        Ok(DeformationField {
            id,
            width,
            height,
            params,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn center(&self) -> (f64, f64) {
        (
            (self.width.saturating_sub(1)) as f64 / 2.0,
            (self.height.saturating_sub(1)) as f64 / 2.0,
        )
    }

    fn wave(&self, u: Point2, t: f64) -> (f64, f64) {
        let p = &self.params;
        if p.nonrigid_amplitude == 0.0 {
            return (0.0, 0.0);
        }
        let k = 2.0 * PI / p.nonrigid_wavelength;
        let ph = 2.0 * PI * p.temporal_frequency * t;
        let wx = (u.y * k + ph).sin() - (u.y * k).sin();
        let wy = (u.x * k + ph).sin() - (u.x * k).sin();
        (p.nonrigid_amplitude * wx, p.nonrigid_amplitude * wy)
    }

    /// Forward map: position at time `t` of the material point `u`
    /// (`u` = position at frame 0).
    pub fn advect(&self, u: Point2, t: f64) -> Point2 {
        let p = &self.params;
        let (cx, cy) = self.center();
        let th = p.affine_rate * t;
        let (s, c) = th.sin_cos();
        let rx = c * (u.x - cx) - s * (u.y - cy);
        let ry = s * (u.x - cx) + c * (u.y - cy);
        let (wx, wy) = self.wave(u, t);
        Point2::new(
            cx + rx + p.translation[0] * t + wx,
            cy + ry + p.translation[1] * t + wy,
        )
    }

    /// Inverse map: material point whose time-`t` position is `x`.
    /// Fixed-point iteration; converges geometrically (factor `2πA/λ`).
    pub fn material(&self, x: Point2, t: f64) -> Point2 {
        let p = &self.params;
        let (cx, cy) = self.center();
        let th = p.affine_rate * t;
        let (s, c) = th.sin_cos();
        let rx = x.x - cx - p.translation[0] * t;
        let ry = x.y - cy - p.translation[1] * t;
        let mut u = Point2::new(x.x, x.y);
        for _ in 0..INVERT_MAX_ITERS {
            let (wx, wy) = self.wave(u, t);
            // u = c + Rᵀ·(r − w)
            let ax = rx - wx;
            let ay = ry - wy;
            let next = Point2::new(cx + c * ax + s * ay, cy - s * ax + c * ay);
            let step = u.distance(&next);
            u = next;
            if step < INVERT_TOL {
                break;
            }
        }
        u
    }

    /// Exact flow: where the scene carries position `q` between times
    /// `t1` and `t2`.
    pub fn flow(&self, q: Point2, t1: f64, t2: f64) -> Point2 {
        if t1 == t2 {
            return q;
        }
        self.advect(self.material(q, t1), t2)
    }
}

/// Per-frame exact state of a generated scene.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `positions[t][p]` — exact position of point `p` at frame `t`.
    pub positions: Vec<Vec<Point2>>,
    /// `mask_occluded[t][p]` — whether the point lies behind an occluder at
    /// frame `t`, derived from the rasterized masks with the same
    /// nearest-pixel containment rule the trackers use.
    pub mask_occluded: Vec<Vec<bool>>,
    /// Rasterized occluder masks, one per frame (`None` when the scene has
    /// no occluders).
    pub masks: Option<Vec<GrayImage>>,
}

impl GroundTruth {
    pub fn frame_count(&self) -> u32 {
        self.positions.len() as u32
    }

    pub fn point_count(&self) -> usize {
        self.positions.first().map_or(0, |f| f.len())
    }

    pub fn mask(&self, t: u32) -> Option<&GrayImage> {
        self.masks.as_ref().map(|m| &m[t as usize])
    }
}

fn rasterize_occluders(config: &SceneConfig, t: u32) -> GrayImage {
    let mut img = GrayImage::new(config.width, config.height);
    for occ in &config.occluders {
        if !occ.active_at(t) {
            continue;
        }
        for y in 0..config.height {
            for x in 0..config.width {
                if occ.contains(Point2::new(x as f64, y as f64), t) {
                    img.set(x, y, 255);
                }
            }
        }
    }
    img
}

fn validate_config(config: &SceneConfig) -> Result<()> {
    if config.width < 2 || config.height < 2 {
        return Err(Error::ConfigRejected {
            reason: format!("image {}x{} too small", config.width, config.height),
        });
    }
    if config.frame_count < 2 {
        return Err(Error::ConfigRejected {
            reason: "need at least 2 frames".into(),
        });
    }
    if config.point_count == 0 {
        return Err(Error::ConfigRejected {
            reason: "need at least 1 point".into(),
        });
    }
    if !(0.0..0.5).contains(&config.margin_fraction) {
        return Err(Error::ConfigRejected {
            reason: format!("margin_fraction {} outside [0, 0.5)", config.margin_fraction),
        });
    }
    for (i, occ) in config.occluders.iter().enumerate() {
        if occ.active[0] > occ.active[1] {
            return Err(Error::ConfigRejected {
                reason: format!("occluder {} active interval reversed", i),
            });
        }
    }
    Ok(())
}

/// Build a scene: sample frame-0 positions, advect them through every frame,
/// rasterize occluder masks and derive occlusion flags. Rejects configs whose
/// deformation is not invertible or whose trajectories leave the image,
/// naming the first offending (frame, point).
pub fn generate_scene(config: &SceneConfig) -> Result<(GroundTruth, Arc<DeformationField>)> {
    validate_config(config)?;
    let field = Arc::new(DeformationField::new(
        config.width,
        config.height,
        config.deformation.clone(),
    )?);

    let mut r = rng::seeded_rng(&[config.rng_seed, 0x706f_696e_7473]);
    let mx = config.margin_fraction * config.width as f64;
    let my = config.margin_fraction * config.height as f64;
    let base: Vec<Point2> = (0..config.point_count)
        .map(|_| {
            Point2::new(
                r.gen_range(mx..config.width as f64 - 1.0 - mx),
                r.gen_range(my..config.height as f64 - 1.0 - my),
            )
        })
        .collect();

    let mut positions = Vec::with_capacity(config.frame_count as usize);
    for t in 0..config.frame_count {
        let frame: Vec<Point2> = base.iter().map(|&u| field.advect(u, t as f64)).collect();
        for (p, pos) in frame.iter().enumerate() {
            if !in_bounds(*pos, config.width, config.height) {
                return Err(Error::ConfigRejected {
                    reason: format!(
                        "point {} leaves the image at frame {} (position {:.2},{:.2})",
                        p, t, pos.x, pos.y
                    ),
                });
            }
        }
        positions.push(frame);
    }

    let masks = if config.occluders.is_empty() {
        None
    } else {
        Some(
            (0..config.frame_count)
                .map(|t| rasterize_occluders(config, t))
                .collect::<Vec<_>>(),
        )
    };

    let mask_occluded: Vec<Vec<bool>> = positions
        .iter()
        .enumerate()
        .map(|(t, frame)| match &masks {
            Some(m) => frame.iter().map(|&p| m[t].contains_point(p)).collect(),
            None => vec![false; frame.len()],
        })
        .collect();

    Ok((
        GroundTruth {
            positions,
            mask_occluded,
            masks,
        },
        field,
    ))
}

/// Band-limited texture: a few octaves of bilinearly-interpolated value
/// noise. Smooth enough for parabolic sub-pixel refinement, textured enough
/// for SAD matching.
fn texture_value(seed: u64, u: Point2) -> f64 {
    let octaves: [(f64, f64); 3] = [(32.0, 0.5), (16.0, 0.3), (8.0, 0.2)];
    let mut acc = 0.0;
    for (oi, &(spacing, weight)) in octaves.iter().enumerate() {
        let gx = u.x / spacing;
        let gy = u.y / spacing;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let node = |ix: i64, iy: i64| -> f64 {
            let h = rng::mix(&[seed, oi as u64, ix as u64, iy as u64]);
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        let (xi, yi) = (x0 as i64, y0 as i64);
        let v = node(xi, yi) * (1.0 - fx) * (1.0 - fy)
            + node(xi + 1, yi) * fx * (1.0 - fy)
            + node(xi, yi + 1) * (1.0 - fx) * fy
            + node(xi + 1, yi + 1) * fx * fy;
        acc += weight * v;
    }
    acc
}

/// Intensity painted over occluded pixels: flat on purpose, so block
/// matching degrades inside occluders and forward-backward checks flag them.
pub const OCCLUDER_INTENSITY: u8 = 235;

/// Render the image sequence for a scene: the seeded texture warped by the
/// deformation, with occluders painted flat on top. Masks come from the
/// ground truth (`GroundTruth::mask`).
pub fn render_frames(config: &SceneConfig, gt: &GroundTruth) -> Result<Vec<GrayImage>> {
    validate_config(config)?;
    let field = DeformationField::new(config.width, config.height, config.deformation.clone())?;
    let mut frames = Vec::with_capacity(config.frame_count as usize);
    for t in 0..config.frame_count {
        let mask = gt.mask(t);
        let mut img = GrayImage::new(config.width, config.height);
        for y in 0..config.height {
            for x in 0..config.width {
                let occluded = mask.is_some_and(|m| m.get(x, y) != 0);
                let v = if occluded {
                    OCCLUDER_INTENSITY
                } else {
                    let u = field.material(Point2::new(x as f64, y as f64), t as f64);
                    (20.0 + 215.0 * texture_value(config.texture_seed, u))
                        .round()
                        .clamp(0.0, 255.0) as u8
                };
                img.set(x, y, v);
            }
        }
        frames.push(img);
    }
    Ok(frames)
}

/// One occlusion-free scene prepared for threshold calibration.
pub struct CalibrationScene<'a> {
    pub backend: &'a dyn FlowBackend,
    /// Features for every frame of the scene, in order.
    pub features: Vec<FrameFeatures>,
    pub gt: &'a GroundTruth,
}

/// Collect forward-backward EPE samples over consecutive frame pairs
/// (anchors at ground-truth positions) and return the `(1 - target_fpr)`
/// nearest-rank quantile. With the exact oracle every sample is 0, so τ = 0
/// at any quantile; with a noisy backend this calibrates the occlusion
/// threshold to a chosen false-positive rate.
pub fn calibrate_tau(scenes: &[CalibrationScene<'_>], target_fpr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::InvalidInput(format!(
            "target_fpr {} outside [0, 1]",
            target_fpr
        )));
    }
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no calibration scenes".into()));
    }
    let mut samples = Vec::new();
    for scene in scenes {
        if scene.gt.mask_occluded.iter().flatten().any(|&o| o) {
            return Err(Error::InvalidInput(
                "calibration scenes must be occlusion-free".into(),
            ));
        }
        if scene.features.len() != scene.gt.frame_count() as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} feature frames for {} ground-truth frames",
                scene.features.len(),
                scene.gt.frame_count()
            )));
        }
        for t in 1..scene.features.len() {
            let anchors = &scene.gt.positions[t - 1];
            let fwd = scene
                .backend
                .estimate_flow(&scene.features[t - 1], &scene.features[t], anchors)?;
            let back = scene.backend.estimate_flow(
                &scene.features[t],
                &scene.features[t - 1],
                &fwd.displaced,
            )?;
            for (p, anchor) in anchors.iter().enumerate() {
                if fwd.valid[p] && back.valid[p] {
                    samples.push(anchor.distance(&back.displaced[p]));
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "no valid EPE samples for calibration".into(),
        ));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((1.0 - target_fpr) * samples.len() as f64).ceil() as usize;
    Ok(samples[rank.clamp(1, samples.len()) - 1])
}
