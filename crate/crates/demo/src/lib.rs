//! Browser demo bindings: run a small synthetic tracking benchmark in the
//! page and hand the full animation back as JSON.
//!
//! Three exports, all string-in/string-out so the page needs no glue types:
//! [`default_config`] returns the knob set the sliders edit,
//! [`run_benchmark`] generates a scene, runs the chain / fixed-schedule /
//! adaptive trackers over a noisy flow oracle and returns every frame's
//! positions, occlusion flags, error curves and occluder boxes, and
//! [`calibrate_threshold`] picks the occlusion threshold τ for a noise level
//! the same way the CLI does. Everything is deterministic per seed; the
//! heavy lifting lives in the core crate and runs natively in tests.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use wasm_bindgen::prelude::*;

use flowtrack_core::amfst::{AmfstConfig, AmfstTracker};
use flowtrack_core::flow::OracleBackend;
use flowtrack_core::mfst::{MfstConfig, MfstTracker};
use flowtrack_core::synth::{
    calibrate_tau, generate_scene, CalibrationScene, DeformationParams, Occluder, OccluderShape,
    SceneConfig,
};
use flowtrack_core::tracker::PointTracker;
use flowtrack_core::Point2;

/// Benchmark knobs exposed to the page.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub points: usize,
    /// Flow noise std, px; 0 = exact oracle.
    pub sigma: f64,
    /// Occlusion threshold; `null` calibrates from `sigma` at 1% FPR.
    pub tau: Option<f64>,
    /// Reliable-frame budget of the adaptive tracker.
    pub nf: usize,
    pub seed: u64,
    /// Sweep a rectangle across the scene mid-run.
    pub occluder: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            width: 320,
            height: 240,
            frames: 72,
            points: 24,
            sigma: 0.5,
            tau: None,
            nf: 6,
            seed: 7,
            occluder: true,
        }
    }
}

#[derive(Serialize)]
struct TrackerTrace {
    name: &'static str,
    /// frames[t][p] = [x, y, occluded as 0/1]
    frames: Vec<Vec<[f64; 3]>>,
    /// Mean error over ground-truth-visible points, per frame.
    mee: Vec<f64>,
    final_mee: f64,
}

#[derive(Serialize)]
struct BenchmarkResult {
    width: u32,
    height: u32,
    tau: f64,
    /// gt[t][p] = [x, y, occluded as 0/1]
    gt: Vec<Vec<[f64; 3]>>,
    /// Axis-aligned occluder boxes per frame: [x0, y0, x1, y1].
    occluder_boxes: Vec<Vec<[f64; 4]>>,
    trackers: Vec<TrackerTrace>,
}

fn scene_config(config: &DemoConfig) -> SceneConfig {
    let occluders = if config.occluder {
        // Enters from the left third, drifts right, leaves before the end so
        // every tracker gets a recovery phase.
        let first = config.frames / 4;
        let last = (config.frames * 3 / 5).max(first + 1);
        vec![Occluder {
            shape: OccluderShape::Rectangle,
            center: [config.width as f64 * 0.38, config.height as f64 * 0.5],
            size: [config.width as f64 * 0.34, config.height as f64 * 0.5],
            velocity: [0.9, 0.0],
            active: [first, last],
        }]
    } else {
        vec![]
    };
    SceneConfig {
        width: config.width,
        height: config.height,
        frame_count: config.frames,
        point_count: config.points,
        deformation: DeformationParams {
            translation: [0.25, 0.12],
            affine_rate: 0.0005,
            nonrigid_amplitude: 1.4,
            nonrigid_wavelength: config.width as f64 / 5.0,
            temporal_frequency: 0.06,
        },
        occluders,
        texture_seed: config.seed ^ 0x9e37_79b9,
        rng_seed: config.seed,
        margin_fraction: 0.24,
    }
}

fn validate(config: &DemoConfig) -> Result<(), String> {
    if !(config.sigma.is_finite() && config.sigma >= 0.0) {
        return Err(format!("sigma must be finite and >= 0, got {}", config.sigma));
    }
    if config.frames < 2 || config.frames > 600 {
        return Err(format!("frames must be in [2, 600], got {}", config.frames));
    }
    if config.points == 0 || config.points > 400 {
        return Err(format!("points must be in [1, 400], got {}", config.points));
    }
    if config.nf == 0 || config.nf > 16 {
        return Err(format!("nf must be in [1, 16], got {}", config.nf));
    }
    Ok(())
}

/// Calibrated τ for a noise level: the 99th-percentile forward-backward
/// error on an occlusion-free scene, matching the CLI's recipe.
fn calibrated_tau(config: &DemoConfig) -> Result<f64, String> {
    if config.sigma == 0.0 {
        // Exact flow never trips the threshold; any positive value works.
        return Ok(1.0);
    }
    let mut calib = config.clone();
    calib.occluder = false;
    let sc = scene_config(&calib);
    let (gt, field) = generate_scene(&sc).map_err(|e| e.to_string())?;
    let backend =
        OracleBackend::with_noise(field, config.sigma, config.seed ^ 0x5ca1ab1e).map_err(|e| e.to_string())?;
    let features = (0..sc.frame_count).map(|t| backend.scene_features(t)).collect();
    calibrate_tau(
        &[CalibrationScene {
            backend: &backend,
            features,
            gt: &gt,
        }],
        0.01,
    )
    .map_err(|e| e.to_string())
}

fn occluder_boxes(sc: &SceneConfig) -> Vec<Vec<[f64; 4]>> {
    (0..sc.frame_count)
        .map(|t| {
            sc.occluders
                .iter()
                .filter(|o| o.active_at(t))
                .map(|o| {
                    let cx = o.center[0] + o.velocity[0] * t as f64;
                    let cy = o.center[1] + o.velocity[1] * t as f64;
                    [
                        cx - o.size[0] / 2.0,
                        cy - o.size[1] / 2.0,
                        cx + o.size[0] / 2.0,
                        cy + o.size[1] / 2.0,
                    ]
                })
                .collect()
        })
        .collect()
}

fn run_one(
    name: &'static str,
    mut tracker: Box<dyn PointTracker>,
    backend: &OracleBackend,
    gt_positions: &[Vec<Point2>],
    gt_occluded: &[Vec<bool>],
    masks: Option<&Vec<flowtrack_core::image::GrayImage>>,
) -> Result<TrackerTrace, String> {
    let n = gt_positions[0].len();
    let mut frames = Vec::with_capacity(gt_positions.len());
    let mut mee = Vec::with_capacity(gt_positions.len());
    let mut outputs = vec![tracker.initial_frame()];
    for t in 1..gt_positions.len() {
        let mask = masks.map(|m| &m[t]);
        outputs.push(
            tracker
                .step(backend.scene_features(t as u32), mask)
                .map_err(|e| e.to_string())?,
        );
    }
    for (t, out) in outputs.iter().enumerate() {
        let mut row = Vec::with_capacity(n);
        let mut err_sum = 0.0;
        let mut err_n = 0usize;
        for (p, point) in out.points.iter().enumerate() {
            row.push([
                point.position.x,
                point.position.y,
                if point.occluded { 1.0 } else { 0.0 },
            ]);
            if !gt_occluded[t][p] {
                err_sum += point.position.distance(&gt_positions[t][p]);
                err_n += 1;
            }
        }
        frames.push(row);
        mee.push(if err_n > 0 { err_sum / err_n as f64 } else { 0.0 });
    }
    Ok(TrackerTrace {
        name,
        frames,
        final_mee: *mee.last().unwrap(),
        mee,
    })
}

fn run_benchmark_impl(config_json: &str) -> Result<String, String> {
    let config: DemoConfig =
        serde_json::from_str(config_json).map_err(|e| format!("bad config: {}", e))?;
    validate(&config)?;
    let tau = match config.tau {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(format!("tau must be > 0, got {}", t)),
        None => calibrated_tau(&config)?,
    };

    let sc = scene_config(&config);
    let (gt, field) = generate_scene(&sc).map_err(|e| e.to_string())?;
    let backend = OracleBackend::with_noise(field.clone(), config.sigma, config.seed)
        .map_err(|e| e.to_string())?;
    let shared: Arc<OracleBackend> = Arc::new(
        OracleBackend::with_noise(field, config.sigma, config.seed).map_err(|e| e.to_string())?,
    );
    let queries = gt.positions[0].clone();
    let first = backend.scene_features(0);

    let trackers: Vec<(&'static str, Box<dyn PointTracker>)> = vec![
        (
            "chain",
            Box::new(
                MfstTracker::new(shared.clone(), first.clone(), &queries, MfstConfig::chain(f64::MAX))
                    .map_err(|e| e.to_string())?,
            ),
        ),
        (
            "mfst",
            Box::new(
                MfstTracker::new(shared.clone(), first.clone(), &queries, MfstConfig::new(tau))
                    .map_err(|e| e.to_string())?,
            ),
        ),
        (
            "amfst",
            Box::new(
                AmfstTracker::new(
                    shared.clone(),
                    first.clone(),
                    &queries,
                    AmfstConfig::new(config.nf, tau),
                )
                .map_err(|e| e.to_string())?,
            ),
        ),
    ];

    let mut traces = Vec::new();
    for (name, tracker) in trackers {
        traces.push(run_one(
            name,
            tracker,
            &backend,
            &gt.positions,
            &gt.mask_occluded,
            gt.masks.as_ref(),
        )?);
    }

    let gt_rows: Vec<Vec<[f64; 3]>> = gt
        .positions
        .iter()
        .zip(&gt.mask_occluded)
        .map(|(row, occ)| {
            row.iter()
                .zip(occ)
                .map(|(p, &o)| [p.x, p.y, if o { 1.0 } else { 0.0 }])
                .collect()
        })
        .collect();

    let result = BenchmarkResult {
        width: sc.width,
        height: sc.height,
        tau,
        gt: gt_rows,
        occluder_boxes: occluder_boxes(&sc),
        trackers: traces,
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

// ---------- wasm exports ----------

/// Default knob values as JSON; the page seeds its controls from this.
#[wasm_bindgen]
pub fn default_config() -> String {
    serde_json::to_string(&DemoConfig::default()).expect("static config serializes")
}

/// Run the three-tracker benchmark described by `config_json` (the
/// [`default_config`] document with any fields overridden) and return the
/// animation payload. Errors come back as a JS exception string.
#[wasm_bindgen]
pub fn run_benchmark(config_json: &str) -> Result<String, String> {
    run_benchmark_impl(config_json)
}

/// Calibrate the occlusion threshold for a noise level: 99th-percentile
/// forward-backward error over an occlusion-free scene.
#[wasm_bindgen]
pub fn calibrate_threshold(sigma: f64, seed: u32) -> Result<f64, String> {
    let config = DemoConfig {
        sigma,
        seed: seed as u64,
        ..DemoConfig::default()
    };
    validate(&config)?;
    calibrated_tau(&config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn default_config_round_trips() {
        let text = default_config();
        let config: DemoConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config.frames, 72);
        assert!(config.occluder);
        // Unknown fields from a future page version are tolerated.
        let with_extra: DemoConfig =
            serde_json::from_str(r#"{"sigma": 0.3, "shiny_new_toggle": true}"#).unwrap();
        assert_eq!(with_extra.sigma, 0.3);
    }

    #[test]
    fn benchmark_reports_three_trackers_and_adaptive_wins() {
        let text = run_benchmark_impl(&default_config()).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        let trackers = v["trackers"].as_array().unwrap();
        assert_eq!(trackers.len(), 3);
        assert_eq!(trackers[0]["name"], "chain");
        assert_eq!(trackers[2]["name"], "amfst");
        let chain_final = trackers[0]["final_mee"].as_f64().unwrap();
        let amfst_final = trackers[2]["final_mee"].as_f64().unwrap();
        assert!(
            amfst_final < chain_final,
            "adaptive {} should beat chain {}",
            amfst_final,
            chain_final
        );
        assert_eq!(v["gt"].as_array().unwrap().len(), 72);
        assert_eq!(v["occluder_boxes"].as_array().unwrap().len(), 72);
        // The occluder window really occludes someone, and the adaptive
        // tracker's flags match ground truth away from boundary flicker
        // (noisy predictions can land either side of the mask edge).
        let gt = v["gt"].as_array().unwrap();
        let amfst_frames = trackers[2]["frames"].as_array().unwrap();
        let mut occluded_pairs = 0;
        let mut mismatches = 0;
        let mut total = 0;
        for t in 0..gt.len() {
            let gt_row = gt[t].as_array().unwrap();
            let tr_row = amfst_frames[t].as_array().unwrap();
            for p in 0..gt_row.len() {
                let gt_occ = gt_row[p][2].as_f64().unwrap() == 1.0;
                let tr_occ = tr_row[p][2].as_f64().unwrap() == 1.0;
                occluded_pairs += gt_occ as usize;
                mismatches += (gt_occ != tr_occ) as usize;
                total += 1;
            }
        }
        assert!(occluded_pairs > 0, "the demo occluder never hid a point");
        assert!(
            (mismatches as f64) < 0.05 * total as f64,
            "{} of {} flags disagree with ground truth",
            mismatches,
            total
        );
    }

    #[test]
    fn benchmark_is_deterministic_per_seed() {
        let a = run_benchmark_impl(&default_config()).unwrap();
        let b = run_benchmark_impl(&default_config()).unwrap();
        assert_eq!(a, b);
        let other = run_benchmark_impl(
            &serde_json::to_string(&DemoConfig {
                seed: 8,
                ..DemoConfig::default()
            })
            .unwrap(),
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(run_benchmark_impl("not json").is_err());
        assert!(run_benchmark_impl(r#"{"sigma": -1.0}"#).is_err());
        assert!(run_benchmark_impl(r#"{"tau": 0.0}"#).is_err());
        assert!(calibrate_threshold(-0.5, 1).is_err());
    }

    #[test]
    fn threshold_tracks_noise_level() {
        // 99th percentile of ‖n₁+n₂‖ with isotropic σ per leg is
        // σ√2·√(−2 ln 0.01) ≈ 4.29σ.
        let t_half = calibrate_threshold(0.5, 7).unwrap();
        assert!((1.7..2.7).contains(&t_half), "τ(0.5) = {}", t_half);
        let t_double = calibrate_threshold(1.0, 7).unwrap();
        assert!(
            (1.6..2.4).contains(&(t_double / t_half)),
            "τ should scale roughly linearly with σ: {} vs {}",
            t_double,
            t_half
        );
        assert_eq!(calibrate_threshold(0.0, 7).unwrap(), 1.0);
    }
}
