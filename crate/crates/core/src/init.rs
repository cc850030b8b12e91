//! Query-point initialization and image-sequence ingestion.
//!
//! Frames and instrument masks arrive as numbered PNG
//! sequences and are read by one loader. First-frame query points come from
//! a classical stereo pipeline:
//! per-row block-matching disparity, a disparity-band threshold to isolate
//! the near foreground (instruments sit closer to the camera, hence larger
//! disparity), and K-Medoids (PAM) to place `k` query points on it.
//!
//! All thresholds are in disparity units — depth is proportional to
//! 1/disparity for a rectified pair, so banding disparity needs no camera
//! calibration.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::image::GrayImage;

/// Ordered same-sized grayscale frames (video frames or binary masks).
#[derive(Debug, Clone)]
pub struct ImageSequence {
    frames: Vec<GrayImage>,
}

impl ImageSequence {
    pub fn new(frames: Vec<GrayImage>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if f.width() != first.width() || f.height() != first.height() {
                    return Err(Error::DimensionMismatch(format!(
                        "image {} is {}x{}, expected {}x{}",
                        i,
                        f.width(),
                        f.height(),
                        first.width(),
                        first.height()
                    )));
                }
            }
        }
        Ok(ImageSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> Option<&GrayImage> {
        self.frames.get(t)
    }
}

/// Load `000.png, 001.png, ...` from a directory. Numbering must be
/// contiguous from 0; the first hole is reported by number.
pub fn load_image_sequence(dir: &Path) -> Result<ImageSequence> {
    let mut numbered: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Ok(num) = stem.parse::<u32>() else {
            continue;
        };
        numbered.push((num, path));
    }
    if numbered.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no numbered PNGs in {}",
            dir.display()
        )));
    }
    numbered.sort_by_key(|(n, _)| *n);
    for (i, (num, path)) in numbered.iter().enumerate() {
        if *num != i as u32 {
            if *num == numbered[i.saturating_sub(1)].0 && i > 0 {
                return Err(Error::InvalidInput(format!(
                    "duplicate frame number {} ({})",
                    num,
                    path.display()
                )));
            }
            return Err(Error::MissingInSequence {
                dir: dir.display().to_string(),
                missing: i as u32,
            });
        }
    }
    let frames = numbered
        .iter()
        .map(|(_, p)| GrayImage::load_png(p))
        .collect::<Result<Vec<_>>>()?;
    ImageSequence::new(frames)
}

/// Per-pixel horizontal disparity with validity flags.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Disparity at a pixel, None where matching was ambiguous.
    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let i = (y * self.width + x) as usize;
        if self.valid[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.valid.is_empty() {
            return 0.0;
        }
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len() as f64
    }
}

/// Stereo block-matching parameters.
#[derive(Debug, Clone)]
pub struct DisparityConfig {
    /// Half window; 5 gives the 11x11 default.
    pub window_radius: u32,
    /// Search range is [0, max_disparity].
    pub max_disparity: u32,
    /// Pixels where best/second-best SAD exceeds this are marked invalid.
    pub ambiguity_ratio: f64,
}

impl Default for DisparityConfig {
    fn default() -> Self {
        DisparityConfig {
            window_radius: 5,
            max_disparity: 64,
            ambiguity_ratio: 0.95,
        }
    }
}

fn window_sad(left: &GrayImage, right: &GrayImage, x: u32, y: u32, d: u32, r: u32) -> u64 {
    let mut sum = 0u64;
    for dy in -(r as i64)..=r as i64 {
        for dx in -(r as i64)..=r as i64 {
            let lx = (x as i64 + dx) as u32;
            let ly = (y as i64 + dy) as u32;
            let rx = (x as i64 - d as i64 + dx) as u32;
            let a = left.get(lx, ly) as i64;
            let b = right.get(rx, ly) as i64;
            sum += a.abs_diff(b);
        }
    }
    sum
}

/// Per-row 1D block matching between a rectified pair (left reference):
/// `right(x − d, y) ≈ left(x, y)`. Invalid where the window leaves either
/// image, where fewer than two candidate disparities exist, or where the
/// best/second-best cost ratio is ambiguous (second-best search skips the
/// immediate ±1 neighbors of the best).
pub fn compute_disparity(
    left: &GrayImage,
    right: &GrayImage,
    config: &DisparityConfig,
) -> Result<DisparityMap> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    if config.window_radius == 0 {
        return Err(Error::InvalidInput("window radius must be >= 1".into()));
    }
    if !(config.ambiguity_ratio > 0.0 && config.ambiguity_ratio <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "ambiguity ratio must be in (0, 1], got {}",
            config.ambiguity_ratio
        )));
    }
    let (w, h) = (left.width(), left.height());
    let r = config.window_radius;
    let mut values = vec![0.0f32; (w * h) as usize];
    let mut valid = vec![false; (w * h) as usize];
    if w < 2 * r + 1 || h < 2 * r + 1 {
        return Ok(DisparityMap {
            width: w,
            height: h,
            values,
            valid,
        });
    }
    for y in r..h - r {
        for x in r..w - r {
            // Window at disparity d needs x - d - r >= 0.
            let d_max = config.max_disparity.min(x - r);
            if d_max < 1 {
                continue; // fewer than two candidates: no ratio test
            }
            let mut best = (u64::MAX, 0u32);
            let mut costs = Vec::with_capacity(d_max as usize + 1);
            for d in 0..=d_max {
                let c = window_sad(left, right, x, y, d, r);
                costs.push(c);
                if c < best.0 {
                    best = (c, d);
                }
            }
            let mut second = u64::MAX;
            for (d, &c) in costs.iter().enumerate() {
                if (d as i64 - best.1 as i64).abs() <= 1 {
                    continue;
                }
                if c < second {
                    second = c;
                }
            }
            if second == u64::MAX {
                continue; // search band too narrow to judge ambiguity
            }
            let ambiguous = if second == 0 {
                true // flat texture: everything matches
            } else {
                best.0 as f64 / second as f64 > config.ambiguity_ratio
            };
            if !ambiguous {
                let i = (y * w + x) as usize;
                values[i] = best.1 as f32;
                valid[i] = true;
            }
        }
    }
    Ok(DisparityMap {
        width: w,
        height: h,
        values,
        valid,
    })
}

/// Pixels with a valid disparity inside `[min_disp, max_disp]`, row-major.
/// Instruments are near the camera, so isolation uses a `min_disp` floor.
pub fn threshold_foreground(
    disparity: &DisparityMap,
    min_disp: f32,
    max_disp: f32,
) -> Result<Vec<Point2>> {
    if min_disp.is_nan() || max_disp.is_nan() || min_disp >= max_disp {
        return Err(Error::InvalidInput(format!(
            "disparity range [{}, {}] is empty",
            min_disp, max_disp
        )));
    }
    let mut out = Vec::new();
    for y in 0..disparity.height() {
        for x in 0..disparity.width() {
            if let Some(d) = disparity.get(x, y) {
                if d >= min_disp && d <= max_disp {
                    out.push(Point2::new(x as f64, y as f64));
                }
            }
        }
    }
    Ok(out)
}

/// Default foreground band: the top 30% of the valid-disparity histogram,
/// i.e. [70th percentile, max]. None when the map has no valid pixel.
pub fn auto_disparity_range(disparity: &DisparityMap) -> Option<(f32, f32)> {
    let mut vals: Vec<f32> = Vec::new();
    for y in 0..disparity.height() {
        for x in 0..disparity.width() {
            if let Some(d) = disparity.get(x, y) {
                vals.push(d);
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    let rank = ((n as f64 * 0.70).ceil() as usize).clamp(1, n) - 1;
    Some((vals[rank], vals[n - 1]))
}

fn assignment_cost(points: &[Point2], medoids: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            medoids
                .iter()
                .map(|&m| p.distance(&points[m]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn combination_count(n: usize, k: usize) -> Option<u64> {
    let mut c: u64 = 1;
    for i in 0..k as u64 {
        c = c.checked_mul(n as u64 - i)?;
        c /= i + 1;
    }
    Some(c)
}

/// Above this many candidate subsets the exact search hands over to PAM.
const EXHAUSTIVE_COMBO_LIMIT: u64 = 10_000;

/// Exact solver: scan all C(n, k) subsets in lexicographic order, keeping the
/// first cheapest. Only used when that scan is trivially small.
fn exhaustive_kmedoids(points: &[Point2], k: usize) -> Vec<usize> {
    fn recurse(
        points: &[Point2],
        k: usize,
        start: usize,
        chosen: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if chosen.len() == k {
            let c = assignment_cost(points, chosen);
            if c < best.0 {
                *best = (c, chosen.clone());
            }
            return;
        }
        for i in start..=points.len() - (k - chosen.len()) {
            chosen.push(i);
            recurse(points, k, i + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    recurse(points, k, 0, &mut Vec::new(), &mut best);
    best.1
}

/// PAM: greedy BUILD seeding, then best-improvement SWAP until no single
/// medoid/non-medoid exchange lowers the total cost. Returns the medoid
/// indices plus the cost after each accepted swap (monotone decreasing).
pub(crate) fn pam_kmedoids(points: &[Point2], k: usize) -> (Vec<usize>, Vec<f64>) {
    let n = points.len();

    // BUILD: start from the 1-medoid optimum, then repeatedly add the point
    // with the largest cost reduction (first index wins ties).
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest: Vec<f64> = vec![f64::INFINITY; n];
    {
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..n {
            let total: f64 = points.iter().map(|p| p.distance(&points[c])).sum();
            if total < best.0 {
                best = (total, c);
            }
        }
        medoids.push(best.1);
        for i in 0..n {
            nearest[i] = points[i].distance(&points[best.1]);
        }
    }
    while medoids.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let gain: f64 = (0..n)
                .map(|i| (nearest[i] - points[i].distance(&points[c])).max(0.0))
                .sum();
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, c));
            }
        }
        let (_, c) = best.expect("k <= n leaves a candidate");
        medoids.push(c);
        for i in 0..n {
            nearest[i] = nearest[i].min(points[i].distance(&points[c]));
        }
    }

    // SWAP: apply the single best strictly-improving exchange per round.
    let mut cost = assignment_cost(points, &medoids);
    let mut history = vec![cost];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for mi in 0..medoids.len() {
            for c in 0..n {
                if medoids.contains(&c) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[mi] = c;
                let t_cost = assignment_cost(points, &trial);
                if t_cost < cost && best.is_none_or(|(b, _, _)| t_cost < b) {
                    best = Some((t_cost, mi, c));
                }
            }
        }
        match best {
            Some((t_cost, mi, c)) => {
                medoids[mi] = c;
                cost = t_cost;
                history.push(cost);
            }
            None => break,
        }
    }
    (medoids, history)
}

/// K-Medoids clustering, deterministic given input order; every returned
/// center is an input point, listed in input order.
///
/// Tiny instances (≤ 10⁴ candidate subsets) are solved exactly — cheaper
/// than PAM at that scale, and PAM's single-swap neighborhood has genuine
/// suboptimal local optima even on 8-point inputs. Larger instances run PAM
/// (greedy BUILD + best-improvement SWAP), the standard trade-off for the
/// thousands of foreground pixels the stereo pipeline produces.
pub fn kmedoids(points: &[Point2], k: usize) -> Result<Vec<Point2>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k = {} exceeds point count {}",
            k,
            points.len()
        )));
    }
    let exact = matches!(
        combination_count(points.len(), k),
        Some(c) if c <= EXHAUSTIVE_COMBO_LIMIT
    );
    let mut medoids = if exact {
        exhaustive_kmedoids(points, k)
    } else {
        pam_kmedoids(points, k).0
    };
    medoids.sort_unstable();
    Ok(medoids.into_iter().map(|m| points[m]).collect())
}

/// Write query points as CSV with an `x,y` header.
pub fn write_queries_csv(path: &Path, points: &[Point2]) -> Result<()> {
    let mut out = String::from("x,y\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Read query points from CSV (header `x,y`, one sub-pixel point per row).
pub fn read_queries_csv(path: &Path) -> Result<Vec<Point2>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if lineno == 0 {
            if line != "x,y" {
                return Err(Error::InvalidInput(format!(
                    "queries file must start with the header 'x,y', found '{}'",
                    line
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Option<f64> { s?.trim().parse().ok() };
        let (x, y) = match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(x), Some(y), None) => (x, y),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected two comma-separated numbers, found '{}'",
                    lineno + 1,
                    line
                )))
            }
        };
        points.push(Point2::new(x, y));
    }
    Ok(points)
}
