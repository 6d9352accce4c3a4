//! Seeded synthetic scenes and corrupted branch outputs.
//!
//! Scenes are non-overlapping foreground blobs over a banded background, so
//! ground-truth segment counting is unambiguous. The two branch corruptions
//! draw from independent seeded streams: a blob missed by the semantic branch
//! is missed by the foreground branch with its own independent probability,
//! which is exactly what makes fusion recover segments.
//!
//! Semantic corruption builds per-pixel logits (a per-region confidence
//! margin on the intended class, a per-region preferred foreground class as
//! runner-up, small bounded pixel noise) and applies a temperature softmax.
//! The noise bound is far below the smallest margin, so the per-pixel argmax
//! always recovers the intended class; the temperature and margins only move
//! the dispersion measures. The `domain_shift` knob scales every error rate,
//! the jitter radius and the temperature, standing in for a deployment-domain
//! change.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{connected_components, Segment};
use crate::tensor::{
    save_manifest, save_tensor, ClassSchema, DatasetManifest, ForegroundMap, ImageRecord,
    LabelMap, ProbTensor, Tensor,
};

/// Splitmix-style combination of a base seed and a stream id, used to derive
/// independent deterministic RNG streams.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream ids separating the scene generator from the two branch corruptions.
pub const STREAM_SEMANTIC: u64 = 0x5345_4d41;
pub const STREAM_FOREGROUND: u64 = 0x464f_5245;
pub const STREAM_SCENE: u64 = 0x5343_4e45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobShape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "class_id")]
pub enum BackgroundLayout {
    /// One horizontal band per background class, ascending class id.
    HorizontalBands,
    /// A single background class everywhere.
    Flat(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: u32,
    pub width: u32,
    pub min_blobs: u32,
    pub max_blobs: u32,
    pub min_extent: u32,
    pub max_extent: u32,
    pub shapes: Vec<BlobShape>,
    /// Sampling frequency of each foreground class, in `foreground_ids` order.
    pub class_frequencies: Vec<f64>,
    pub background_layout: BackgroundLayout,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            min_blobs: 4,
            max_blobs: 9,
            min_extent: 8,
            max_extent: 24,
            shapes: vec![BlobShape::Rectangle, BlobShape::Ellipse],
            class_frequencies: vec![0.5, 0.5],
            background_layout: BackgroundLayout::HorizontalBands,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, schema: &ClassSchema) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::validation("scene must be at least 8x8"));
        }
        if self.max_blobs < self.min_blobs {
            return Err(Error::validation("max_blobs must be >= min_blobs"));
        }
        if self.min_extent < 2 || self.max_extent < self.min_extent {
            return Err(Error::validation("blob extents must satisfy 2 <= min <= max"));
        }
        if self.max_extent > self.height.min(self.width) / 2 {
            return Err(Error::validation("max_extent larger than half the scene"));
        }
        if self.shapes.is_empty() {
            return Err(Error::validation("at least one blob shape is required"));
        }
        if self.class_frequencies.len() != schema.num_foreground() {
            return Err(Error::validation(format!(
                "{} class frequencies for {} foreground classes",
                self.class_frequencies.len(),
                schema.num_foreground()
            )));
        }
        if self.class_frequencies.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::validation("class frequencies must lie in [0, 1]"));
        }
        let sum: f64 = self.class_frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("class frequencies sum to {sum}, not 1")));
        }
        if let BackgroundLayout::Flat(class_id) = self.background_layout {
            if class_id >= schema.num_classes || schema.is_foreground(class_id) {
                return Err(Error::validation(format!(
                    "flat background class {class_id} is not a background class"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Probability that a ground-truth blob is predicted as background by the
    /// semantic branch.
    pub semantic_miss_rate: f64,
    /// Probability, per ground-truth blob slot, of injecting one spurious
    /// foreground blob into the semantic prediction.
    pub false_positive_rate: f64,
    /// Maximum per-axis translation of a predicted blob mask, in pixels.
    pub boundary_jitter: u32,
    /// Softmax temperature; higher values flatten the distributions.
    pub temperature: f64,
    /// Probability that the foreground branch misses a ground-truth blob.
    pub fg_miss_rate: f64,
    /// Probability, per ground-truth blob slot, of a foreground-branch false
    /// alarm region.
    pub fg_false_alarm_rate: f64,
    /// Multiplies all error rates, the jitter radius and the temperature.
    pub domain_shift: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            semantic_miss_rate: 0.3,
            false_positive_rate: 0.2,
            boundary_jitter: 2,
            temperature: 1.0,
            fg_miss_rate: 0.05,
            fg_false_alarm_rate: 0.3,
            domain_shift: 1.0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("semantic_miss_rate", self.semantic_miss_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("fg_miss_rate", self.fg_miss_rate),
            ("fg_false_alarm_rate", self.fg_false_alarm_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
                return Err(Error::validation(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::validation("temperature must be positive"));
        }
        if !self.domain_shift.is_finite() || self.domain_shift < 0.0 {
            return Err(Error::validation("domain_shift must be non-negative"));
        }
        Ok(())
    }

    fn effective(&self) -> EffectiveCorruption {
        let s = self.domain_shift;
        EffectiveCorruption {
            semantic_miss: (self.semantic_miss_rate * s).min(1.0),
            fp_rate: (self.false_positive_rate * s).min(1.0),
            jitter: (self.boundary_jitter as f64 * s).round() as i64,
            temperature: (self.temperature * s).max(1e-6),
            fg_miss: (self.fg_miss_rate * s).min(1.0),
            fg_false_alarm: (self.fg_false_alarm_rate * s).min(1.0),
            shift: s,
        }
    }
}

struct EffectiveCorruption {
    semantic_miss: f64,
    fp_rate: f64,
    jitter: i64,
    temperature: f64,
    fg_miss: f64,
    fg_false_alarm: f64,
    shift: f64,
}

// Logit model constants. The pixel noise bound stays well below half of the
// smallest margin minus the preferred-class bonus, so the argmax is always
// the intended class.
const MARGIN_TP: (f64, f64) = (2.4, 3.4);
const MARGIN_FP: (f64, f64) = (1.3, 1.9);
const MARGIN_BG: (f64, f64) = (2.0, 2.8);
const PREFERRED_BONUS: f64 = 0.4;
const PIXEL_NOISE: f64 = 0.05;

// Foreground-probability ranges per pixel category at domain_shift 1, and
// where they drift to as the shift reaches 2: real detections lose
// confidence, false alarms gain it. Detections stay above 0.5 so fusion
// still sees them.
const G_DETECTED: (f64, f64) = (0.80, 0.95);
const G_DETECTED_SHIFTED: (f64, f64) = (0.55, 0.72);
const G_FALSE_ALARM: (f64, f64) = (0.55, 0.75);
const G_FALSE_ALARM_SHIFTED: (f64, f64) = (0.74, 0.92);
const G_BACKGROUND: (f64, f64) = (0.05, 0.30);

/// Confidence ranges of the foreground branch at a given domain shift; the
/// drift saturates at shift 2.
fn foreground_ranges(shift: f64) -> ((f64, f64), (f64, f64)) {
    let t = (shift - 1.0).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| a + t * (b - a);
    (
        (lerp(G_DETECTED.0, G_DETECTED_SHIFTED.0), lerp(G_DETECTED.1, G_DETECTED_SHIFTED.1)),
        (
            lerp(G_FALSE_ALARM.0, G_FALSE_ALARM_SHIFTED.0),
            lerp(G_FALSE_ALARM.1, G_FALSE_ALARM_SHIFTED.1),
        ),
    )
}

fn uniform_in(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + rng.gen::<f64>() * (range.1 - range.0)
}

fn raster_blob(shape: BlobShape, top_r: u32, top_c: u32, ext_h: u32, ext_w: u32) -> Vec<(u32, u32)> {
    let mut pixels = Vec::new();
    match shape {
        BlobShape::Rectangle => {
            for r in top_r..top_r + ext_h {
                for c in top_c..top_c + ext_w {
                    pixels.push((r, c));
                }
            }
        }
        BlobShape::Ellipse => {
            let cy = top_r as f64 + (ext_h as f64 - 1.0) / 2.0;
            let cx = top_c as f64 + (ext_w as f64 - 1.0) / 2.0;
            let ry = ext_h as f64 / 2.0;
            let rx = ext_w as f64 / 2.0;
            for r in top_r..top_r + ext_h {
                for c in top_c..top_c + ext_w {
                    let dy = (r as f64 - cy) / ry;
                    let dx = (c as f64 - cx) / rx;
                    if dy * dy + dx * dx <= 1.0 {
                        pixels.push((r, c));
                    }
                }
            }
        }
    }
    pixels
}

/// Marks a pixel set and its Chebyshev-1 dilation as occupied, keeping later
/// blobs from touching it even diagonally.
fn block_occupancy(occupancy: &mut [bool], pixels: &[(u32, u32)], height: u32, width: u32) {
    for &(r, c) in pixels {
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let nr = r as i64 + dr;
                let nc = c as i64 + dc;
                if nr >= 0 && nc >= 0 && nr < height as i64 && nc < width as i64 {
                    occupancy[nr as usize * width as usize + nc as usize] = true;
                }
            }
        }
    }
}

const PLACEMENT_TRIES: usize = 200;

fn place_blob(
    rng: &mut ChaCha8Rng,
    height: u32,
    width: u32,
    extent_range: (u32, u32),
    shapes: &[BlobShape],
    occupancy: &mut [bool],
) -> Option<Vec<(u32, u32)>> {
    for _ in 0..PLACEMENT_TRIES {
        let shape = shapes[rng.gen_range(0..shapes.len())];
        let ext_h = rng.gen_range(extent_range.0..=extent_range.1);
        let ext_w = rng.gen_range(extent_range.0..=extent_range.1);
        if ext_h > height || ext_w > width {
            continue;
        }
        let top_r = rng.gen_range(0..=height - ext_h);
        let top_c = rng.gen_range(0..=width - ext_w);
        let pixels = raster_blob(shape, top_r, top_c, ext_h, ext_w);
        let free = pixels
            .iter()
            .all(|&(r, c)| !occupancy[r as usize * width as usize + c as usize]);
        if free && !pixels.is_empty() {
            block_occupancy(occupancy, &pixels, height, width);
            return Some(pixels);
        }
    }
    None
}

fn sample_class(rng: &mut ChaCha8Rng, schema: &ClassSchema, frequencies: &[f64]) -> u16 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &f) in frequencies.iter().enumerate() {
        acc += f;
        if u < acc {
            return schema.foreground_ids[i];
        }
    }
    *schema.foreground_ids.last().unwrap()
}

/// Generates a ground-truth label map: a background partition with
/// non-overlapping foreground blobs painted on top. Deterministic in
/// `config.rng_seed`.
pub fn generate_scene(config: &SceneConfig, schema: &ClassSchema) -> Result<LabelMap> {
    schema.validate()?;
    config.validate(schema)?;
    let (h, w) = (config.height, config.width);
    let mut values = vec![0u16; h as usize * w as usize];
    match config.background_layout {
        BackgroundLayout::Flat(class_id) => values.fill(class_id),
        BackgroundLayout::HorizontalBands => {
            let bands = schema.background_ids();
            let band_height = (h as usize / bands.len()).max(1);
            for r in 0..h as usize {
                let band = (r / band_height).min(bands.len() - 1);
                let class = bands[band];
                for c in 0..w as usize {
                    values[r * w as usize + c] = class;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.rng_seed, STREAM_SCENE));
    let blob_count = rng.gen_range(config.min_blobs..=config.max_blobs);
    let mut occupancy = vec![false; h as usize * w as usize];
    for i in 0..blob_count {
        let class = sample_class(&mut rng, schema, &config.class_frequencies);
        let pixels = place_blob(
            &mut rng,
            h,
            w,
            (config.min_extent, config.max_extent),
            &config.shapes,
            &mut occupancy,
        )
        .ok_or_else(|| {
            Error::validation(format!(
                "could not place blob {} of {blob_count} without overlap after {PLACEMENT_TRIES} tries",
                i + 1
            ))
        })?;
        for (r, c) in pixels {
            values[r as usize * w as usize + c as usize] = class;
        }
    }
    LabelMap::new(h, w, values)
}

/// A ground-truth blob with the background class that surrounds it, used to
/// erase missed blobs plausibly.
struct GtBlob {
    class_id: u16,
    pixels: Vec<(u32, u32)>,
    ring_class: u16,
}

fn surrounding_background_class(
    gt: &LabelMap,
    segment: &Segment,
    schema: &ClassSchema,
) -> u16 {
    let mut counts = vec![0u32; schema.num_classes as usize];
    let (h, w) = (gt.height() as i64, gt.width() as i64);
    for &(r, c) in segment.boundary() {
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let nr = r as i64 + dr;
                let nc = c as i64 + dc;
                if nr < 0 || nc < 0 || nr >= h || nc >= w {
                    continue;
                }
                let v = gt.get(nr as u32, nc as u32);
                if v < schema.num_classes && !schema.is_foreground(v) {
                    counts[v as usize] += 1;
                }
            }
        }
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .max_by_key(|&(id, &n)| (n, std::cmp::Reverse(id)))
        .map(|(id, _)| id as u16)
        .unwrap_or_else(|| schema.background_ids()[0])
}

fn gt_blobs(gt: &LabelMap, schema: &ClassSchema) -> Vec<GtBlob> {
    connected_components(gt, &schema.foreground_ids)
        .into_iter()
        .map(|segment| GtBlob {
            class_id: segment.class_id(),
            ring_class: surrounding_background_class(gt, &segment, schema),
            pixels: segment.pixels().to_vec(),
        })
        .collect()
}

/// Extent range observed over the ground-truth blobs; injected false
/// positives mimic it so they are not trivially separable by size.
fn observed_extent_range(blobs: &[GtBlob]) -> (u32, u32) {
    let mut lo = u32::MAX;
    let mut hi = 0u32;
    for blob in blobs {
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (u32::MAX, 0u32, u32::MAX, 0u32);
        for &(r, c) in &blob.pixels {
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
        lo = lo.min((rmax - rmin + 1).min(cmax - cmin + 1));
        hi = hi.max((rmax - rmin + 1).max(cmax - cmin + 1));
    }
    if lo > hi {
        (4, 12)
    } else {
        (lo.max(2), hi.max(2))
    }
}

fn translate(pixels: &[(u32, u32)], dr: i64, dc: i64, height: u32, width: u32) -> Vec<(u32, u32)> {
    pixels
        .iter()
        .filter_map(|&(r, c)| {
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            (nr >= 0 && nc >= 0 && nr < height as i64 && nc < width as i64)
                .then_some((nr as u32, nc as u32))
        })
        .collect()
}

struct Region {
    margin: f64,
    preferred_fg: u16,
}

/// Corrupts the ground truth into a semantic probability tensor: per-blob
/// misses, injected false-positive blobs, jittered masks and a temperature
/// softmax over margin-plus-noise logits.
pub fn corrupt_semantic(
    gt: &LabelMap,
    config: &CorruptionConfig,
    schema: &ClassSchema,
    seed: u64,
) -> Result<ProbTensor> {
    schema.validate()?;
    config.validate()?;
    let eff = config.effective();
    let (h, w) = (gt.height(), gt.width());
    let npix = h as usize * w as usize;
    let c = schema.num_classes as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_SEMANTIC));

    let blobs = gt_blobs(gt, schema);
    let bg_classes = schema.background_ids();
    let bg_region_of = |class_id: u16| -> usize {
        bg_classes.iter().position(|&b| b == class_id).unwrap_or(0)
    };

    // Region table: one region per background class, then one per blob, then
    // the injected false positives. Draw order is fixed.
    let mut regions: Vec<Region> = Vec::new();
    for _ in &bg_classes {
        regions.push(Region {
            margin: uniform_in(&mut rng, MARGIN_BG),
            preferred_fg: schema.foreground_ids
                [rng.gen_range(0..schema.foreground_ids.len())],
        });
    }
    struct BlobDraw {
        missed: bool,
        region: usize,
        offset: (i64, i64),
    }
    let mut draws = Vec::with_capacity(blobs.len());
    for _ in &blobs {
        let missed = rng.gen::<f64>() < eff.semantic_miss;
        let region = regions.len();
        regions.push(Region {
            margin: uniform_in(&mut rng, MARGIN_TP),
            preferred_fg: schema.foreground_ids
                [rng.gen_range(0..schema.foreground_ids.len())],
        });
        let offset = if eff.jitter > 0 {
            (
                rng.gen_range(-eff.jitter..=eff.jitter),
                rng.gen_range(-eff.jitter..=eff.jitter),
            )
        } else {
            (0, 0)
        };
        draws.push(BlobDraw { missed, region, offset });
    }

    // Base layer: background classes keep their ground-truth value; ignore
    // pixels fall back to the first background class.
    let first_bg = bg_classes[0];
    let mut intended = vec![0u16; npix];
    let mut region_grid = vec![0usize; npix];
    for i in 0..npix {
        let v = gt.values()[i];
        let class = if v < schema.num_classes && !schema.is_foreground(v) { v } else { first_bg };
        intended[i] = class;
        region_grid[i] = bg_region_of(class);
    }
    // Erase every blob to its surrounding background.
    for blob in &blobs {
        let region = bg_region_of(blob.ring_class);
        for &(r, col) in &blob.pixels {
            let idx = r as usize * w as usize + col as usize;
            intended[idx] = blob.ring_class;
            region_grid[idx] = region;
        }
    }
    // Repaint the surviving blobs at their jittered positions.
    for (blob, draw) in blobs.iter().zip(&draws) {
        if draw.missed {
            continue;
        }
        for (r, col) in translate(&blob.pixels, draw.offset.0, draw.offset.1, h, w) {
            let idx = r as usize * w as usize + col as usize;
            intended[idx] = blob.class_id;
            region_grid[idx] = draw.region;
        }
    }
    // Inject false-positive blobs away from the ground-truth foreground.
    let extent_range = observed_extent_range(&blobs);
    let mut occupancy = vec![false; npix];
    for blob in &blobs {
        block_occupancy(&mut occupancy, &blob.pixels, h, w);
    }
    let shapes = [BlobShape::Rectangle, BlobShape::Ellipse];
    for _ in 0..blobs.len() {
        if rng.gen::<f64>() >= eff.fp_rate {
            continue;
        }
        let class = schema.foreground_ids[rng.gen_range(0..schema.foreground_ids.len())];
        let region = regions.len();
        regions.push(Region {
            margin: uniform_in(&mut rng, MARGIN_FP),
            preferred_fg: schema.foreground_ids
                [rng.gen_range(0..schema.foreground_ids.len())],
        });
        if let Some(pixels) = place_blob(&mut rng, h, w, extent_range, &shapes, &mut occupancy) {
            for (r, col) in pixels {
                let idx = r as usize * w as usize + col as usize;
                intended[idx] = class;
                region_grid[idx] = region;
            }
        }
    }

    // Logits to probabilities, row-major, one noise draw per class per pixel.
    let mut values = vec![0.0f32; npix * c];
    let mut logits = vec![0.0f64; c];
    for i in 0..npix {
        let region = &regions[region_grid[i]];
        let k_int = intended[i] as usize;
        for (k, logit) in logits.iter_mut().enumerate() {
            let mut v = if k == k_int { region.margin } else { 0.0 };
            if k as u16 == region.preferred_fg {
                v += PREFERRED_BONUS;
            }
            v += (rng.gen::<f64>() * 2.0 - 1.0) * PIXEL_NOISE;
            *logit = v;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0f64;
        for logit in logits.iter_mut() {
            *logit = ((*logit - max) / eff.temperature).exp();
            sum += *logit;
        }
        for (k, &logit) in logits.iter().enumerate() {
            values[i * c + k] = (logit / sum) as f32;
        }
    }
    ProbTensor::new(h, w, schema.num_classes, values)
}

/// Corrupts the ground truth into a foreground-probability map with miss and
/// false-alarm draws independent of the semantic branch. Detected regions get
/// high confidence, false alarms sit closer to the decision boundary.
pub fn corrupt_foreground(
    gt: &LabelMap,
    config: &CorruptionConfig,
    schema: &ClassSchema,
    seed: u64,
) -> Result<ForegroundMap> {
    schema.validate()?;
    config.validate()?;
    let eff = config.effective();
    let (h, w) = (gt.height(), gt.width());
    let npix = h as usize * w as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_FOREGROUND));

    let blobs = gt_blobs(gt, schema);
    struct BlobDraw {
        missed: bool,
        offset: (i64, i64),
    }
    let mut draws = Vec::with_capacity(blobs.len());
    for _ in &blobs {
        let missed = rng.gen::<f64>() < eff.fg_miss;
        let offset = if eff.jitter > 0 {
            (
                rng.gen_range(-eff.jitter..=eff.jitter),
                rng.gen_range(-eff.jitter..=eff.jitter),
            )
        } else {
            (0, 0)
        };
        draws.push(BlobDraw { missed, offset });
    }

    // Categories: 0 background, 1 false alarm, 2 detected (detected wins).
    let mut category = vec![0u8; npix];
    let extent_range = observed_extent_range(&blobs);
    let mut occupancy = vec![false; npix];
    for blob in &blobs {
        block_occupancy(&mut occupancy, &blob.pixels, h, w);
    }
    let shapes = [BlobShape::Rectangle, BlobShape::Ellipse];
    for _ in 0..blobs.len() {
        if rng.gen::<f64>() >= eff.fg_false_alarm {
            continue;
        }
        if let Some(pixels) = place_blob(&mut rng, h, w, extent_range, &shapes, &mut occupancy) {
            for (r, c) in pixels {
                category[r as usize * w as usize + c as usize] = 1;
            }
        }
    }
    for (blob, draw) in blobs.iter().zip(&draws) {
        if draw.missed {
            continue;
        }
        for (r, c) in translate(&blob.pixels, draw.offset.0, draw.offset.1, h, w) {
            category[r as usize * w as usize + c as usize] = 2;
        }
    }

    let (detected_range, false_alarm_range) = foreground_ranges(eff.shift);
    let mut values = vec![0.0f32; npix];
    for i in 0..npix {
        let range = match category[i] {
            2 => detected_range,
            1 => false_alarm_range,
            _ => G_BACKGROUND,
        };
        values[i] = uniform_in(&mut rng, range) as f32;
    }
    ForegroundMap::new(h, w, values)
}

/// Generates `num_scenes` corrupted scenes and writes them as tensor files
/// plus a manifest into `dir`. Every scene derives its own seed from `seed`
/// and its index, so the output is a pure function of the arguments. Returns
/// the manifest path.
pub fn write_dataset(
    dir: &Path,
    schema: &ClassSchema,
    scene: &SceneConfig,
    corruption: &CorruptionConfig,
    num_scenes: usize,
    seed: u64,
) -> Result<PathBuf> {
    schema.validate()?;
    scene.validate(schema)?;
    corruption.validate()?;
    if num_scenes == 0 {
        return Err(Error::validation("empty dataset: num_scenes must be positive"));
    }
    let records: Vec<Result<ImageRecord>> = (0..num_scenes)
        .into_par_iter()
        .map(|index| {
            let image_seed = mix_seed(seed, index as u64);
            let scene_config = SceneConfig { rng_seed: image_seed, ..scene.clone() };
            let gt = generate_scene(&scene_config, schema)?;
            let probs = corrupt_semantic(&gt, corruption, schema, image_seed)?;
            let fg = corrupt_foreground(&gt, corruption, schema, image_seed)?;
            let id = format!("scene_{index:05}");
            let record = ImageRecord {
                id: id.clone(),
                probs: format!("{id}_probs.sft"),
                foreground: format!("{id}_fg.sft"),
                labels: format!("{id}_labels.sft"),
            };
            save_tensor(&dir.join(&record.probs), &Tensor::Prob(probs))?;
            save_tensor(&dir.join(&record.foreground), &Tensor::Foreground(fg))?;
            save_tensor(&dir.join(&record.labels), &Tensor::Labels(gt))?;
            Ok(record)
        })
        .collect();
    let images = records.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { schema: schema.clone(), images };
    let manifest_path = dir.join("manifest.json");
    save_manifest(&manifest_path, &manifest)?;
    Ok(manifest_path)
}
