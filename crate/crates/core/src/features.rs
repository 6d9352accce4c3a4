//! Pixel-wise dispersion heatmaps and the hand-crafted segment feature vector.
//!
//! Dispersion measures are normalized into [0, 1]: entropy by log c, the
//! foreground-branch binary entropy by log 2. Segment aggregation uses
//! compensated summation so means stay order-free and the decomposition
//! `S * mean = S_in * mean_in + S_bd * mean_bd` holds to 1e-9.

use crate::error::{Error, Result};
use crate::segmentation::Segment;
use crate::tensor::{ClassSchema, ForegroundMap, ProbTensor};

/// Per-pixel uncertainty heatmaps derived from the two branch outputs.
#[derive(Debug, Clone)]
pub struct DispersionMaps {
    height: u32,
    width: u32,
    /// Normalized entropy of the class distribution.
    pub entropy: Vec<f64>,
    /// One minus the top class probability.
    pub variation_ratio: Vec<f64>,
    /// Variation ratio plus the runner-up probability.
    pub margin: Vec<f64>,
    /// Normalized binary entropy of the foreground probability.
    pub fg_entropy: Vec<f64>,
}

impl DispersionMaps {
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }
}

fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// Computes all four dispersion heatmaps in one pass.
pub fn dispersion_maps(probs: &ProbTensor, fg: &ForegroundMap) -> Result<DispersionMaps> {
    if probs.height() != fg.height() || probs.width() != fg.width() {
        return Err(Error::validation(format!(
            "probability tensor is {}x{} but foreground map is {}x{}",
            probs.height(),
            probs.width(),
            fg.height(),
            fg.width()
        )));
    }
    let c = probs.num_classes() as usize;
    let log_c = (c as f64).ln();
    let npix = probs.values().len() / c;
    let mut entropy = Vec::with_capacity(npix);
    let mut variation_ratio = Vec::with_capacity(npix);
    let mut margin = Vec::with_capacity(npix);
    for row in probs.values().chunks_exact(c) {
        let mut ent = 0.0f64;
        let mut top = 0.0f64;
        let mut second = 0.0f64;
        for &v in row {
            let p = v as f64;
            ent -= xlogx(p);
            if p > top {
                second = top;
                top = p;
            } else if p > second {
                second = p;
            }
        }
        entropy.push((ent / log_c).clamp(0.0, 1.0));
        variation_ratio.push((1.0 - top).clamp(0.0, 1.0));
        margin.push((1.0 - top + second).clamp(0.0, 1.0));
    }
    let log_2 = 2.0f64.ln();
    let fg_entropy = fg
        .values()
        .iter()
        .map(|&g| {
            let g = g as f64;
            ((-xlogx(g) - xlogx(1.0 - g)) / log_2).clamp(0.0, 1.0)
        })
        .collect();
    Ok(DispersionMaps {
        height: probs.height(),
        width: probs.width(),
        entropy,
        variation_ratio,
        margin,
        fg_entropy,
    })
}

/// Kahan compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn mean_over(values: &[f64], pixels: &[(u32, u32)], width: u32) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    let mut acc = KahanSum::default();
    for &(r, c) in pixels {
        acc.add(values[r as usize * width as usize + c as usize]);
    }
    acc.value() / pixels.len() as f64
}

/// Number of scalar features independent of the class count; the full vector
/// has `BASE_FEATURES + schema.num_foreground()` entries.
pub const BASE_FEATURES: usize = 27;

pub const IDX_SIZE: usize = 0;
pub const IDX_SIZE_IN: usize = 1;
pub const IDX_SIZE_BD: usize = 2;
pub const IDX_SIZE_REL: usize = 3;
pub const IDX_SIZE_IN_REL: usize = 4;
/// Start of the entropy block; each dispersion block is
/// [mean, mean_in, mean_bd, rel, rel_in].
pub const IDX_ENTROPY: usize = 5;
pub const IDX_VARRATIO: usize = 10;
pub const IDX_MARGIN: usize = 15;
pub const IDX_FG_ENTROPY: usize = 20;
pub const IDX_CENTER_ROW: usize = 25;
pub const IDX_CENTER_COL: usize = 26;
/// Start of the per-foreground-class mean probability tail.
pub const IDX_CLASS_PROBS: usize = 27;

/// Fixed-order segment feature vector: sizes and relative sizes, one block of
/// five per dispersion measure (E, V, M, then the foreground-branch entropy),
/// the geometric center, and the mean probability of each foreground class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < BASE_FEATURES + 1 {
            return Err(Error::validation(format!(
                "feature vector has {} entries, need at least {}",
                values.len(),
                BASE_FEATURES + 1
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite feature value {bad}")));
        }
        Ok(FeatureVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }
}

/// Column names matching the feature vector layout for the given schema.
pub fn feature_names(schema: &ClassSchema) -> Vec<String> {
    let mut names: Vec<String> = vec![
        "size".into(),
        "size_in".into(),
        "size_bd".into(),
        "size_rel".into(),
        "size_in_rel".into(),
    ];
    for block in ["entropy", "varratio", "margin", "fg_entropy"] {
        names.push(format!("{block}_mean"));
        names.push(format!("{block}_mean_in"));
        names.push(format!("{block}_mean_bd"));
        names.push(format!("{block}_rel"));
        names.push(format!("{block}_rel_in"));
    }
    names.push("center_row".into());
    names.push("center_col".into());
    for &id in &schema.foreground_ids {
        names.push(format!("mean_prob_{id}"));
    }
    names
}

/// Aggregates the dispersion maps and class probabilities over one segment.
/// Means over an empty inner set are zero by convention.
pub fn extract_features(
    segment: &Segment,
    maps: &DispersionMaps,
    probs: &ProbTensor,
    schema: &ClassSchema,
) -> Result<FeatureVector> {
    if segment.size() == 0 {
        return Err(Error::validation("cannot extract features of an empty segment"));
    }
    if probs.height() != maps.height() || probs.width() != maps.width() {
        return Err(Error::validation("probability tensor and dispersion maps differ in shape"));
    }
    let (h, w) = (maps.height(), maps.width());
    for &(r, c) in segment.pixels() {
        if r >= h || c >= w {
            return Err(Error::validation(format!(
                "segment pixel ({r}, {c}) outside {h}x{w} maps"
            )));
        }
    }

    let size = segment.size() as f64;
    let size_in = segment.inner_size() as f64;
    let size_bd = segment.boundary_size() as f64;
    let size_rel = size / size_bd;
    let size_in_rel = size_in / size_bd;

    let mut values = Vec::with_capacity(BASE_FEATURES + schema.num_foreground());
    values.extend_from_slice(&[size, size_in, size_bd, size_rel, size_in_rel]);

    for map in [&maps.entropy, &maps.variation_ratio, &maps.margin, &maps.fg_entropy] {
        let mean = mean_over(map, segment.pixels(), w);
        let mean_in = mean_over(map, segment.inner(), w);
        let mean_bd = mean_over(map, segment.boundary(), w);
        values.push(mean);
        values.push(mean_in);
        values.push(mean_bd);
        values.push(mean * size_rel);
        values.push(mean_in * size_in_rel);
    }

    let (center_row, center_col) = segment.center();
    values.push(center_row);
    values.push(center_col);

    let c = probs.num_classes() as usize;
    for &class_id in &schema.foreground_ids {
        let mut acc = KahanSum::default();
        for &(r, col) in segment.pixels() {
            let base = (r as usize * w as usize + col as usize) * c;
            acc.add(probs.values()[base + class_id as usize] as f64);
        }
        values.push(acc.value() / size);
    }

    FeatureVector::from_values(values)
}
