//! Per-pixel aggregation of the semantic prediction with the
//! foreground-probability map, plus the background fill used for mIoU.
//!
//! A pixel keeps its semantic argmax when that argmax is a foreground class.
//! Otherwise, if the foreground probability exceeds 0.5 (strictly), the pixel
//! takes the most likely *foreground* class; else it collapses to a reserved
//! background code. All argmax ties break toward the lowest class id.

use crate::error::{Error, Result};
use crate::tensor::{ClassSchema, ForegroundMap, LabelMap, ProbTensor};

/// The fused label map (foreground classes plus the background sentinel) and
/// its filled counterpart where every sentinel pixel is resolved to the most
/// likely background class.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub fused: LabelMap,
    pub filled: LabelMap,
}

fn argmax(row: &[f32]) -> u16 {
    let mut best = 0usize;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best as u16
}

/// Argmax restricted to `ids` (ascending class ids expected); ties break
/// toward the lowest class id.
fn argmax_restricted(row: &[f32], ids: &[u16]) -> u16 {
    let mut best = ids[0];
    for &id in &ids[1..] {
        if row[id as usize] > row[best as usize] {
            best = id;
        }
    }
    best
}

/// Maximum a-posteriori class per pixel.
pub fn argmax_prediction(probs: &ProbTensor) -> LabelMap {
    let c = probs.num_classes() as usize;
    let values = probs.values().chunks_exact(c).map(argmax).collect();
    LabelMap::new(probs.height(), probs.width(), values).expect("shape from probs")
}

/// Combines the semantic prediction with the foreground map. The result is a
/// label map over the foreground classes plus `schema.background_sentinel()`.
pub fn fuse(probs: &ProbTensor, fg: &ForegroundMap, schema: &ClassSchema) -> Result<LabelMap> {
    schema.validate()?;
    if probs.height() != fg.height() || probs.width() != fg.width() {
        return Err(Error::validation(format!(
            "probability tensor is {}x{} but foreground map is {}x{}",
            probs.height(),
            probs.width(),
            fg.height(),
            fg.width()
        )));
    }
    if probs.num_classes() != schema.num_classes {
        return Err(Error::validation(format!(
            "tensor has {} classes, schema has {}",
            probs.num_classes(),
            schema.num_classes
        )));
    }
    let mut fg_ids: Vec<u16> = schema.foreground_ids.clone();
    fg_ids.sort_unstable();
    let mut is_fg = vec![false; schema.num_classes as usize];
    for &id in &fg_ids {
        is_fg[id as usize] = true;
    }
    let sentinel = schema.background_sentinel();
    let c = probs.num_classes() as usize;
    let mut out = Vec::with_capacity(probs.values().len() / c);
    for (row, &g) in probs.values().chunks_exact(c).zip(fg.values()) {
        let top = argmax(row);
        let label = if is_fg[top as usize] {
            top
        } else if g > 0.5 {
            argmax_restricted(row, &fg_ids)
        } else {
            sentinel
        };
        out.push(label);
    }
    LabelMap::new(probs.height(), probs.width(), out)
}

/// Resolves every background-sentinel pixel of a fused map to the most likely
/// background class; foreground pixels pass through unchanged.
pub fn fill_background(fused: &LabelMap, probs: &ProbTensor, schema: &ClassSchema) -> Result<LabelMap> {
    if fused.height() != probs.height() || fused.width() != probs.width() {
        return Err(Error::validation(format!(
            "fused map is {}x{} but probability tensor is {}x{}",
            fused.height(),
            fused.width(),
            probs.height(),
            probs.width()
        )));
    }
    let bg_ids = schema.background_ids();
    let sentinel = schema.background_sentinel();
    let c = probs.num_classes() as usize;
    let mut out = Vec::with_capacity(fused.values().len());
    for (&label, row) in fused.values().iter().zip(probs.values().chunks_exact(c)) {
        if label == sentinel {
            out.push(argmax_restricted(row, &bg_ids));
        } else if label < schema.num_classes && schema.is_foreground(label) {
            out.push(label);
        } else {
            return Err(Error::validation(format!(
                "label {label} in fused map is neither foreground nor the background code"
            )));
        }
    }
    LabelMap::new(fused.height(), fused.width(), out)
}

/// Runs `fuse` and `fill_background` in one step.
pub fn fuse_and_fill(probs: &ProbTensor, fg: &ForegroundMap, schema: &ClassSchema) -> Result<FusedPrediction> {
    let fused = fuse(probs, fg, schema)?;
    let filled = fill_background(&fused, probs, schema)?;
    Ok(FusedPrediction { fused, filled })
}
