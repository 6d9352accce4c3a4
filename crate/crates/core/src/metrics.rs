//! Segment-level detection metrics over the 101-threshold grid, plus
//! meta-classification AUROC and pixel-level mIoU.
//!
//! A predicted segment survives pruning at threshold `h` when its
//! false-positive score satisfies `m <= h`. Counting follows the segment-side
//! definitions: false positives are surviving predictions with zero adjusted
//! IoU, true positives are ground-truth segments still covered by at least one
//! surviving prediction, false negatives the rest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Segment;
use crate::tensor::{ClassSchema, LabelMap};

/// The fixed evaluation grid: 101 equally spaced thresholds from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    values: Vec<f64>,
}

impl ThresholdGrid {
    pub fn standard() -> Self {
        ThresholdGrid { values: (0..=100).map(|i| i as f64 / 100.0).collect() }
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
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::standard()
    }
}

fn intersection_count(a: &[(u32, u32)], b: &[(u32, u32)]) -> usize {
    let mut i = 0;
    let mut j = 0;
    let mut count = 0;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// IoU of a predicted segment against the union of all ground-truth segments
/// it intersects; zero when it touches none. The union is deduplicated, so
/// the result is correct even if the ground-truth sets overlap.
pub fn adjusted_iou(q: &Segment, gt_segments: &[Segment]) -> Result<f64> {
    if q.size() == 0 {
        return Err(Error::validation("adjusted IoU of an empty segment"));
    }
    let mut matched: Vec<(u32, u32)> = Vec::new();
    for gt in gt_segments {
        if intersection_count(q.pixels(), gt.pixels()) > 0 {
            matched.extend_from_slice(gt.pixels());
        }
    }
    if matched.is_empty() {
        return Ok(0.0);
    }
    matched.sort_unstable();
    matched.dedup();
    let inter = intersection_count(q.pixels(), &matched);
    let union = q.size() + matched.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// IoU of a ground-truth segment against the union of predicted segments that
/// intersect it and survive the threshold (`m <= h`).
pub fn gt_iou_at_threshold(gt_seg: &Segment, predicted: &[(Segment, f64)], h: f64) -> f64 {
    let mut inter_total = 0usize;
    let mut kept_pixels: Vec<(u32, u32)> = Vec::new();
    for (pred, score) in predicted {
        if *score > h {
            continue;
        }
        let inter = intersection_count(gt_seg.pixels(), pred.pixels());
        if inter > 0 {
            inter_total += inter;
            kept_pixels.extend_from_slice(pred.pixels());
        }
    }
    if inter_total == 0 {
        return 0.0;
    }
    // Surviving predictions may overlap each other, so the union needs the
    // deduplicated pixel set.
    kept_pixels.sort_unstable();
    kept_pixels.dedup();
    let inter = intersection_count(gt_seg.pixels(), &kept_pixels);
    let union = gt_seg.size() + kept_pixels.len() - inter;
    inter as f64 / union as f64
}

/// One scored prediction: the segment, its adjusted IoU against the ground
/// truth, and the meta classifier's false-positive probability.
#[derive(Debug, Clone)]
pub struct ScoredSegment {
    pub segment: Segment,
    pub adjusted_iou: f64,
    pub meta_score: f64,
}

/// Per-image data reduced to what threshold sweeps need: the scores of
/// false-positive predictions, the scores of true-positive predictions, and
/// for every ground-truth segment the minimum score over the predictions that
/// intersect it (infinite when nothing does).
#[derive(Debug, Clone)]
pub struct ImageEval {
    fp_scores: Vec<f64>,
    tp_scores: Vec<f64>,
    gt_min_scores: Vec<f64>,
}

impl ImageEval {
    pub fn build(predicted: &[ScoredSegment], gt_segments: &[Segment]) -> Result<Self> {
        let mut fp_scores = Vec::new();
        let mut tp_scores = Vec::new();
        for scored in predicted {
            if !scored.meta_score.is_finite() || !(0.0..=1.0).contains(&scored.meta_score) {
                return Err(Error::validation(format!(
                    "segment has invalid meta score {}",
                    scored.meta_score
                )));
            }
            if !scored.adjusted_iou.is_finite() || !(0.0..=1.0).contains(&scored.adjusted_iou) {
                return Err(Error::validation(format!(
                    "segment has invalid adjusted IoU {}",
                    scored.adjusted_iou
                )));
            }
            if scored.adjusted_iou == 0.0 {
                fp_scores.push(scored.meta_score);
            } else {
                tp_scores.push(scored.meta_score);
            }
        }
        let gt_min_scores = gt_segments
            .iter()
            .map(|gt| {
                let mut min = f64::INFINITY;
                for scored in predicted {
                    if scored.meta_score < min
                        && intersection_count(gt.pixels(), scored.segment.pixels()) > 0
                    {
                        min = scored.meta_score;
                    }
                }
                min
            })
            .collect();
        Ok(ImageEval { fp_scores, tp_scores, gt_min_scores })
    }

    pub fn num_predicted(&self) -> usize {
        self.fp_scores.len() + self.tp_scores.len()
    }

    pub fn num_gt(&self) -> usize {
        self.gt_min_scores.len()
    }

    pub fn fp_scores(&self) -> &[f64] {
        &self.fp_scores
    }

    pub fn tp_scores(&self) -> &[f64] {
        &self.tp_scores
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub false_neg: u64,
}

/// Counts over an image set at one threshold. A ground-truth segment counts as
/// true positive exactly when some intersecting prediction survives, which is
/// equivalent to its threshold-side IoU being positive.
pub fn count_at_threshold(images: &[ImageEval], h: f64) -> Counts {
    let mut counts = Counts { tp: 0, fp: 0, false_neg: 0 };
    for image in images {
        counts.fp += image.fp_scores.iter().filter(|&&m| m <= h).count() as u64;
        for &min_m in &image.gt_min_scores {
            if min_m <= h {
                counts.tp += 1;
            } else {
                counts.false_neg += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub false_neg: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is 1 when nothing survives pruning (empty-prediction
/// convention); recall is 1 when the ground truth is empty.
fn precision_recall_f1(counts: Counts) -> (f64, f64, f64) {
    let precision = if counts.tp + counts.fp == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let recall = if counts.tp + counts.false_neg == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.false_neg) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn pr_curve(images: &[ImageEval], grid: &ThresholdGrid) -> Vec<CurvePoint> {
    grid.values()
        .iter()
        .map(|&h| {
            let counts = count_at_threshold(images, h);
            let (precision, recall, f1) = precision_recall_f1(counts);
            CurvePoint {
                threshold: h,
                tp: counts.tp,
                fp: counts.fp,
                false_neg: counts.false_neg,
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub auprc: f64,
    pub rec80: f64,
    pub f1_mean: f64,
    pub f1_star: f64,
    pub f1_at_one: f64,
}

/// Scalar summaries of a threshold curve. AUPRC integrates trapezoidally over
/// the points sorted by recall with a zero-recall anchor at the lowest-recall
/// precision; REC80 is the best recall among points with precision >= 0.80,
/// zero when none qualifies.
pub fn summary_metrics(curve: &[CurvePoint]) -> Result<SummaryMetrics> {
    if curve.is_empty() {
        return Err(Error::validation("cannot summarize an empty curve"));
    }
    let mut points: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut auprc = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(rec, prec) in &points {
        auprc += (rec - prev.0) * (prec + prev.1) / 2.0;
        prev = (rec, prec);
    }
    let rec80 = curve
        .iter()
        .filter(|p| p.precision >= 0.80)
        .map(|p| p.recall)
        .fold(0.0, f64::max);
    let f1_mean = curve.iter().map(|p| p.f1).sum::<f64>() / curve.len() as f64;
    let f1_star = curve.iter().map(|p| p.f1).fold(0.0, f64::max);
    let f1_at_one = curve
        .iter()
        .find(|p| p.threshold == 1.0)
        .map(|p| p.f1)
        .unwrap_or_else(|| curve.last().unwrap().f1);
    Ok(SummaryMetrics { auprc, rec80, f1_mean, f1_star, f1_at_one })
}

/// Mann-Whitney rank statistic: the probability that a positive outranks a
/// negative, counting ties as half. Positives are the false-positive segments
/// scored by the meta classifier.
pub fn auroc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::validation("AUROC needs both classes to be non-empty"));
    }
    let mut all: Vec<(f64, bool)> = scores_pos
        .iter()
        .map(|&s| (s, true))
        .chain(scores_neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j).
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = scores_pos.len() as f64;
    let n_neg = scores_neg.len() as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Pixel-level confusion accumulator for mIoU. Counts exclude ignore pixels.
#[derive(Debug, Clone)]
pub struct ConfusionCounts {
    intersection: Vec<u64>,
    pred_count: Vec<u64>,
    gt_count: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: u16) -> Self {
        ConfusionCounts {
            intersection: vec![0; num_classes as usize],
            pred_count: vec![0; num_classes as usize],
            gt_count: vec![0; num_classes as usize],
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for i in 0..self.intersection.len() {
            self.intersection[i] += other.intersection[i];
            self.pred_count[i] += other.pred_count[i];
            self.gt_count[i] += other.gt_count[i];
        }
    }

    /// Pixel IoU of one class; `None` when the class occurs on neither side.
    pub fn class_iou(&self, class_id: u16) -> Option<f64> {
        let i = class_id as usize;
        let union = self.pred_count[i] + self.gt_count[i] - self.intersection[i];
        (union > 0).then(|| self.intersection[i] as f64 / union as f64)
    }
}

pub fn accumulate_confusion(
    pred: &LabelMap,
    gt: &LabelMap,
    schema: &ClassSchema,
    counts: &mut ConfusionCounts,
) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::validation(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if schema.is_ignore(g) {
            continue;
        }
        if g >= schema.num_classes {
            return Err(Error::validation(format!("ground-truth label {g} is not a class id")));
        }
        if p >= schema.num_classes {
            return Err(Error::validation(format!("predicted label {p} is not a class id")));
        }
        counts.gt_count[g as usize] += 1;
        counts.pred_count[p as usize] += 1;
        if p == g {
            counts.intersection[p as usize] += 1;
        }
    }
    Ok(())
}

/// Mean IoU over the classes present in the ground truth or the prediction.
pub fn miou_from_counts(counts: &ConfusionCounts) -> f64 {
    let mut total = 0.0;
    let mut classes = 0usize;
    for i in 0..counts.intersection.len() {
        let union = counts.pred_count[i] + counts.gt_count[i] - counts.intersection[i];
        if union > 0 {
            total += counts.intersection[i] as f64 / union as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        0.0
    } else {
        total / classes as f64
    }
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, schema: &ClassSchema) -> Result<f64> {
    let mut counts = ConfusionCounts::new(schema.num_classes);
    accumulate_confusion(pred, gt, schema, &mut counts)?;
    Ok(miou_from_counts(&counts))
}

/// Threshold-indexed counts plus all scalar summaries; per-class breakdowns
/// reuse the same structure keyed by class name, with `miou` holding that
/// single class's pixel IoU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds: Vec<f64>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub false_neg: Vec<u64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub auprc: f64,
    pub rec80: f64,
    pub f1_mean: f64,
    pub f1_star: f64,
    pub f1_at_one: f64,
    pub gt_segments: u64,
    pub predicted_segments: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class: BTreeMap<String, MetricsReport>,
}

/// Builds the threshold curve and summaries for a set of evaluated images.
/// The AUROC is filled when both classes occur; mIoU and per-class entries are
/// the caller's responsibility.
pub fn report_from_images(images: &[ImageEval], grid: &ThresholdGrid) -> Result<MetricsReport> {
    let curve = pr_curve(images, grid);
    let summary = summary_metrics(&curve)?;
    let pos: Vec<f64> = images.iter().flat_map(|i| i.fp_scores.iter().copied()).collect();
    let neg: Vec<f64> = images.iter().flat_map(|i| i.tp_scores.iter().copied()).collect();
    let meta_auroc = if pos.is_empty() || neg.is_empty() {
        None
    } else {
        Some(auroc(&pos, &neg)?)
    };
    Ok(MetricsReport {
        thresholds: curve.iter().map(|p| p.threshold).collect(),
        tp: curve.iter().map(|p| p.tp).collect(),
        fp: curve.iter().map(|p| p.fp).collect(),
        false_neg: curve.iter().map(|p| p.false_neg).collect(),
        precision: curve.iter().map(|p| p.precision).collect(),
        recall: curve.iter().map(|p| p.recall).collect(),
        f1: curve.iter().map(|p| p.f1).collect(),
        auprc: summary.auprc,
        rec80: summary.rec80,
        f1_mean: summary.f1_mean,
        f1_star: summary.f1_star,
        f1_at_one: summary.f1_at_one,
        gt_segments: images.iter().map(|i| i.num_gt() as u64).sum(),
        predicted_segments: images.iter().map(|i| i.num_predicted() as u64).sum(),
        meta_auroc,
        miou: None,
        per_class: BTreeMap::new(),
    })
}

impl MetricsReport {
    /// The per-threshold curve as CSV text.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,tp,fp,false_neg,precision,recall,f1\n");
        for i in 0..self.thresholds.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.thresholds[i],
                self.tp[i],
                self.fp[i],
                self.false_neg[i],
                self.precision[i],
                self.recall[i],
                self.f1[i]
            ));
        }
        out
    }
}
