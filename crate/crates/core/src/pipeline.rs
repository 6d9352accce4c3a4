//! Per-image assembly of the full post-processing chain: prediction,
//! segment extraction, feature computation, meta scoring and metric
//! aggregation over a dataset.
//!
//! Baseline mode replaces the foreground map with zeros and runs the exact
//! same code path, so the semantic-only evaluation differs from the fused one
//! only in its prediction source. Images are processed in parallel and folded
//! in manifest order, keeping every aggregate deterministic.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{self, FeatureVector};
use crate::fusion::{self, FusedPrediction};
use crate::meta::{GBModel, RecordSet, SegmentRecord};
use crate::metrics::{
    self, ConfusionCounts, ImageEval, MetricsReport, ScoredSegment, ThresholdGrid,
};
use crate::segmentation::{connected_components, Segment};
use crate::tensor::{ClassSchema, Dataset, ForegroundMap, LabelMap, ProbTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    /// Semantic prediction aggregated with the foreground map.
    Fused,
    /// Semantic prediction alone (foreground map treated as zero).
    Baseline,
}

/// One image after prediction and feature extraction. `features[i]` belongs
/// to `segments[i]`.
#[derive(Debug, Clone)]
pub struct ProcessedImage {
    pub image_id: String,
    pub prediction: FusedPrediction,
    pub segments: Vec<Segment>,
    pub features: Vec<FeatureVector>,
}

/// Predicts, extracts the foreground segments and computes their feature
/// vectors. Set `with_features` false to skip feature extraction when only
/// the segments are needed.
pub fn process_image(
    image_id: &str,
    probs: &ProbTensor,
    fg: &ForegroundMap,
    schema: &ClassSchema,
    mode: PredictionMode,
    with_features: bool,
) -> Result<ProcessedImage> {
    let zeros;
    let effective_fg = match mode {
        PredictionMode::Fused => fg,
        PredictionMode::Baseline => {
            zeros = ForegroundMap::zeros(fg.height(), fg.width());
            &zeros
        }
    };
    let prediction = fusion::fuse_and_fill(probs, effective_fg, schema)?;
    let segments = connected_components(&prediction.fused, &schema.foreground_ids);
    let features = if with_features {
        let maps = features::dispersion_maps(probs, effective_fg)?;
        segments
            .iter()
            .map(|seg| features::extract_features(seg, &maps, probs, schema))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ProcessedImage { image_id: image_id.to_string(), prediction, segments, features })
}

/// Ground-truth foreground segments of a label map.
pub fn gt_segments(labels: &LabelMap, schema: &ClassSchema) -> Vec<Segment> {
    connected_components(labels, &schema.foreground_ids)
}

/// Builds the structured segment dataset for a manifest: one record per
/// predicted segment with its features and adjusted IoU against the ground
/// truth.
pub fn extract_records(ds: &Dataset, mode: PredictionMode) -> Result<RecordSet> {
    let schema = ds.schema().clone();
    let per_image: Vec<Result<Vec<SegmentRecord>>> = (0..ds.len())
        .into_par_iter()
        .map(|index| {
            let (probs, fg, labels) = ds.load_image(index)?;
            let processed =
                process_image(ds.image_id(index), &probs, &fg, &schema, mode, true)?;
            let gt = gt_segments(&labels, &schema);
            processed
                .segments
                .iter()
                .zip(processed.features)
                .enumerate()
                .map(|(seg_idx, (segment, features))| {
                    let iou = metrics::adjusted_iou(segment, &gt)?;
                    SegmentRecord::new(
                        processed.image_id.clone(),
                        seg_idx as u32,
                        segment.class_id(),
                        iou,
                        features,
                    )
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    for image_records in per_image {
        records.extend(image_records?);
    }
    RecordSet::new(features::feature_names(&schema), records)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: PredictionMode,
    /// Attach one report per foreground class.
    pub per_class: bool,
    /// When set, only images with these ids are evaluated.
    pub image_filter: Option<BTreeSet<String>>,
}

impl EvalOptions {
    pub fn new(mode: PredictionMode) -> Self {
        EvalOptions { mode, per_class: false, image_filter: None }
    }
}

struct EvaluatedImage {
    all: ImageEval,
    per_class: Vec<ImageEval>,
    confusion: ConfusionCounts,
}

/// Evaluates a manifest end to end and assembles the full metrics report.
/// Without a model every segment scores 0 (nothing is ever pruned), which
/// yields the raw detection quality of the prediction.
pub fn evaluate_dataset(
    ds: &Dataset,
    model: Option<&GBModel>,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let schema = ds.schema().clone();
    if let Some(model) = model {
        let expected = features::feature_names(&schema);
        if !model.feature_names.is_empty() && model.feature_names != expected {
            return Err(Error::validation(
                "model feature columns do not match the dataset schema",
            ));
        }
    }
    let indices: Vec<usize> = (0..ds.len())
        .filter(|&i| match &options.image_filter {
            Some(filter) => filter.contains(ds.image_id(i)),
            None => true,
        })
        .collect();
    if indices.is_empty() {
        return Err(Error::validation("no images selected for evaluation"));
    }

    let evaluated: Vec<Result<EvaluatedImage>> = indices
        .par_iter()
        .map(|&index| {
            let (probs, fg, labels) = ds.load_image(index)?;
            let processed = process_image(
                ds.image_id(index),
                &probs,
                &fg,
                &schema,
                options.mode,
                model.is_some(),
            )?;
            let gt = gt_segments(&labels, &schema);
            let mut scored = Vec::with_capacity(processed.segments.len());
            for (seg_idx, segment) in processed.segments.iter().enumerate() {
                let meta_score = match model {
                    Some(m) => m.predict_proba(&processed.features[seg_idx])?,
                    None => 0.0,
                };
                let iou = metrics::adjusted_iou(segment, &gt)?;
                scored.push(ScoredSegment { segment: segment.clone(), adjusted_iou: iou, meta_score });
            }
            let all = ImageEval::build(&scored, &gt)?;
            let mut per_class = Vec::new();
            if options.per_class {
                for &class_id in &schema.foreground_ids {
                    let gt_class: Vec<Segment> =
                        gt.iter().filter(|s| s.class_id() == class_id).cloned().collect();
                    let mut scored_class = Vec::new();
                    for s in scored.iter().filter(|s| s.segment.class_id() == class_id) {
                        // Adjusted IoU against same-class ground truth only.
                        let iou = metrics::adjusted_iou(&s.segment, &gt_class)?;
                        scored_class.push(ScoredSegment {
                            segment: s.segment.clone(),
                            adjusted_iou: iou,
                            meta_score: s.meta_score,
                        });
                    }
                    per_class.push(ImageEval::build(&scored_class, &gt_class)?);
                }
            }
            let mut confusion = ConfusionCounts::new(schema.num_classes);
            metrics::accumulate_confusion(&processed.prediction.filled, &labels, &schema, &mut confusion)?;
            Ok(EvaluatedImage { all, per_class, confusion })
        })
        .collect();

    let mut all_images = Vec::with_capacity(evaluated.len());
    let mut class_images: Vec<Vec<ImageEval>> =
        vec![Vec::new(); if options.per_class { schema.num_foreground() } else { 0 }];
    let mut confusion = ConfusionCounts::new(schema.num_classes);
    for item in evaluated {
        let item = item?;
        all_images.push(item.all);
        for (bucket, eval) in class_images.iter_mut().zip(item.per_class) {
            bucket.push(eval);
        }
        confusion.merge(&item.confusion);
    }

    let grid = ThresholdGrid::standard();
    let mut report = metrics::report_from_images(&all_images, &grid)?;
    report.miou = Some(metrics::miou_from_counts(&confusion));
    if options.per_class {
        for (pos, &class_id) in schema.foreground_ids.iter().enumerate() {
            let mut class_report = metrics::report_from_images(&class_images[pos], &grid)?;
            class_report.miou = confusion.class_iou(class_id);
            report.per_class.insert(schema.class_name(class_id), class_report);
        }
    }
    Ok(report)
}

/// Scores a record set with a trained model, filling `meta_score`.
pub fn score_records(model: &GBModel, data: &mut RecordSet) -> Result<()> {
    for rec in &mut data.records {
        rec.meta_score = Some(model.predict_proba(&rec.features)?);
    }
    Ok(())
}
