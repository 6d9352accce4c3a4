//! Gradient-boosted meta classification of predicted segments.
//!
//! The classifier separates false-positive segments (adjusted IoU = 0) from
//! true positives (IoU > 0). Boosting minimizes logistic loss in function
//! space: the prior is the clipped log-odds of the false-positive rate, each
//! round fits a least-squares regression tree to the residual
//! `target - sigmoid(score)`, and leaf values take the clipped Newton step.

mod tree;

pub use tree::{TreeNode, LEAF_VALUE_CLIP};

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::metrics;

const PRIOR_CLIP: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable logistic loss of one sample.
fn logistic_loss(score: f64, target: f64) -> f64 {
    // softplus(-z) with z = score for target 1 and z = -score for target 0.
    let z = if target > 0.5 { score } else { -score };
    (-z).max(0.0) + (-(-z).abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_num_trees")]
    pub num_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_subsample")]
    pub subsample: f64,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_num_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    3
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_subsample() -> f64 {
    1.0
}
fn default_min_samples_leaf() -> usize {
    5
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_trees: default_num_trees(),
            max_depth: default_max_depth(),
            learning_rate: default_learning_rate(),
            subsample: default_subsample(),
            min_samples_leaf: default_min_samples_leaf(),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::validation("num_trees must be positive"));
        }
        if self.max_depth == 0 {
            return Err(Error::validation("max_depth must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::validation("subsample must be in (0, 1]"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::validation("min_samples_leaf must be positive"));
        }
        Ok(())
    }
}

/// A trained boosted model. Trees are applied in order; the decision score is
/// `base_score + learning_rate * sum(leaf values)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBModel {
    pub feature_count: usize,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    /// True when training saw a single target class and fitted no trees.
    pub degenerate: bool,
    pub trees: Vec<TreeNode>,
}

impl GBModel {
    pub fn decision_score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_count {
            return Err(Error::validation(format!(
                "feature vector has {} entries, model expects {}",
                features.len(),
                self.feature_count
            )));
        }
        let mut score = self.base_score;
        for tree in &self.trees {
            score += self.learning_rate * tree.predict(features);
        }
        Ok(score)
    }

    /// False-positive probability of one segment.
    pub fn predict_proba(&self, features: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.decision_score(features.values())?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_count == 0 {
            return Err(Error::validation("model has zero features"));
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.feature_count {
            return Err(Error::validation("feature_names length does not match feature_count"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !self.base_score.is_finite() {
            return Err(Error::validation("base_score must be finite"));
        }
        for (i, tree) in self.trees.iter().enumerate() {
            if let Some(max) = tree.max_feature_index() {
                if max >= self.feature_count {
                    return Err(Error::validation(format!(
                        "tree {i} splits on feature {max}, model has {}",
                        self.feature_count
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("model serialization");
        text.push('\n');
        text
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: GBModel = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("invalid model JSON: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// One row of the structured segment dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub image_id: String,
    pub segment_id: u32,
    pub class_id: u16,
    pub adjusted_iou: f64,
    /// True for a false-positive segment; always `adjusted_iou == 0`.
    pub target: bool,
    pub features: FeatureVector,
    /// Meta score, filled after scoring.
    pub meta_score: Option<f64>,
}

impl SegmentRecord {
    pub fn new(
        image_id: impl Into<String>,
        segment_id: u32,
        class_id: u16,
        adjusted_iou: f64,
        features: FeatureVector,
    ) -> Result<Self> {
        if !adjusted_iou.is_finite() || !(0.0..=1.0).contains(&adjusted_iou) {
            return Err(Error::validation(format!("adjusted IoU {adjusted_iou} outside [0, 1]")));
        }
        Ok(SegmentRecord {
            image_id: image_id.into(),
            segment_id,
            class_id,
            adjusted_iou,
            target: adjusted_iou == 0.0,
            features,
            meta_score: None,
        })
    }
}

/// The structured dataset: named feature columns plus one record per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub feature_names: Vec<String>,
    pub records: Vec<SegmentRecord>,
}

impl RecordSet {
    pub fn new(feature_names: Vec<String>, records: Vec<SegmentRecord>) -> Result<Self> {
        for rec in &records {
            if rec.features.len() != feature_names.len() {
                return Err(Error::validation(format!(
                    "record '{}'/{} has {} features, header names {}",
                    rec.image_id,
                    rec.segment_id,
                    rec.features.len(),
                    feature_names.len()
                )));
            }
        }
        Ok(RecordSet { feature_names, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn columns(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        let d = self.feature_names.len();
        let mut columns = vec![Vec::with_capacity(indices.len()); d];
        for &i in indices {
            for (j, col) in columns.iter_mut().enumerate() {
                col.push(self.records[i].features.get(j));
            }
        }
        columns
    }
}

/// Trains the boosted classifier; see [`train_with_loss_curve`] for the loss
/// trajectory.
pub fn train(data: &RecordSet, config: &TrainConfig) -> Result<GBModel> {
    train_with_loss_curve(data, config).map(|(model, _)| model)
}

/// Trains and also returns the mean training logistic loss after the prior
/// and after every boosting round.
pub fn train_with_loss_curve(data: &RecordSet, config: &TrainConfig) -> Result<(GBModel, Vec<f64>)> {
    config.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::validation("cannot train on an empty record set"));
    }
    let targets: Vec<f64> = data.records.iter().map(|r| if r.target { 1.0 } else { 0.0 }).collect();
    let positives = targets.iter().filter(|&&t| t > 0.5).count();
    let prior = (positives as f64 / n as f64).clamp(PRIOR_CLIP, 1.0 - PRIOR_CLIP);
    let base_score = (prior / (1.0 - prior)).ln();

    let mut model = GBModel {
        feature_count: data.feature_names.len(),
        feature_names: data.feature_names.clone(),
        base_score,
        learning_rate: config.learning_rate,
        degenerate: positives == 0 || positives == n,
        trees: Vec::new(),
    };

    let mut scores = vec![base_score; n];
    let mean_loss = |scores: &[f64]| -> f64 {
        scores.iter().zip(&targets).map(|(&s, &t)| logistic_loss(s, t)).sum::<f64>() / n as f64
    };
    let mut loss_curve = vec![mean_loss(&scores)];

    if model.degenerate {
        return Ok((model, loss_curve));
    }

    let all_indices: Vec<usize> = (0..n).collect();
    let columns = data.columns(&all_indices);
    for column in &columns {
        if let Some(bad) = column.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite feature value {bad}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let subsample_count = ((config.subsample * n as f64).floor() as usize).clamp(1, n);

    for _round in 0..config.num_trees {
        let mut residuals = vec![0.0f64; n];
        let mut hessians = vec![0.0f64; n];
        for i in 0..n {
            let p = sigmoid(scores[i]);
            residuals[i] = targets[i] - p;
            hessians[i] = p * (1.0 - p);
        }
        let indices: Vec<usize> = if subsample_count == n {
            all_indices.clone()
        } else {
            let mut shuffled = all_indices.clone();
            shuffled.shuffle(&mut rng);
            let mut chosen: Vec<usize> = shuffled[..subsample_count].to_vec();
            chosen.sort_unstable();
            chosen
        };
        let tree = tree::fit_regression_tree(
            &columns,
            &residuals,
            &hessians,
            &indices,
            config.max_depth,
            config.min_samples_leaf,
        );
        for (i, score) in scores.iter_mut().enumerate() {
            *score += config.learning_rate * tree.predict_from_columns(&columns, i);
        }
        model.trees.push(tree);
        loss_curve.push(mean_loss(&scores));
    }
    Ok((model, loss_curve))
}

/// Out-of-fold scores and per-fold test AUROC from seeded disjoint folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    /// One out-of-fold score per input record, in input order.
    pub oof_scores: Vec<f64>,
    /// Which fold held out each record, in input order.
    pub fold_assignments: Vec<usize>,
    /// AUROC of each fold's held-out records; folds with a single target
    /// class are skipped.
    pub fold_aurocs: Vec<f64>,
    pub mean_auroc: f64,
}

/// Splits the records into `n_folds` disjoint seeded folds, scores every
/// record with the model trained on the other folds, and averages the fold
/// test AUROCs.
pub fn cross_validate(data: &RecordSet, config: &TrainConfig, n_folds: usize) -> Result<CvResult> {
    let n = data.len();
    if n_folds < 2 {
        return Err(Error::validation("cross-validation needs at least 2 folds"));
    }
    if n < n_folds {
        return Err(Error::validation(format!(
            "cannot split {n} records into {n_folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    order.shuffle(&mut rng);

    let base = n / n_folds;
    let remainder = n % n_folds;
    let mut folds: Vec<Vec<usize>> = Vec::with_capacity(n_folds);
    let mut cursor = 0;
    for fold in 0..n_folds {
        let size = base + usize::from(fold < remainder);
        folds.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut oof_scores = vec![f64::NAN; n];
    let mut fold_assignments = vec![0usize; n];
    let mut fold_aurocs = Vec::new();
    for (fold_index, fold) in folds.iter().enumerate() {
        let test: BTreeSet<usize> = fold.iter().copied().collect();
        let train_records: Vec<SegmentRecord> = (0..n)
            .filter(|i| !test.contains(i))
            .map(|i| data.records[i].clone())
            .collect();
        let train_set = RecordSet::new(data.feature_names.clone(), train_records)?;
        let model = train(&train_set, config)?;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for &i in fold {
            let score = model.predict_proba(&data.records[i].features)?;
            oof_scores[i] = score;
            fold_assignments[i] = fold_index;
            if data.records[i].target {
                pos.push(score);
            } else {
                neg.push(score);
            }
        }
        if !pos.is_empty() && !neg.is_empty() {
            fold_aurocs.push(metrics::auroc(&pos, &neg)?);
        }
    }
    if fold_aurocs.is_empty() {
        return Err(Error::validation(
            "no fold contained both target classes; AUROC undefined",
        ));
    }
    let mean_auroc = fold_aurocs.iter().sum::<f64>() / fold_aurocs.len() as f64;
    Ok(CvResult { oof_scores, fold_assignments, fold_aurocs, mean_auroc })
}

/// Whether fine-tuning trains on source plus the target fraction (the
/// default) or on the target fraction alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    #[default]
    Union,
    TargetOnly,
}

#[derive(Debug, Clone)]
pub struct FineTuneResult {
    pub model: GBModel,
    /// Target image ids whose records joined the training set.
    pub train_image_ids: Vec<String>,
    /// Target image ids held out for evaluation.
    pub heldout_image_ids: Vec<String>,
    /// Records of the held-out target images, in input order.
    pub heldout_records: Vec<SegmentRecord>,
}

/// Retrains the classifier with a seeded image-level fraction of the target
/// records. The split is by image so no image contributes to both sides.
pub fn fine_tune(
    source: &RecordSet,
    target: &RecordSet,
    fraction: f64,
    config: &TrainConfig,
    seed: u64,
    mode: FineTuneMode,
) -> Result<FineTuneResult> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation(format!(
            "fine-tune fraction {fraction} outside (0, 1)"
        )));
    }
    if source.feature_names != target.feature_names {
        return Err(Error::validation(
            "source and target datasets have different feature columns",
        ));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::validation("fine-tuning needs non-empty source and target sets"));
    }
    let mut image_ids: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in &target.records {
        if seen.insert(rec.image_id.clone()) {
            image_ids.push(rec.image_id.clone());
        }
    }
    image_ids.sort();
    if image_ids.len() < 2 {
        return Err(Error::validation("fine-tuning needs at least 2 target images"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    image_ids.shuffle(&mut rng);
    let take = ((fraction * image_ids.len() as f64).round() as usize).clamp(1, image_ids.len() - 1);
    let mut train_image_ids: Vec<String> = image_ids[..take].to_vec();
    let mut heldout_image_ids: Vec<String> = image_ids[take..].to_vec();
    train_image_ids.sort();
    heldout_image_ids.sort();
    let train_set: BTreeSet<&String> = train_image_ids.iter().collect();

    let mut train_records: Vec<SegmentRecord> = match mode {
        FineTuneMode::Union => source.records.clone(),
        FineTuneMode::TargetOnly => Vec::new(),
    };
    train_records.extend(
        target
            .records
            .iter()
            .filter(|r| train_set.contains(&r.image_id))
            .cloned(),
    );
    let heldout_records: Vec<SegmentRecord> = target
        .records
        .iter()
        .filter(|r| !train_set.contains(&r.image_id))
        .cloned()
        .collect();

    let train_data = RecordSet::new(source.feature_names.clone(), train_records)?;
    let model = train(&train_data, config)?;
    Ok(FineTuneResult { model, train_image_ids, heldout_image_ids, heldout_records })
}

const META_COLUMNS: [&str; 5] = ["image_id", "segment_id", "class_id", "iou", "target"];

/// Writes the structured dataset: metadata columns then one column per
/// feature.
pub fn write_records_csv(path: &Path, data: &RecordSet) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(data.feature_names.iter().cloned());
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for rec in &data.records {
        let mut row: Vec<String> = vec![
            rec.image_id.clone(),
            rec.segment_id.to_string(),
            rec.class_id.to_string(),
            format!("{}", rec.adjusted_iou),
            if rec.target { "1".to_string() } else { "0".to_string() },
        ];
        row.extend(rec.features.values().iter().map(|v| format!("{v}")));
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<RecordSet> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < META_COLUMNS.len() + 1 {
        return Err(Error::format(path, "dataset CSV needs metadata columns plus features"));
    }
    for (i, expected) in META_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(*expected) {
            return Err(Error::format(
                path,
                format!(
                    "missing column '{expected}' at position {i} (found '{}')",
                    header.get(i).unwrap_or("")
                ),
            ));
        }
    }
    let feature_names: Vec<String> =
        header.iter().skip(META_COLUMNS.len()).map(|s| s.to_string()).collect();
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let parse_f64 = |field: &str, what: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| {
                Error::format(path, format!("row {}: invalid {what} '{field}'", line + 2))
            })
        };
        let image_id = row.get(0).unwrap_or("").to_string();
        let segment_id: u32 = row
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::format(path, format!("row {}: invalid segment_id", line + 2)))?;
        let class_id: u16 = row
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::format(path, format!("row {}: invalid class_id", line + 2)))?;
        let iou = parse_f64(row.get(3).unwrap_or(""), "iou")?;
        let target = match row.get(4) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(Error::format(
                    path,
                    format!("row {}: invalid target '{}'", line + 2, other.unwrap_or("")),
                ))
            }
        };
        if row.len() != META_COLUMNS.len() + feature_names.len() {
            return Err(Error::format(
                path,
                format!("row {}: expected {} fields, found {}", line + 2, header.len(), row.len()),
            ));
        }
        let mut values = Vec::with_capacity(feature_names.len());
        for field in row.iter().skip(META_COLUMNS.len()) {
            values.push(parse_f64(field, "feature value")?);
        }
        let features = FeatureVector::from_values(values)
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
        let rec = SegmentRecord::new(image_id, segment_id, class_id, iou, features)
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
        if rec.target != target {
            return Err(Error::format(
                path,
                format!("row {}: target {} inconsistent with iou {}", line + 2, target as u8, iou),
            ));
        }
        records.push(rec);
    }
    RecordSet::new(feature_names, records)
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => Error::format(path, "csv i/o error"),
        }
    } else {
        Error::format(path, err.to_string())
    }
}
