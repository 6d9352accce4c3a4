//! End-to-end properties of the synthetic benchmark plus the boosted
//! classifier's derived behaviors.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use segfuse_core::features::FeatureVector;
use segfuse_core::meta::{self, FineTuneMode, RecordSet, SegmentRecord, TrainConfig};
use segfuse_core::metrics::{self, count_at_threshold, ImageEval, ScoredSegment};
use segfuse_core::pipeline::{self, EvalOptions, PredictionMode};
use segfuse_core::segmentation::connected_components;
use segfuse_core::synth::{self, CorruptionConfig, SceneConfig};
use segfuse_core::tensor::{load_manifest, ClassSchema, Dataset};
use segfuse_testkit as oracle;

fn schema6() -> ClassSchema {
    ClassSchema::new(6, vec![0, 1]).unwrap()
}

fn scene_config(seed: u64) -> SceneConfig {
    SceneConfig {
        height: 96,
        width: 96,
        min_blobs: 4,
        max_blobs: 7,
        min_extent: 6,
        max_extent: 16,
        rng_seed: seed,
        ..SceneConfig::default()
    }
}

fn make_dataset(dir: &TempDir, corruption: &CorruptionConfig, scenes: usize, seed: u64) -> Dataset {
    let schema = schema6();
    let path =
        synth::write_dataset(dir.path(), &schema, &scene_config(seed), corruption, scenes, seed)
            .unwrap();
    load_manifest(&path).unwrap()
}

#[test]
fn clean_pipeline_is_perfect() {
    // With every error rate at zero the fused prediction reproduces the
    // ground truth: AUPRC and mIoU must both be exactly one.
    let corruption = CorruptionConfig {
        semantic_miss_rate: 0.0,
        false_positive_rate: 0.0,
        boundary_jitter: 0,
        temperature: 0.5,
        fg_miss_rate: 0.0,
        fg_false_alarm_rate: 0.0,
        domain_shift: 1.0,
    };
    let dir = TempDir::new().unwrap();
    let ds = make_dataset(&dir, &corruption, 6, 41);
    let report =
        pipeline::evaluate_dataset(&ds, None, &EvalOptions::new(PredictionMode::Fused)).unwrap();
    assert_eq!(report.auprc, 1.0, "AUPRC {}", report.auprc);
    assert_eq!(report.miou, Some(1.0));
    assert_eq!(report.f1_star, 1.0);
}

/// Recall at h = 1 of the fused prediction can never fall below the
/// semantic-only prediction; fusion only adds foreground pixels.
#[test]
fn fusion_recall_dominates_baseline() {
    for seed in 0..10u64 {
        let corruption = CorruptionConfig {
            semantic_miss_rate: [0.1, 0.4, 0.8][(seed % 3) as usize],
            fg_miss_rate: [0.0, 0.3][(seed % 2) as usize],
            fg_false_alarm_rate: 0.3,
            ..CorruptionConfig::default()
        };
        let dir = TempDir::new().unwrap();
        let ds = make_dataset(&dir, &corruption, 4, 500 + seed);
        let fused =
            pipeline::evaluate_dataset(&ds, None, &EvalOptions::new(PredictionMode::Fused))
                .unwrap();
        let baseline =
            pipeline::evaluate_dataset(&ds, None, &EvalOptions::new(PredictionMode::Baseline))
                .unwrap();
        let rec_at_one = |r: &segfuse_core::metrics::MetricsReport| *r.recall.last().unwrap();
        assert!(
            rec_at_one(&fused) >= rec_at_one(&baseline),
            "seed {seed}: fused {} < baseline {}",
            rec_at_one(&fused),
            rec_at_one(&baseline)
        );
    }
}

/// Fused recall approaches 1 - p_sem * p_fg because the branch misses are
/// independent draws.
#[test]
fn fused_recall_matches_independence_product() {
    let corruption = CorruptionConfig {
        semantic_miss_rate: 0.5,
        false_positive_rate: 0.0,
        boundary_jitter: 0,
        temperature: 1.0,
        fg_miss_rate: 0.3,
        fg_false_alarm_rate: 0.0,
        domain_shift: 1.0,
    };
    let dir = TempDir::new().unwrap();
    let ds = make_dataset(&dir, &corruption, 40, 99);
    let report =
        pipeline::evaluate_dataset(&ds, None, &EvalOptions::new(PredictionMode::Fused)).unwrap();
    let recall = *report.recall.last().unwrap();
    let total = report.gt_segments as f64;
    let expected = 1.0 - 0.5 * 0.3;
    // Three-sigma binomial band around the independence product.
    let sigma = (expected * (1.0 - expected) / total).sqrt();
    assert!(
        (recall - expected).abs() <= 3.0 * sigma + 1e-9,
        "recall {recall}, expected {expected} +- {}",
        3.0 * sigma
    );
}

/// Per-blob miss indicators of the two branches are uncorrelated.
#[test]
fn branch_misses_are_independent() {
    let schema = schema6();
    let corruption = CorruptionConfig {
        semantic_miss_rate: 0.5,
        false_positive_rate: 0.0,
        boundary_jitter: 0,
        temperature: 1.0,
        fg_miss_rate: 0.5,
        fg_false_alarm_rate: 0.0,
        domain_shift: 1.0,
    };
    let mut sem_miss = Vec::new();
    let mut fg_miss = Vec::new();
    for seed in 0..200u64 {
        let config = SceneConfig { rng_seed: seed, ..scene_config(seed) };
        let gt = synth::generate_scene(&config, &schema).unwrap();
        let probs = synth::corrupt_semantic(&gt, &corruption, &schema, seed).unwrap();
        let fg = synth::corrupt_foreground(&gt, &corruption, &schema, seed).unwrap();
        let pred = segfuse_core::fusion::argmax_prediction(&probs);
        for blob in connected_components(&gt, &schema.foreground_ids) {
            let sem_found = blob
                .pixels()
                .iter()
                .any(|&(r, c)| schema.is_foreground(pred.get(r, c)));
            let fg_found = blob.pixels().iter().any(|&(r, c)| fg.value(r, c) > 0.5);
            sem_miss.push(if sem_found { 0.0 } else { 1.0 });
            fg_miss.push(if fg_found { 0.0 } else { 1.0 });
        }
    }
    assert!(sem_miss.len() > 500, "need a decent sample, got {}", sem_miss.len());
    let corr = oracle::correlation(&sem_miss, &fg_miss);
    assert!(corr.abs() <= 0.15, "branch miss correlation {corr}");
}

/// The analytic boosting residual equals the negative derivative of the
/// logistic loss, checked by central finite differences.
#[test]
fn residual_matches_finite_difference_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let score: f64 = rng.gen_range(-6.0..6.0);
        let target = if rng.gen::<bool>() { 1.0 } else { 0.0 };
        let residual = target - 1.0 / (1.0 + (-score).exp());
        let fd = oracle::logistic_loss_fd(score, target, 1e-5);
        assert!(
            (residual + fd).abs() < 1e-6,
            "residual {residual} vs -fd {}",
            -fd
        );
    }
}

fn padded_record(image: &str, seg: u32, iou: f64, payload: &[f64]) -> SegmentRecord {
    let mut values = vec![0.0; 28];
    values[..payload.len()].copy_from_slice(payload);
    SegmentRecord::new(image, seg, 0, iou, FeatureVector::from_values(values).unwrap()).unwrap()
}

/// The first tree's root split on linearly separable one-feature data must
/// match the exhaustive-enumeration oracle and sit between the classes.
#[test]
fn first_split_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut records = Vec::new();
    let mut xs = Vec::new();
    for i in 0..60u32 {
        let is_fp = i % 2 == 0;
        let x = if is_fp { rng.gen_range(2.0..3.0) } else { rng.gen_range(0.0..1.0) };
        xs.push(x);
        records.push(padded_record("img", i, if is_fp { 0.0 } else { 0.5 }, &[x]));
    }
    let names: Vec<String> = (0..28).map(|i| format!("f{i}")).collect();
    let data = RecordSet::new(names, records).unwrap();
    let config = TrainConfig { num_trees: 1, max_depth: 1, min_samples_leaf: 1, ..TrainConfig::default() };
    let model = meta::train(&data, &config).unwrap();

    // Independent oracle: residuals after the prior are target - mean(target).
    let p_bar = 0.5;
    let residuals: Vec<f64> =
        data.records.iter().map(|r| if r.target { 1.0 - p_bar } else { -p_bar }).collect();
    let mut columns = vec![Vec::new(); 28];
    for rec in &data.records {
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(rec.features.get(j));
        }
    }
    let (_, feature, threshold) = oracle::best_split_brute(&columns, &residuals, 1).unwrap();
    match &model.trees[0] {
        meta::TreeNode::Split { feature: f, threshold: t, .. } => {
            assert_eq!(*f, feature);
            assert_eq!(*t, threshold);
            let lo = xs.iter().copied().filter(|&x| x < 2.0).fold(f64::MIN, f64::max);
            let hi = xs.iter().copied().filter(|&x| x >= 2.0).fold(f64::MAX, f64::min);
            assert!(lo <= *t && *t < hi, "threshold {t} not between classes [{lo}, {hi})");
        }
        meta::TreeNode::Leaf { .. } => panic!("expected a split at the root"),
    }
}

/// Random labels carry no signal: out-of-fold AUROC stays near chance.
#[test]
fn random_labels_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut records = Vec::new();
    for i in 0..500u32 {
        let payload: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let is_fp = rng.gen::<bool>();
        records.push(padded_record(
            &format!("img{i}"),
            i,
            if is_fp { 0.0 } else { 0.5 },
            &payload,
        ));
    }
    let names: Vec<String> = (0..28).map(|i| format!("f{i}")).collect();
    let data = RecordSet::new(names, records).unwrap();
    let cv = meta::cross_validate(&data, &TrainConfig::default(), 5).unwrap();
    assert!(
        (0.40..=0.60).contains(&cv.mean_auroc),
        "random-label AUROC {}",
        cv.mean_auroc
    );
}

fn heldout_auprc(ds: &Dataset, result: &meta::FineTuneResult) -> f64 {
    let filter: BTreeSet<String> = result.heldout_image_ids.iter().cloned().collect();
    let options = EvalOptions {
        mode: PredictionMode::Fused,
        per_class: false,
        image_filter: Some(filter),
    };
    pipeline::evaluate_dataset(ds, Some(&result.model), &options).unwrap().auprc
}

/// On the shifted benchmark, more target data never hurts much: the held-out
/// AUPRC at fraction 0.8 is at least the value at 0.2 minus two points.
/// With no shift at all, fine-tuning is a no-op up to noise.
#[test]
fn fine_tuning_trends() {
    let source_corruption = CorruptionConfig::default();
    let target_corruption = CorruptionConfig { domain_shift: 2.0, ..CorruptionConfig::default() };

    let source_dir = TempDir::new().unwrap();
    let target_dir = TempDir::new().unwrap();
    let source_ds = make_dataset(&source_dir, &source_corruption, 60, 1001);
    let target_ds = make_dataset(&target_dir, &target_corruption, 50, 2002);
    let source_records = pipeline::extract_records(&source_ds, PredictionMode::Fused).unwrap();
    let target_records = pipeline::extract_records(&target_ds, PredictionMode::Fused).unwrap();

    let config = TrainConfig::default();
    let low = meta::fine_tune(&source_records, &target_records, 0.2, &config, 7, FineTuneMode::Union)
        .unwrap();
    let high = meta::fine_tune(&source_records, &target_records, 0.8, &config, 7, FineTuneMode::Union)
        .unwrap();
    let auprc_low = heldout_auprc(&target_ds, &low);
    let auprc_high = heldout_auprc(&target_ds, &high);
    assert!(
        auprc_high >= auprc_low - 0.02,
        "held-out AUPRC dropped: 0.2 -> {auprc_low}, 0.8 -> {auprc_high}"
    );

    // No shift: source-only and fine-tuned models agree on held-out AUROC.
    let twin_dir = TempDir::new().unwrap();
    let twin_ds = make_dataset(&twin_dir, &source_corruption, 50, 3003);
    let twin_records = pipeline::extract_records(&twin_ds, PredictionMode::Fused).unwrap();
    let tuned = meta::fine_tune(&source_records, &twin_records, 0.2, &config, 9, FineTuneMode::Union)
        .unwrap();
    let source_model = meta::train(&source_records, &config).unwrap();
    let auroc_of = |model: &meta::GBModel| {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for rec in &tuned.heldout_records {
            let p = model.predict_proba(&rec.features).unwrap();
            if rec.target {
                pos.push(p);
            } else {
                neg.push(p);
            }
        }
        metrics::auroc(&pos, &neg).unwrap()
    };
    let a = auroc_of(&tuned.model);
    let b = auroc_of(&source_model);
    assert!(
        (a - b).abs() < 0.03,
        "no-shift fine-tuning moved AUROC from {b} to {a}"
    );
}

/// Sanity check that the constant-score evaluation plumbing matches a direct
/// oracle count on one scene.
#[test]
fn evaluation_matches_direct_counting() {
    let corruption = CorruptionConfig::default();
    let dir = TempDir::new().unwrap();
    let ds = make_dataset(&dir, &corruption, 1, 7);
    let schema = ds.schema().clone();
    let (probs, fg, labels) = ds.load_image(0).unwrap();
    let processed =
        pipeline::process_image("scene_00000", &probs, &fg, &schema, PredictionMode::Fused, false)
            .unwrap();
    let gt = pipeline::gt_segments(&labels, &schema);
    let scored: Vec<ScoredSegment> = processed
        .segments
        .iter()
        .map(|segment| ScoredSegment {
            segment: segment.clone(),
            adjusted_iou: metrics::adjusted_iou(segment, &gt).unwrap(),
            meta_score: 0.0,
        })
        .collect();
    let eval = ImageEval::build(&scored, &gt).unwrap();
    let counts = count_at_threshold(&[eval], 1.0);

    let preds: Vec<(oracle::PixelSet, f64)> = processed
        .segments
        .iter()
        .map(|s| (oracle::pixel_set(s.pixels()), 0.0))
        .collect();
    let gts: Vec<oracle::PixelSet> = gt.iter().map(|s| oracle::pixel_set(s.pixels())).collect();
    let brute = oracle::counts_brute(&preds, &gts, 1.0);
    assert_eq!((counts.tp, counts.fp, counts.false_neg), brute);
}
