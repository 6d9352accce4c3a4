//! Subcommand implementations. Every command is a pure function of its
//! inputs, configuration and seed: reruns write byte-identical artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde_json::json;

use segfuse_core::fusion;
use segfuse_core::meta::{self, FineTuneMode, GBModel, TrainConfig};
use segfuse_core::metrics::MetricsReport;
use segfuse_core::pipeline::{self, EvalOptions, PredictionMode};
use segfuse_core::synth;
use segfuse_core::tensor::{self, load_manifest, Dataset, Tensor};
use segfuse_core::{Error, Result};

use crate::config::{self, SynthConfig};

/// Like `println!` but tolerant of a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(manifest: &Path, schema_override: Option<&Path>) -> Result<Dataset> {
    let mut ds = load_manifest(manifest)?;
    if let Some(schema_path) = schema_override {
        let schema = config::load_schema(schema_path)?;
        if schema.num_classes != ds.schema().num_classes {
            return Err(Error::validation(format!(
                "schema override has {} classes, manifest tensors have {}",
                schema.num_classes,
                ds.schema().num_classes
            )));
        }
        ds.manifest.schema = schema;
    }
    Ok(ds)
}

fn mode_of(baseline: bool) -> PredictionMode {
    if baseline {
        PredictionMode::Baseline
    } else {
        PredictionMode::Fused
    }
}

pub fn cmd_synth(
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    scenes: Option<usize>,
) -> Result<()> {
    let mut config = match config_path {
        Some(path) => SynthConfig::load(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(scenes) = scenes {
        config.scenes = scenes;
    }
    ensure_out_dir(out)?;
    let manifest_path = synth::write_dataset(
        out,
        &config.schema,
        &config.scene,
        &config.corruption,
        config.scenes,
        config.seed,
    )?;
    config::echo_run_config(out, &json!({ "command": "synth", "config": config }))?;
    say!(
        "wrote {} scenes to {} (manifest {})",
        config.scenes,
        out.display(),
        manifest_path.display()
    );
    Ok(())
}

pub fn cmd_fuse(manifest: &Path, out: &Path, schema_override: Option<&Path>) -> Result<()> {
    let ds = load_dataset(manifest, schema_override)?;
    ensure_out_dir(out)?;
    let schema = ds.schema().clone();
    let mut index = Vec::new();
    for i in 0..ds.len() {
        let (probs, fg, _labels) = ds.load_image(i)?;
        let prediction = fusion::fuse_and_fill(&probs, &fg, &schema)?;
        let id = ds.image_id(i);
        let fused_name = format!("{id}_fused.sft");
        let filled_name = format!("{id}_filled.sft");
        tensor::save_tensor(&out.join(&fused_name), &Tensor::Labels(prediction.fused))?;
        tensor::save_tensor(&out.join(&filled_name), &Tensor::Labels(prediction.filled))?;
        index.push(json!({ "id": id, "fused": fused_name, "filled": filled_name }));
    }
    write_text(&out.join("fused_index.json"), &config::pretty_json(&index))?;
    config::echo_run_config(
        out,
        &json!({
            "command": "fuse",
            "manifest": manifest.to_string_lossy(),
            "schema": schema,
        }),
    )?;
    say!("fused {} images into {}", ds.len(), out.display());
    Ok(())
}

pub fn cmd_features(
    manifest: &Path,
    out: &Path,
    baseline: bool,
    schema_override: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(manifest, schema_override)?;
    ensure_out_dir(out)?;
    let records = pipeline::extract_records(&ds, mode_of(baseline))?;
    let csv_path = out.join("segments.csv");
    meta::write_records_csv(&csv_path, &records)?;
    config::echo_run_config(
        out,
        &json!({
            "command": "features",
            "manifest": manifest.to_string_lossy(),
            "baseline": baseline,
            "schema": ds.schema(),
        }),
    )?;
    say!(
        "extracted {} segment records from {} images into {}",
        records.len(),
        ds.len(),
        csv_path.display()
    );
    Ok(())
}

pub fn cmd_train_meta(
    csv: &Path,
    out: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let data = meta::read_records_csv(csv)?;
    let mut train_config = match config_path {
        Some(path) => config::load_train_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        train_config.rng_seed = seed;
    }
    ensure_out_dir(out)?;

    let positives = data.records.iter().filter(|r| r.target).count();
    let both_classes = positives > 0 && positives < data.len();
    let cv = if both_classes && data.len() >= 5 {
        Some(meta::cross_validate(&data, &train_config, 5)?)
    } else {
        None
    };
    let model = meta::train(&data, &train_config)?;
    model.save(&out.join("model.json"))?;

    let cv_report = match &cv {
        Some(cv) => json!({
            "n_records": data.len(),
            "n_folds": 5,
            "fold_aurocs": cv.fold_aurocs,
            "mean_test_auroc": cv.mean_auroc,
        }),
        None => json!({
            "n_records": data.len(),
            "n_folds": 5,
            "fold_aurocs": [],
            "mean_test_auroc": null,
            "note": "cross-validation skipped: single target class or too few records",
        }),
    };
    write_text(&out.join("cv_report.json"), &config::pretty_json(&cv_report))?;
    config::echo_run_config(
        out,
        &json!({
            "command": "train-meta",
            "csv": csv.to_string_lossy(),
            "train_config": train_config,
        }),
    )?;
    match &cv {
        Some(cv) => say!(
            "trained on {} records; mean test AUROC {:.4}; degenerate: {}",
            data.len(),
            cv.mean_auroc,
            model.degenerate
        ),
        None => say!(
            "trained on {} records; cross-validation skipped; degenerate: {}",
            data.len(),
            model.degenerate
        ),
    }
    Ok(())
}

fn write_report(out: &Path, name: &str, report: &MetricsReport) -> Result<()> {
    write_text(&out.join(format!("{name}.json")), &config::pretty_json(report))?;
    write_text(&out.join(format!("{name}_curve.csv")), &report.curve_csv())
}

pub fn cmd_eval(
    manifest: &Path,
    model_path: &Path,
    out: &Path,
    baseline: bool,
    schema_override: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(manifest, schema_override)?;
    let model = GBModel::load(model_path)?;
    ensure_out_dir(out)?;
    let options = EvalOptions {
        mode: mode_of(baseline),
        per_class: true,
        image_filter: None,
    };
    let report = pipeline::evaluate_dataset(&ds, Some(&model), &options)?;
    write_report(out, "metrics", &report)?;
    config::echo_run_config(
        out,
        &json!({
            "command": "eval",
            "manifest": manifest.to_string_lossy(),
            "model": model_path.to_string_lossy(),
            "baseline": baseline,
        }),
    )?;
    print_report(&report);
    Ok(())
}

pub fn cmd_finetune(
    source_csv: &Path,
    manifest: &Path,
    fraction: f64,
    out: &Path,
    config_path: Option<&Path>,
    seed: u64,
    target_only: bool,
) -> Result<()> {
    let source = meta::read_records_csv(source_csv)?;
    let ds = load_manifest(manifest)?;
    let target = pipeline::extract_records(&ds, PredictionMode::Fused)?;
    let train_config = match config_path {
        Some(path) => config::load_train_config(path)?,
        None => TrainConfig::default(),
    };
    let mode = if target_only { FineTuneMode::TargetOnly } else { FineTuneMode::Union };
    let result = meta::fine_tune(&source, &target, fraction, &train_config, seed, mode)?;
    ensure_out_dir(out)?;
    result.model.save(&out.join("model.json"))?;

    let filter: BTreeSet<String> = result.heldout_image_ids.iter().cloned().collect();
    let options = EvalOptions {
        mode: PredictionMode::Fused,
        per_class: false,
        image_filter: Some(filter),
    };
    let report = pipeline::evaluate_dataset(&ds, Some(&result.model), &options)?;
    write_report(out, "heldout_metrics", &report)?;
    write_text(
        &out.join("split.json"),
        &config::pretty_json(&json!({
            "fraction": fraction,
            "train_image_ids": result.train_image_ids,
            "heldout_image_ids": result.heldout_image_ids,
        })),
    )?;
    config::echo_run_config(
        out,
        &json!({
            "command": "finetune",
            "source_csv": source_csv.to_string_lossy(),
            "manifest": manifest.to_string_lossy(),
            "fraction": fraction,
            "seed": seed,
            "mode": if target_only { "target_only" } else { "union" },
            "train_config": train_config,
        }),
    )?;
    say!(
        "fine-tuned on {} target images; held-out AUPRC {:.4}",
        result.train_image_ids.len(),
        report.auprc
    );
    Ok(())
}

pub fn cmd_report(metrics_path: &Path, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(metrics_path).map_err(|e| Error::io(metrics_path, e))?;
    let report: MetricsReport = serde_json::from_str(&text)
        .map_err(|e| Error::format(metrics_path, format!("invalid metrics JSON: {e}")))?;
    print_report(&report);
    if let Some(out) = out {
        ensure_out_dir(out)?;
        write_text(&out.join("curve.csv"), &report.curve_csv())?;
    }
    Ok(())
}

fn print_report(report: &MetricsReport) {
    say!("segments: {} predicted, {} ground truth", report.predicted_segments, report.gt_segments);
    say!("AUPRC    {:.4}", report.auprc);
    say!("REC80    {:.4}", report.rec80);
    say!("F1 mean  {:.4}", report.f1_mean);
    say!("F1 best  {:.4}", report.f1_star);
    say!("F1 @ 1   {:.4}", report.f1_at_one);
    match report.meta_auroc {
        Some(auroc) => say!("AUROC    {:.4}", auroc),
        None => say!("AUROC    n/a (single class)"),
    }
    if let Some(miou) = report.miou {
        say!("mIoU     {:.4}", miou);
    }
    let last = report.thresholds.len() - 1;
    say!(
        "counts at h=1: TP {} FP {} FN {}",
        report.tp[last], report.fp[last], report.false_neg[last]
    );
    for (name, class_report) in &report.per_class {
        say!(
            "  {:<12} AUPRC {:.4}  F1* {:.4}  gt {}",
            name, class_report.auprc, class_report.f1_star, class_report.gt_segments
        );
    }
}
