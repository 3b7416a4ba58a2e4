//! `train`: trains one classifier and writes the checkpoint.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use rfeat::attacks::{robust_accuracy, AttackMode};
use rfeat::metrics::{eval_accuracy, LabelMap};
use rfeat::models::{train, TrainConfig};

use crate::configs::{derive_seed, TrainCmdConfig};
use crate::manifest::write_manifest;
use crate::report::{cell, csv_writer, write_json, Check, Checks};

const SLOT_DATA: u64 = 0;
const SLOT_TRAIN: u64 = 1;
const SLOT_EVAL_DATA: u64 = 2;

#[derive(Serialize)]
struct TrainReport {
    version: String,
    data: String,
    arch: String,
    train_n: usize,
    dim: usize,
    classes: u32,
    adversarial: bool,
    model_file: String,
    model_hash: String,
    first_epoch_loss: f64,
    final_epoch_loss: f64,
    train_accuracy: f64,
    eval_accuracy: Option<f64>,
    eval_robust_accuracy: Option<f64>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

pub fn run(config: &TrainCmdConfig, out_dir: &Path) -> Result<bool> {
    let mut seeds: BTreeMap<String, u64> = [
        ("global".to_string(), config.seed),
        ("data".to_string(), derive_seed(config.seed, SLOT_DATA)),
        ("train".to_string(), derive_seed(config.seed, SLOT_TRAIN)),
    ]
    .into();

    let ds = config.data.load(seeds["data"]).context("loading training data")?;
    let train_cfg = TrainConfig { seed: seeds["train"], ..config.train.clone() };
    let outcome = train(&ds, config.arch, &train_cfg).context("training")?;
    outcome.model.save(&out_dir.join("model.rfm1")).context("saving model.rfm1")?;

    let mut curve = csv_writer(&out_dir.join("loss_curve.csv"))?;
    curve.write_record(["epoch", "loss"])?;
    for (epoch, loss) in outcome.loss_curve.iter().enumerate() {
        curve.write_record([epoch.to_string(), cell(*loss)])?;
    }
    curve.flush()?;

    let mut checks = Checks::new();
    let finite = outcome.loss_curve.iter().all(|l| l.is_finite());
    checks.add("loss-curve-finite", finite, format!("{} epochs", outcome.loss_curve.len()));
    let first = *outcome.loss_curve.first().expect("nonempty curve");
    let last = *outcome.loss_curve.last().expect("nonempty curve");
    checks.add(
        "loss-improved",
        last <= first,
        format!("first epoch {first:.6}, final epoch {last:.6}"),
    );

    let train_acc = eval_accuracy(&outcome.model, &ds, LabelMap::Identity)?;
    let (mut eval_acc, mut eval_robust) = (None, None);
    if let Some(source) = &config.eval_data {
        let eval_seed = derive_seed(config.seed, SLOT_EVAL_DATA);
        seeds.insert("eval_data".to_string(), eval_seed);
        let eval_ds = source.load(eval_seed).context("loading eval data")?;
        let acc = eval_accuracy(&outcome.model, &eval_ds, LabelMap::Identity)?;
        eval_acc = Some(acc);
        if let Some(attack) = &config.eval_attack {
            let attack = rfeat::attacks::AttackConfig {
                mode: AttackMode::Untargeted,
                ..attack.clone()
            };
            eval_robust = Some(robust_accuracy(&outcome.model, &eval_ds, &attack)?);
        }
        if let Some(min) = config.min_eval_accuracy {
            checks.add(
                "eval-accuracy-reached",
                acc >= min,
                format!("eval accuracy {acc:.4} >= {min:.4}"),
            );
        }
    }

    let all_passed = checks.all_passed();
    let report = TrainReport {
        version: rfeat::VERSION.to_string(),
        data: config.data.describe(),
        arch: config.arch.name().to_string(),
        train_n: ds.n(),
        dim: ds.dim(),
        classes: ds.class_count(),
        adversarial: train_cfg.attack.is_some(),
        model_file: "model.rfm1".to_string(),
        model_hash: outcome.model.content_hash(),
        first_epoch_loss: first,
        final_epoch_loss: last,
        train_accuracy: train_acc,
        eval_accuracy: eval_acc,
        eval_robust_accuracy: eval_robust,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("train_report.json"), &report)?;
    write_manifest(out_dir, "train", config, &seeds)?;
    Ok(all_passed)
}
