//! `transfer`: trains several architectures on one dataset and measures how
//! adversarial examples generated on a source architecture transfer to the
//! rest.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use rfeat::metrics::{eval_accuracy, spearman, transfer_rate, LabelMap};
use rfeat::models::{train, Model, TrainConfig};

use crate::configs::{derive_seed, TransferCmdConfig};
use crate::manifest::write_manifest;
use crate::report::{cell, csv_writer, write_json, Check, Checks};

const SLOT_TRAIN_DATA: u64 = 0;
const SLOT_EVAL_DATA: u64 = 1;
const SLOT_TRAIN_BASE: u64 = 2;

#[derive(Serialize)]
struct TransferRow {
    arch: String,
    is_source: bool,
    eval_accuracy: f64,
    transfer_rate: f64,
    transfer_count: usize,
}

#[derive(Serialize)]
struct TransferCmdReport {
    version: String,
    train_data: String,
    eval_data: String,
    targeted: bool,
    source_arch: String,
    source_success_fraction: f64,
    rows: Vec<TransferRow>,
    /// Rank correlation between eval accuracy and transfer rate over the
    /// non-source targets (`null` with fewer than two of them or when
    /// either sequence is constant).
    spearman_accuracy_vs_transfer: Option<f64>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

pub fn run(config: &TransferCmdConfig, out_dir: &Path) -> Result<bool> {
    config.validate()?;
    let mut seeds: BTreeMap<String, u64> = [
        ("global".to_string(), config.seed),
        ("train_data".to_string(), derive_seed(config.seed, SLOT_TRAIN_DATA)),
        ("eval_data".to_string(), derive_seed(config.seed, SLOT_EVAL_DATA)),
    ]
    .into();
    let train_ds = config.train_data.load(seeds["train_data"]).context("loading train data")?;
    let eval_ds = config.eval_data.load(seeds["eval_data"]).context("loading eval data")?;

    let mut models: Vec<Model> = Vec::with_capacity(config.archs.len());
    for (k, &arch) in config.archs.iter().enumerate() {
        let seed = derive_seed(config.seed, SLOT_TRAIN_BASE + k as u64);
        seeds.insert(format!("train_{}", arch.name()), seed);
        let cfg = TrainConfig { seed, ..config.train.clone() };
        let outcome = train(&train_ds, arch, &cfg)
            .with_context(|| format!("training {}", arch.name()))?;
        outcome
            .model
            .save(&out_dir.join(format!("model_{}.rfm1", arch.name())))
            .with_context(|| format!("saving {} checkpoint", arch.name()))?;
        models.push(outcome.model);
    }
    let source_index = config
        .archs
        .iter()
        .position(|a| *a == config.source_arch)
        .expect("validated: source among archs");

    let report = transfer_rate(
        &models[source_index],
        &models,
        &eval_ds,
        &config.attack,
        config.targeted,
    )
    .context("transfer sweep")?;

    let mut rows = Vec::with_capacity(models.len());
    for (k, entry) in report.entries.iter().enumerate() {
        // Clean accuracy against the original labels of the eval set.
        let acc = eval_accuracy(&models[k], &eval_ds, LabelMap::Identity)?;
        rows.push(TransferRow {
            arch: entry.arch.clone(),
            is_source: k == source_index,
            eval_accuracy: acc,
            transfer_rate: entry.transfer_rate.value,
            transfer_count: entry.transfer_rate.count,
        });
    }

    let mut checks = Checks::new();
    if !config.targeted {
        let self_rate = rows[source_index].transfer_rate;
        checks.add(
            "self-transfer-exact",
            self_rate == 1.0,
            format!("source-on-source transfer rate = {self_rate}"),
        );
    }
    // The source is excluded: its rate is 1 by construction (untargeted),
    // carrying no information about the accuracy-transfer relation.
    let others: Vec<&TransferRow> =
        rows.iter().enumerate().filter(|(k, _)| *k != source_index).map(|(_, r)| r).collect();
    let accs: Vec<f64> = others.iter().map(|r| r.eval_accuracy).collect();
    let rates: Vec<f64> = others.iter().map(|r| r.transfer_rate).collect();
    let rho = spearman(&accs, &rates).ok();
    if let Some(rho) = rho {
        checks.add(
            "transfer-tracks-accuracy",
            rho > 0.0,
            format!("Spearman rank correlation = {rho:.4} over {} targets", others.len()),
        );
    }

    let mut table = csv_writer(&out_dir.join("transfer.csv"))?;
    table.write_record(["arch", "is_source", "eval_accuracy", "transfer_rate", "transfer_count"])?;
    for r in &rows {
        table.write_record([
            r.arch.as_str(),
            &r.is_source.to_string(),
            &cell(r.eval_accuracy),
            &cell(r.transfer_rate),
            &r.transfer_count.to_string(),
        ])?;
    }
    table.flush()?;

    let all_passed = checks.all_passed();
    let out = TransferCmdReport {
        version: rfeat::VERSION.to_string(),
        train_data: config.train_data.describe(),
        eval_data: config.eval_data.describe(),
        targeted: config.targeted,
        source_arch: config.source_arch.name().to_string(),
        source_success_fraction: report.source_success.value,
        rows,
        spearman_accuracy_vs_transfer: rho,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("transfer_report.json"), &out)?;
    write_manifest(out_dir, "transfer", config, &seeds)?;
    Ok(all_passed)
}
