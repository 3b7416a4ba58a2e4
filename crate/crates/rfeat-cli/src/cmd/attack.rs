//! `attack`: attacks every sample of a dataset with one model and writes
//! the per-sample records plus an optional accuracy-versus-steps curve.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rfeat::attacks::{accuracy_vs_steps, evaluate_attack, AttackMode};
use rfeat::models::Model;
use rfeat::rng::RngStream;

use crate::configs::{derive_seed, AttackCmdConfig};
use crate::manifest::write_manifest;
use crate::report::{cell, csv_writer, write_json, Check, Checks};

const SLOT_DATA: u64 = 0;
const SLOT_ATTACK: u64 = 1;

#[derive(Serialize)]
struct StepsPoint {
    steps: usize,
    robust_accuracy: f64,
}

#[derive(Serialize)]
struct AttackReport {
    version: String,
    data: String,
    model_file: String,
    model_hash: String,
    samples: usize,
    mode: String,
    epsilon: f64,
    success_fraction: f64,
    robust_accuracy: Option<f64>,
    mean_l2_distance: f64,
    max_l2_distance: f64,
    accuracy_vs_steps: Option<Vec<StepsPoint>>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

pub fn run(config: &AttackCmdConfig, out_dir: &Path) -> Result<bool> {
    config.attack.validate().context("attack config")?;
    let seeds: BTreeMap<String, u64> = [
        ("global".to_string(), config.seed),
        ("data".to_string(), derive_seed(config.seed, SLOT_DATA)),
        ("attack".to_string(), derive_seed(config.seed, SLOT_ATTACK)),
    ]
    .into();
    let ds = config.data.load(seeds["data"]).context("loading data")?;
    let model = Model::load(&config.model)
        .with_context(|| format!("loading model {}", config.model.display()))?;

    let records =
        evaluate_attack(&model, &ds, &config.attack, &RngStream::new(seeds["attack"], 0))
            .context("running attack")?;

    let mut table = csv_writer(&out_dir.join("attacks.csv"))?;
    table.write_record(["sample_index", "clean_label", "adv_label", "l2_dist", "success"])?;
    for r in &records {
        table.write_record([
            r.sample_index.to_string(),
            r.clean_label.to_string(),
            r.adv_label.to_string(),
            cell(r.l2_dist),
            r.success.to_string(),
        ])?;
    }
    table.flush()?;

    let successes = records.iter().filter(|r| r.success).count();
    let success_fraction = successes as f64 / records.len() as f64;
    let mean_l2 = records.iter().map(|r| r.l2_dist).sum::<f64>() / records.len() as f64;
    let max_l2 = records.iter().map(|r| r.l2_dist).fold(0.0, f64::max);

    let mut checks = Checks::new();
    checks.add(
        "epsilon-ball-respected",
        max_l2 <= config.attack.epsilon + 1e-9,
        format!("max ||x_adv - x||_2 = {max_l2:.12} <= {} + 1e-9", config.attack.epsilon),
    );

    let robust_acc =
        (config.attack.mode == AttackMode::Untargeted).then_some(1.0 - success_fraction);
    let mut curve = None;
    if let Some(grid) = &config.steps_grid {
        if config.attack.mode != AttackMode::Untargeted {
            bail!("attack config: steps_grid requires an untargeted attack");
        }
        let points = accuracy_vs_steps(&model, &ds, &config.attack, grid)
            .context("accuracy-versus-steps sweep")?;
        let mut steps_csv = csv_writer(&out_dir.join("accuracy_vs_steps.csv"))?;
        steps_csv.write_record(["steps", "robust_accuracy"])?;
        for (steps, acc) in &points {
            steps_csv.write_record([steps.to_string(), cell(*acc)])?;
        }
        steps_csv.flush()?;
        // Within half an accuracy point: PGD with more steps may wobble by
        // one sample, never climb materially.
        let monotone = points.windows(2).all(|w| w[1].1 <= w[0].1 + 0.005);
        checks.add(
            "accuracy-vs-steps-monotone",
            monotone,
            format!("nonincreasing within 0.5 points over {} step counts", points.len()),
        );
        curve = Some(
            points
                .into_iter()
                .map(|(steps, robust_accuracy)| StepsPoint { steps, robust_accuracy })
                .collect(),
        );
    }

    let all_passed = checks.all_passed();
    let report = AttackReport {
        version: rfeat::VERSION.to_string(),
        data: config.data.describe(),
        model_file: config.model.display().to_string(),
        model_hash: model.content_hash(),
        samples: records.len(),
        mode: match config.attack.mode {
            AttackMode::Untargeted => "untargeted".to_string(),
            AttackMode::Targeted => "targeted".to_string(),
        },
        epsilon: config.attack.epsilon,
        success_fraction,
        robust_accuracy: robust_acc,
        mean_l2_distance: mean_l2,
        max_l2_distance: max_l2,
        accuracy_vs_steps: curve,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("attack_report.json"), &report)?;
    write_manifest(out_dir, "attack", config, &seeds)?;
    Ok(all_passed)
}
