//! `pipeline`: the full dataset-surgery study on one task.
//!
//! Trains a standard and an adversarially trained source model, rebuilds
//! the training set four ways (robustified from each source model, and
//! relabeled toward random/deterministic targets), retrains a fresh model
//! per derived dataset, and checks the directional outcomes: robustness
//! must transfer through the robustified data, must *not* appear in the
//! standard-source control, and the relabeled sets must generalize to the
//! original test set.
//!
//! Every stage failure aborts with the stage name; artifacts written by
//! earlier stages stay on disk.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rfeat::attacks::{robust_accuracy, AttackConfig, AttackMode};
use rfeat::data::LabeledDataset;
use rfeat::distill::{build_nonrobust_dataset, build_robust_dataset, DistillConfig, RelabelMode};
use rfeat::metrics::{eval_accuracy, LabelMap};
use rfeat::models::{train, TrainConfig, TrainOutcome};
use rfeat::rng::RngStream;

use crate::configs::{derive_seed, PipelineConfig};
use crate::dataio::{idx_roundtrip, image_side};
use crate::manifest::write_manifest;
use crate::report::{cell, csv_writer, opt_cell, write_json, Check, Checks};

const SLOT_TRAIN_DATA: u64 = 0;
const SLOT_TEST_DATA: u64 = 1;
const SLOT_TRAIN_STANDARD: u64 = 2;
const SLOT_TRAIN_ROBUST: u64 = 3;
const SLOT_DISTILL_ROBUST: u64 = 4;
const SLOT_DISTILL_CONTROL: u64 = 5;
const SLOT_RELABEL_RANDOM: u64 = 6;
const SLOT_RELABEL_DET: u64 = 7;
const SLOT_RELABEL_DET_ROBUST: u64 = 8;
const SLOT_RETRAIN_BASE: u64 = 9;

/// Runs `f` as a named stage; failures carry the stage name.
fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    eprintln!("stage {name}");
    f().with_context(|| format!("stage `{name}` failed"))
}

#[derive(Serialize)]
struct ModelEval {
    arch: String,
    file: String,
    clean_accuracy: f64,
    robust_accuracy: f64,
    final_train_loss: f64,
}

#[derive(Serialize)]
struct DerivedEval {
    name: String,
    construction: String,
    source_model: String,
    dataset_file: String,
    dataset_hash: String,
    /// Fraction of relabeling attacks that hit their target (relabeled
    /// constructions only).
    attack_success_fraction: Option<f64>,
    /// Mean representation-matching objective before/after inversion
    /// (robustified constructions only).
    mean_initial_objective: Option<f64>,
    mean_final_objective: Option<f64>,
    retrain_arch: String,
    clean_accuracy_identity: f64,
    clean_accuracy_permuted: f64,
    robust_accuracy: f64,
}

#[derive(Serialize)]
struct PipelineReport {
    version: String,
    train_data: String,
    test_data: String,
    train_n: usize,
    test_n: usize,
    dim: usize,
    classes: u32,
    image_like: bool,
    chance_accuracy: f64,
    standard: ModelEval,
    robust: ModelEval,
    derived: Vec<DerivedEval>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

struct DerivedSpec {
    name: &'static str,
    construction: &'static str,
    source_model: &'static str,
}

pub fn run(config: &PipelineConfig, out_dir: &Path) -> Result<bool> {
    config.validate()?;
    if config.standard_train.attack.is_some() {
        bail!("pipeline config: standard_train must not set an attack (that is robust_train)");
    }

    let mut seeds: BTreeMap<String, u64> = BTreeMap::new();
    let slot = |name: &str, s: u64, seeds: &mut BTreeMap<String, u64>| {
        let v = derive_seed(config.seed, s);
        seeds.insert(name.to_string(), v);
        v
    };
    seeds.insert("global".to_string(), config.seed);
    let seed_train_data = slot("train_data", SLOT_TRAIN_DATA, &mut seeds);
    let seed_test_data = slot("test_data", SLOT_TEST_DATA, &mut seeds);
    let seed_standard = slot("train_standard", SLOT_TRAIN_STANDARD, &mut seeds);
    let seed_robust = slot("train_robust", SLOT_TRAIN_ROBUST, &mut seeds);
    let seed_distill_robust = slot("distill_robust", SLOT_DISTILL_ROBUST, &mut seeds);
    let seed_distill_control = slot("distill_control", SLOT_DISTILL_CONTROL, &mut seeds);
    let seed_relabel_random = slot("relabel_random", SLOT_RELABEL_RANDOM, &mut seeds);
    let seed_relabel_det = slot("relabel_deterministic", SLOT_RELABEL_DET, &mut seeds);
    let seed_relabel_det_robust =
        slot("relabel_deterministic_robust", SLOT_RELABEL_DET_ROBUST, &mut seeds);

    // --- Data ---------------------------------------------------------------
    let mut train_ds = stage("load-train-data", || config.train_data.load(seed_train_data))?;
    let test_ds = stage("load-test-data", || config.test_data.load(seed_test_data))?;
    if train_ds.dim() != test_ds.dim() || train_ds.class_count() != test_ds.class_count() {
        bail!(
            "train/test mismatch: {}d/{} classes vs {}d/{} classes",
            train_ds.dim(),
            train_ds.class_count(),
            test_ds.dim(),
            test_ds.class_count()
        );
    }
    if config.idx_roundtrip {
        train_ds = stage("idx-roundtrip", || {
            let side = image_side(&train_ds);
            idx_roundtrip(
                &train_ds,
                side,
                &out_dir.join("train_images.idx"),
                &out_dir.join("train_labels.idx"),
            )
        })?;
    }
    train_ds.save(&out_dir.join("train_data.rfd1")).context("saving train data")?;
    test_ds.save(&out_dir.join("test_data.rfd1")).context("saving test data")?;
    let image_like = train_ds.image_like();
    let classes = train_ds.class_count();
    let chance = 1.0 / f64::from(classes);

    // --- Source models --------------------------------------------------------
    let standard_cfg = TrainConfig { seed: seed_standard, ..config.standard_train.clone() };
    let standard =
        stage("train-standard", || Ok(train(&train_ds, config.source_arch, &standard_cfg)?))?;
    standard.model.save(&out_dir.join("model_standard.rfm1")).context("saving standard model")?;

    let robust_cfg = TrainConfig { seed: seed_robust, ..config.robust_train.clone() };
    let robust =
        stage("train-robust", || Ok(train(&train_ds, config.source_arch, &robust_cfg)?))?;
    robust.model.save(&out_dir.join("model_robust.rfm1")).context("saving robust model")?;

    let eval_attack = AttackConfig { mode: AttackMode::Untargeted, ..config.eval_attack.clone() };
    let (standard_eval, robust_eval) = stage("evaluate-source-models", || {
        Ok((
            eval_model(&standard, "model_standard.rfm1", &test_ds, &eval_attack)?,
            eval_model(&robust, "model_robust.rfm1", &test_ds, &eval_attack)?,
        ))
    })?;

    let mut checks = Checks::new();
    if let Some(max) = config.checks.erm_robust_acc_max {
        checks.add(
            "standard-model-vulnerable",
            standard_eval.robust_accuracy < max,
            format!(
                "standard robust accuracy {:.4} < {:.4} (clean {:.4})",
                standard_eval.robust_accuracy, max, standard_eval.clean_accuracy
            ),
        );
    }
    if let Some(min) = config.checks.adv_robust_acc_min {
        checks.add(
            "robust-model-robust",
            robust_eval.robust_accuracy >= min,
            format!(
                "adversarially trained robust accuracy {:.4} >= {:.4} (clean {:.4})",
                robust_eval.robust_accuracy, min, robust_eval.clean_accuracy
            ),
        );
    }

    // --- Derived datasets -----------------------------------------------------
    let clip = |c: bool| c || image_like;
    let distill_robust_cfg = DistillConfig {
        seed: seed_distill_robust,
        clip01: clip(config.distill.clip01),
        ..config.distill.clone()
    };
    let distill_control_cfg =
        DistillConfig { seed: seed_distill_control, ..distill_robust_cfg.clone() };
    let relabel_attack = AttackConfig {
        mode: AttackMode::Targeted,
        clip01: clip(config.relabel_attack.clip01),
        ..config.relabel_attack.clone()
    };

    let specs = [
        DerivedSpec {
            name: "d-r",
            construction: "representation-inversion",
            source_model: "robust",
        },
        DerivedSpec {
            name: "d-nr",
            construction: "representation-inversion",
            source_model: "standard",
        },
        DerivedSpec {
            name: "d-rand",
            construction: "targeted-relabel-random",
            source_model: "standard",
        },
        DerivedSpec {
            name: "d-det",
            construction: "targeted-relabel-deterministic",
            source_model: "standard",
        },
        DerivedSpec {
            name: "d-det-robust",
            construction: "targeted-relabel-deterministic",
            source_model: "robust",
        },
    ];
    let mut datasets: Vec<LabeledDataset> = Vec::with_capacity(specs.len());
    for spec in &specs {
        let stage_name = format!("build-{}", spec.name);
        let ds = stage(&stage_name, || match spec.name {
            "d-r" => build_robust_dataset(&train_ds, &robust.model, &distill_robust_cfg)
                .map_err(Into::into),
            "d-nr" => build_robust_dataset(&train_ds, &standard.model, &distill_control_cfg)
                .map_err(Into::into),
            "d-rand" => build_nonrobust_dataset(
                &train_ds,
                &standard.model,
                &relabel_attack,
                RelabelMode::Random,
                &RngStream::new(seed_relabel_random, 0),
            )
            .map_err(Into::into),
            "d-det" => build_nonrobust_dataset(
                &train_ds,
                &standard.model,
                &relabel_attack,
                RelabelMode::Deterministic,
                &RngStream::new(seed_relabel_det, 0),
            )
            .map_err(Into::into),
            "d-det-robust" => build_nonrobust_dataset(
                &train_ds,
                &robust.model,
                &relabel_attack,
                RelabelMode::Deterministic,
                &RngStream::new(seed_relabel_det_robust, 0),
            )
            .map_err(Into::into),
            other => bail!("unknown derived dataset {other}"),
        })?;
        let file = format!("{}.rfd1", spec.name.replace('-', "_"));
        ds.save(&out_dir.join(&file)).with_context(|| format!("saving {file}"))?;
        datasets.push(ds);
    }

    // --- Retraining and evaluation --------------------------------------------
    let retrain_arch = config.retrain_arch.unwrap_or(config.source_arch);
    let retrain_base = config.retrain.clone().unwrap_or_else(|| config.standard_train.clone());
    if retrain_base.attack.is_some() {
        bail!("pipeline config: retrain must be standard training (no attack)");
    }
    let mut derived = Vec::with_capacity(specs.len());
    let mut retrained: Vec<TrainOutcome> = Vec::with_capacity(specs.len());
    for (k, (spec, ds)) in specs.iter().zip(&datasets).enumerate() {
        let retrain_seed = derive_seed(config.seed, SLOT_RETRAIN_BASE + k as u64);
        seeds.insert(format!("retrain_{}", spec.name.replace('-', "_")), retrain_seed);
        let cfg = TrainConfig { seed: retrain_seed, ..retrain_base.clone() };
        let outcome =
            stage(&format!("retrain-{}", spec.name), || Ok(train(ds, retrain_arch, &cfg)?))?;
        let model_file = format!("model_{}.rfm1", spec.name.replace('-', "_"));
        outcome.model.save(&out_dir.join(&model_file))
            .with_context(|| format!("saving {model_file}"))?;

        let (identity, permuted, robust_acc) =
            stage(&format!("evaluate-{}", spec.name), || {
                Ok((
                    eval_accuracy(&outcome.model, &test_ds, LabelMap::Identity)?,
                    eval_accuracy(&outcome.model, &test_ds, LabelMap::PlusOneModC)?,
                    robust_accuracy(&outcome.model, &test_ds, &eval_attack)?,
                ))
            })?;
        derived.push(DerivedEval {
            name: spec.name.to_string(),
            construction: spec.construction.to_string(),
            source_model: spec.source_model.to_string(),
            dataset_file: format!("{}.rfd1", spec.name.replace('-', "_")),
            dataset_hash: ds.content_hash(),
            attack_success_fraction: manifest_f64(ds, "attack_success_fraction"),
            mean_initial_objective: manifest_f64(ds, "mean_initial_objective"),
            mean_final_objective: manifest_f64(ds, "mean_final_objective"),
            retrain_arch: retrain_arch.name().to_string(),
            clean_accuracy_identity: identity,
            clean_accuracy_permuted: permuted,
            robust_accuracy: robust_acc,
        });
        retrained.push(outcome);
    }

    let by_name = |n: &str| derived.iter().find(|e| e.name == n).expect("derived entry");
    // Inversion quality is structural: a sloppy inversion degenerates into
    // noise injection, so the convergence bound is not configurable.
    for name in ["d-r", "d-nr"] {
        let e = by_name(name);
        let (initial, last) = (
            e.mean_initial_objective.expect("inversion manifest"),
            e.mean_final_objective.expect("inversion manifest"),
        );
        checks.add(
            &format!("inversion-converged-{name}"),
            last <= 0.1 * initial,
            format!("mean representation distance {last:.4} <= 10% of initial {initial:.4}"),
        );
    }
    let d_r = by_name("d-r");
    if let Some(retention) = config.checks.robust_data_retention_min {
        checks.add(
            "robust-dataset-retains-robustness",
            d_r.robust_accuracy >= retention * robust_eval.robust_accuracy,
            format!(
                "standard training on the robustified set: robust accuracy {:.4} >= {:.2} x {:.4}",
                d_r.robust_accuracy, retention, robust_eval.robust_accuracy
            ),
        );
    }
    let d_nr = by_name("d-nr");
    if let Some(max) = config.checks.nonrobust_control_robust_acc_max {
        checks.add(
            "nonrobust-control-stays-vulnerable",
            d_nr.robust_accuracy < max,
            format!(
                "standard-source control: robust accuracy {:.4} < {:.4}",
                d_nr.robust_accuracy, max
            ),
        );
    }
    if let Some(multiplier) = config.checks.relabeled_chance_multiplier_min {
        for name in ["d-rand", "d-det"] {
            let e = by_name(name);
            checks.add(
                &format!("{name}-generalizes"),
                e.clean_accuracy_identity >= multiplier * chance,
                format!(
                    "original-test accuracy {:.4} >= {:.1} x chance {:.4}",
                    e.clean_accuracy_identity, multiplier, chance
                ),
            );
        }
    }
    if config.checks.det_control_permuted_beats_identity {
        let e = by_name("d-det-robust");
        checks.add(
            "robust-source-det-control-permuted-wins",
            e.clean_accuracy_permuted > e.clean_accuracy_identity,
            format!(
                "permuted-map accuracy {:.4} > identity-map accuracy {:.4}",
                e.clean_accuracy_permuted, e.clean_accuracy_identity
            ),
        );
    }

    // --- Artifacts --------------------------------------------------------------
    let mut evals = csv_writer(&out_dir.join("pipeline_evals.csv"))?;
    evals.write_record([
        "model",
        "trained_on",
        "arch",
        "clean_accuracy_identity",
        "clean_accuracy_permuted",
        "robust_accuracy",
        "attack_success_fraction",
    ])?;
    for (eval, trained_on) in
        [(&standard_eval, "train-data"), (&robust_eval, "train-data")]
    {
        evals.write_record([
            eval.file.trim_end_matches(".rfm1").trim_start_matches("model_"),
            trained_on,
            &eval.arch,
            &cell(eval.clean_accuracy),
            "",
            &cell(eval.robust_accuracy),
            "",
        ])?;
    }
    for e in &derived {
        evals.write_record([
            e.name.as_str(),
            e.dataset_file.as_str(),
            e.retrain_arch.as_str(),
            &cell(e.clean_accuracy_identity),
            &cell(e.clean_accuracy_permuted),
            &cell(e.robust_accuracy),
            &opt_cell(e.attack_success_fraction),
        ])?;
    }
    evals.flush()?;

    let mut curves = csv_writer(&out_dir.join("loss_curves.csv"))?;
    curves.write_record(["model", "epoch", "loss"])?;
    let named: Vec<(&str, &TrainOutcome)> = [("standard", &standard), ("robust", &robust)]
        .into_iter()
        .chain(specs.iter().zip(&retrained).map(|(s, o)| (s.name, o)))
        .collect();
    for (name, outcome) in named {
        for (epoch, loss) in outcome.loss_curve.iter().enumerate() {
            curves.write_record([name, &epoch.to_string(), &cell(*loss)])?;
        }
    }
    curves.flush()?;

    let all_passed = checks.all_passed();
    let report = PipelineReport {
        version: rfeat::VERSION.to_string(),
        train_data: config.train_data.describe(),
        test_data: config.test_data.describe(),
        train_n: train_ds.n(),
        test_n: test_ds.n(),
        dim: train_ds.dim(),
        classes,
        image_like,
        chance_accuracy: chance,
        standard: standard_eval,
        robust: robust_eval,
        derived,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("pipeline_report.json"), &report)?;
    write_manifest(out_dir, "pipeline", config, &seeds)?;
    Ok(all_passed)
}

fn eval_model(
    outcome: &TrainOutcome,
    file: &str,
    test_ds: &LabeledDataset,
    attack: &AttackConfig,
) -> Result<ModelEval> {
    Ok(ModelEval {
        arch: outcome.model.arch().name().to_string(),
        file: file.to_string(),
        clean_accuracy: eval_accuracy(&outcome.model, test_ds, LabelMap::Identity)?,
        robust_accuracy: robust_accuracy(&outcome.model, test_ds, attack)?,
        final_train_loss: *outcome.loss_curve.last().expect("nonempty loss curve"),
    })
}

fn manifest_f64(ds: &LabeledDataset, key: &str) -> Option<f64> {
    ds.manifest().get(key).and_then(serde_json::Value::as_f64)
}
