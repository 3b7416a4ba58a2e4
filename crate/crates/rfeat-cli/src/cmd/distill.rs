//! `distill`: rebuilds a training set against a reference model, either by
//! representation inversion (keeping labels) or by targeted relabeling.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use rfeat::attacks::{AttackConfig, AttackMode};
use rfeat::distill::{build_nonrobust_dataset, build_robust_dataset, DistillConfig, RelabelMode};
use rfeat::models::Model;
use rfeat::rng::RngStream;

use crate::configs::{derive_seed, DistillCmdConfig, DistillMode};
use crate::manifest::write_manifest;
use crate::report::{write_json, Check, Checks};

const SLOT_DATA: u64 = 0;
const SLOT_BUILD: u64 = 1;

#[derive(Serialize)]
struct DistillReport {
    version: String,
    data: String,
    model_file: String,
    model_hash: String,
    construction: String,
    n: usize,
    dataset_file: String,
    dataset_hash: String,
    mean_initial_objective: Option<f64>,
    mean_final_objective: Option<f64>,
    attack_success_fraction: Option<f64>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

pub fn run(config: &DistillCmdConfig, out_dir: &Path) -> Result<bool> {
    let seeds: BTreeMap<String, u64> = [
        ("global".to_string(), config.seed),
        ("data".to_string(), derive_seed(config.seed, SLOT_DATA)),
        ("build".to_string(), derive_seed(config.seed, SLOT_BUILD)),
    ]
    .into();
    let ds = config.data.load(seeds["data"]).context("loading data")?;
    let model = Model::load(&config.model)
        .with_context(|| format!("loading model {}", config.model.display()))?;

    let mut checks = Checks::new();
    let (derived, construction) = match &config.mode {
        DistillMode::Robust(m) => {
            let cfg = DistillConfig { seed: seeds["build"], ..m.distill.clone() };
            let out = build_robust_dataset(&ds, &model, &cfg).context("representation inversion")?;
            (out, "representation-inversion".to_string())
        }
        DistillMode::Nonrobust(m) => {
            let attack = AttackConfig { mode: AttackMode::Targeted, ..m.attack.clone() };
            let out = build_nonrobust_dataset(
                &ds,
                &model,
                &attack,
                m.relabel,
                &RngStream::new(seeds["build"], 0),
            )
            .context("targeted relabeling")?;
            let kind = match m.relabel {
                RelabelMode::Random => "targeted-relabel-random",
                RelabelMode::Deterministic => "targeted-relabel-deterministic",
            };
            (out, kind.to_string())
        }
    };
    derived.save(&out_dir.join("derived.rfd1")).context("saving derived.rfd1")?;

    let get = |key: &str| derived.manifest().get(key).and_then(serde_json::Value::as_f64);
    let (initial, final_obj) = (get("mean_initial_objective"), get("mean_final_objective"));
    let success = get("attack_success_fraction");
    match &config.mode {
        DistillMode::Robust(_) => {
            let (i, f) = (initial.unwrap_or(f64::NAN), final_obj.unwrap_or(f64::NAN));
            checks.add(
                "inversion-objective-improved",
                f.is_finite() && i.is_finite() && f <= i,
                format!("mean representation distance {i:.6} -> {f:.6}"),
            );
        }
        DistillMode::Nonrobust(_) => {
            let s = success.unwrap_or(0.0);
            checks.add(
                "relabel-attack-succeeds",
                s > 0.0,
                format!("attack hit its target on a {s:.4} fraction of samples"),
            );
        }
    }

    let all_passed = checks.all_passed();
    let report = DistillReport {
        version: rfeat::VERSION.to_string(),
        data: config.data.describe(),
        model_file: config.model.display().to_string(),
        model_hash: model.content_hash(),
        construction,
        n: derived.n(),
        dataset_file: "derived.rfd1".to_string(),
        dataset_hash: derived.content_hash(),
        mean_initial_objective: initial,
        mean_final_objective: final_obj,
        attack_success_fraction: success,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("distill_report.json"), &report)?;
    write_manifest(out_dir, "distill", config, &seeds)?;
    Ok(all_passed)
}
