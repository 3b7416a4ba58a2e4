//! `gen-data`: runs a synthetic task generator and writes the dataset.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rfeat::data::{generate, SyntheticSpec};

use crate::configs::{derive_seed, reseed_spec, GenDataConfig};
use crate::dataio::{image_side, write_idx_pair};
use crate::manifest::write_manifest;
use crate::report::{write_json, Check, Checks};

const SLOT_GENERATE: u64 = 0;

#[derive(Serialize)]
struct GenDataReport {
    version: String,
    kind: String,
    n: usize,
    dim: usize,
    classes: u32,
    image_like: bool,
    dataset_hash: String,
    files: Vec<String>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

pub fn run(config: &GenDataConfig, out_dir: &Path) -> Result<bool> {
    if !config.write_rfd1 && !config.write_idx {
        bail!("gen-data config: nothing to write (enable write_rfd1 and/or write_idx)");
    }
    let seeds: BTreeMap<String, u64> = [
        ("global".to_string(), config.seed),
        ("generate".to_string(), derive_seed(config.seed, SLOT_GENERATE)),
    ]
    .into();
    let spec = reseed_spec(&config.spec, seeds["generate"]);
    let ds = generate(&spec).context("generating dataset")?;

    let mut files = Vec::new();
    if config.write_rfd1 {
        ds.save(&out_dir.join("dataset.rfd1")).context("writing dataset.rfd1")?;
        files.push("dataset.rfd1".to_string());
    }
    if config.write_idx {
        write_idx_pair(
            &ds,
            image_side(&ds),
            &out_dir.join("images.idx"),
            &out_dir.join("labels.idx"),
        )?;
        files.push("images.idx".to_string());
        files.push("labels.idx".to_string());
    }

    let mut checks = Checks::new();
    let finite = ds.inputs().iter().all(|v| v.is_finite());
    checks.add("inputs-finite", finite, format!("{} values scanned", ds.inputs().len()));
    let labels_in_range = ds.labels().iter().all(|&l| l < ds.class_count());
    checks.add(
        "labels-in-range",
        labels_in_range,
        format!("{} labels below class count {}", ds.n(), ds.class_count()),
    );

    let all_passed = checks.all_passed();
    let report = GenDataReport {
        version: rfeat::VERSION.to_string(),
        kind: match &config.spec {
            SyntheticSpec::TwoGaussian(_) => "two-gaussian",
            SyntheticSpec::RobustnessVsAccuracy(_) => "robustness-vs-accuracy",
            SyntheticSpec::MulticlassBlobs(_) => "multiclass-blobs",
            SyntheticSpec::ImageBlobs(_) => "image-blobs",
        }
        .to_string(),
        n: ds.n(),
        dim: ds.dim(),
        classes: ds.class_count(),
        image_like: ds.image_like(),
        dataset_hash: ds.content_hash(),
        files,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("gen_data_report.json"), &report)?;
    write_manifest(out_dir, "gen-data", config, &seeds)?;
    Ok(all_passed)
}
