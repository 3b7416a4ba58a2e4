//! Derived-dataset construction: the robustified dataset and the two
//! non-robust relabeled datasets.
//!
//! The robustified dataset keeps every (input, label) pair's label but
//! replaces the input with an inversion `x_r` that matches the source
//! model's penultimate representation, starting from a seed point chosen
//! independently of the label (another training input, or noise). Only the
//! features the source model encodes survive the inversion.
//!
//! The non-robust datasets replace each input by a targeted adversarial
//! perturbation toward a relabel target `t` and emit `(x_adv, t)`: every
//! visible association between input and new label is carried by features a
//! small perturbation can control. Targets are drawn uniformly (`random`)
//! or as the fixed permutation `t = (y + 1) mod C` (`deterministic`).
//!
//! Construction never early-stops on attack success; fixed iteration counts
//! keep datasets homogeneous. Failed targeted attacks are kept, and the
//! success fraction plus a per-sample bitmap are recorded in the output
//! manifest alongside the source dataset and model hashes.

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_l2, AttackConfig, AttackMode};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{representation_distance_grad, Model};
use crate::numerics::{self, Vec64};
use crate::rng::RngStream;

/// Where representation inversion starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    /// Another training input, drawn uniformly per sample (independent of
    /// the sample's label by construction).
    RandomImage,
    /// I.i.d. uniform `[0, 1]` coordinates. Runs get 10x the step budget,
    /// since noise starts much farther from a representation match.
    Noise,
}

/// Representation-inversion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Gradient steps per sample (before the noise-mode multiplier).
    pub steps: usize,
    /// L2 length of the first descent step; the learning rate this implies
    /// is then held fixed, so later steps scale with the gradient.
    pub step_size: f64,
    #[serde(default = "default_seed_mode")]
    pub seed_mode: SeedMode,
    #[serde(default)]
    pub seed: u64,
    /// Clip iterates to `[0, 1]` after each step (image-like data).
    #[serde(default)]
    pub clip01: bool,
}

fn default_seed_mode() -> SeedMode {
    SeedMode::RandomImage
}

impl DistillConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("distill steps must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::NonPositive { what: "distill step_size", value: self.step_size });
        }
        Ok(())
    }
}

/// Step-budget multiplier applied when inverting from noise seeds.
pub const NOISE_STEP_MULTIPLIER: usize = 10;

/// Label-target choice for the non-robust datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelabelMode {
    /// Uniform target per sample.
    Random,
    /// The fixed permutation `t = (y + 1) mod class_count`.
    Deterministic,
}

/// Minimizes the squared representation distance `‖g(x_r) - g(x_target)‖₂²`
/// over `x_r` by gradient descent from `x_init`, where `g` is the model's
/// representation map.
///
/// The learning rate is calibrated once per run so that the first step moves
/// exactly `step_size` in L2 and stays fixed afterwards, so later step
/// lengths scale with the current gradient (never exceeding `step_size`).
/// Directions the representation is strongly sensitive to converge
/// geometrically, while weakly encoded directions move at a rate
/// proportional to their squared sensitivity and effectively keep their
/// seed values: the inversion transfers what the model encodes, at the rate
/// it encodes it, instead of chasing every direction with a nonzero
/// gradient component.
///
/// Clips each iterate to `[0, 1]` when `cfg.clip01`. Returns the final
/// iterate and its (unsquared) objective value. Returns immediately on an
/// exact representation match; a zero gradient away from a match (a flat
/// region) also stops the descent, keeping the iterate.
pub fn invert_representation(
    model: &Model,
    x_target: &[f64],
    x_init: &[f64],
    cfg: &DistillConfig,
) -> Result<(Vec64, f64)> {
    cfg.validate()?;
    let rep_target = model.representation(x_target)?;
    let mut x = x_init.to_vec();
    if cfg.clip01 {
        numerics::clamp01(&mut x);
    }
    let mut dist = 0.0;
    let mut rate = None;
    for _ in 0..cfg.steps {
        let (d, grad) = representation_distance_grad(model, &x, &rep_target)?;
        if !d.is_finite() {
            return Err(Error::NonFinite { what: "representation distance" });
        }
        dist = d;
        if dist == 0.0 {
            return Ok((x, 0.0));
        }
        let norm = numerics::norm2(&grad);
        if norm == 0.0 {
            return Ok((x, dist));
        }
        // `grad` is the gradient of the distance; `d * grad` is the gradient
        // of half the squared distance, whose magnitude decays with the
        // residual and keeps low-sensitivity coordinates near their seeds.
        // A step longer than `step_size` means the local gradient is steeper
        // than at calibration (e.g. the run started in a saturated region);
        // capping the length keeps iterates from overshooting the target.
        let eta = *rate.get_or_insert(cfg.step_size / (d * norm));
        let coeff = (eta * d).min(cfg.step_size / norm);
        numerics::axpy(-coeff, &grad, &mut x);
        if cfg.clip01 {
            numerics::clamp01(&mut x);
        }
        dist = representation_distance_grad(model, &x, &rep_target)?.0;
    }
    Ok((x, dist))
}

fn check_model_dataset(model: &Model, ds: &LabeledDataset) -> Result<()> {
    if model.input_dim() != ds.dim() {
        return Err(Error::DimMismatch { what: "model input vs dataset", expected: ds.dim(), got: model.input_dim() });
    }
    if model.class_count() != ds.class_count() {
        return Err(Error::DimMismatch {
            what: "model classes vs dataset",
            expected: ds.class_count() as usize,
            got: model.class_count() as usize,
        });
    }
    Ok(())
}

/// Builds the robustified dataset: one `(x_r, y)` pair per input pair, with
/// `x_r` inverted from a label-independent seed point to match the source
/// model's representation of `x`.
///
/// The manifest records the source dataset/model hashes, the config, and
/// the mean initial/final inversion objectives (the intended quality bar is
/// a mean final distance at most 10% of the mean initial distance).
pub fn build_robust_dataset(
    ds: &LabeledDataset,
    model: &Model,
    cfg: &DistillConfig,
) -> Result<LabeledDataset> {
    cfg.validate()?;
    check_model_dataset(model, ds)?;
    let steps = match cfg.seed_mode {
        SeedMode::RandomImage => cfg.steps,
        SeedMode::Noise => cfg.steps * NOISE_STEP_MULTIPLIER,
    };
    let per_sample_cfg = DistillConfig { steps, ..cfg.clone() };
    let root = RngStream::new(cfg.seed, 0);
    let results: Vec<(Vec64, f64, f64)> = numerics::parallel::try_indexed_map(ds.n(), |i| {
        let mut rng = root.substream(i as u64);
        let x_init: Vec64 = match cfg.seed_mode {
            SeedMode::RandomImage => ds.row(rng.below(ds.n() as u64) as usize).to_vec(),
            SeedMode::Noise => (0..ds.dim()).map(|_| rng.uniform()).collect(),
        };
        let rep_target = model.representation(ds.row(i))?;
        let initial = representation_distance_grad(model, &x_init, &rep_target)?.0;
        let (x_r, final_obj) =
            invert_representation(model, ds.row(i), &x_init, &per_sample_cfg).map_err(|e| {
                Error::InvalidConfig(format!("inversion failed at sample {i}: {e}"))
            })?;
        Ok((x_r, initial, final_obj))
    })?;
    let mut inputs = Vec::with_capacity(ds.n() * ds.dim());
    let mut mean_initial = 0.0;
    let mut mean_final = 0.0;
    for (x_r, initial, final_obj) in &results {
        inputs.extend_from_slice(x_r);
        mean_initial += initial / ds.n() as f64;
        mean_final += final_obj / ds.n() as f64;
    }
    let mut out = LabeledDataset::new(inputs, ds.dim(), ds.labels().to_vec(), ds.class_count())?;
    out.set_image_like(cfg.clip01)?;
    out.insert_manifest("derived", serde_json::json!("robust-distill"));
    out.insert_manifest("source_dataset_hash", serde_json::json!(ds.content_hash()));
    out.insert_manifest("source_model_hash", serde_json::json!(model.content_hash()));
    out.insert_manifest("distill_config", serde_json::to_value(cfg)?);
    out.insert_manifest("mean_initial_objective", serde_json::json!(mean_initial));
    out.insert_manifest("mean_final_objective", serde_json::json!(mean_final));
    Ok(out)
}

/// Builds a non-robust dataset: per sample, choose a target label `t`
/// (per `mode`), perturb the input toward `t` with the targeted attack, and
/// emit `(x_adv, t)`.
///
/// Unsuccessful attacks are kept; the manifest records the success fraction
/// and a per-sample success bitmap along with source hashes and configs.
/// `rng` seeds per-sample substreams (target draws and any random starts).
pub fn build_nonrobust_dataset(
    ds: &LabeledDataset,
    model: &Model,
    atk: &AttackConfig,
    mode: RelabelMode,
    rng: &RngStream,
) -> Result<LabeledDataset> {
    atk.validate()?;
    check_model_dataset(model, ds)?;
    if atk.mode != AttackMode::Targeted {
        return Err(Error::InvalidConfig("non-robust construction requires a targeted attack".into()));
    }
    let classes = ds.class_count();
    let results: Vec<(Vec64, u32, bool)> = numerics::parallel::try_indexed_map(ds.n(), |i| {
        let mut sample_rng = rng.substream(i as u64);
        let target = match mode {
            RelabelMode::Random => sample_rng.below(u64::from(classes)) as u32,
            RelabelMode::Deterministic => (ds.label(i) + 1) % classes,
        };
        let x_adv = pgd_l2(model, ds.row(i), target, atk, &mut sample_rng)?;
        let success = model.predict(&x_adv)? == target;
        Ok((x_adv, target, success))
    })?;
    let mut inputs = Vec::with_capacity(ds.n() * ds.dim());
    let mut labels = Vec::with_capacity(ds.n());
    let mut bitmap = Vec::with_capacity(ds.n());
    let mut successes = 0usize;
    for (x_adv, target, success) in &results {
        inputs.extend_from_slice(x_adv);
        labels.push(*target);
        bitmap.push(serde_json::json!(*success));
        successes += usize::from(*success);
    }
    let mut out = LabeledDataset::new(inputs, ds.dim(), labels, classes)?;
    out.set_image_like(atk.clip01 && ds.image_like())?;
    out.insert_manifest("derived", serde_json::json!("nonrobust-relabel"));
    out.insert_manifest("source_dataset_hash", serde_json::json!(ds.content_hash()));
    out.insert_manifest("source_model_hash", serde_json::json!(model.content_hash()));
    out.insert_manifest("attack_config", serde_json::to_value(atk)?);
    out.insert_manifest("relabel_mode", serde_json::to_value(mode)?);
    out.insert_manifest(
        "attack_success_fraction",
        serde_json::json!(successes as f64 / ds.n() as f64),
    );
    out.insert_manifest("attack_success_bitmap", serde_json::Value::Array(bitmap));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_gaussian, TwoGaussianSpec};
    use crate::models::ArchitectureId;

    fn toy_dataset(n: usize, seed: u64) -> LabeledDataset {
        gen_two_gaussian(&TwoGaussianSpec {
            dim: 2,
            n,
            mu_star: vec![1.5, 0.75],
            sigma_star: vec![0.3, 0.3],
            seed,
        })
        .unwrap()
    }

    fn random_model(arch: ArchitectureId, dim: usize, classes: u32, seed: u64) -> Model {
        let mut rng = RngStream::new(seed, 0);
        Model::init(arch, dim, classes, &mut rng).unwrap()
    }

    fn base_cfg() -> DistillConfig {
        DistillConfig {
            steps: 200,
            step_size: 0.05,
            seed_mode: SeedMode::RandomImage,
            seed: 0,
            clip01: false,
        }
    }

    #[test]
    fn inversion_fixed_point() {
        let model = random_model(ArchitectureId::Mlp32, 3, 2, 1);
        let x = [0.4, -0.2, 0.9];
        let (x_r, obj) = invert_representation(&model, &x, &x, &base_cfg()).unwrap();
        assert_eq!(x_r, x.to_vec());
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn linear_inversion_recovers_input() {
        // Linear representation is the identity, so the descent contracts
        // the gap to the target geometrically.
        let model = random_model(ArchitectureId::Linear, 2, 2, 2);
        let target = [1.2, -0.7];
        let init = [-2.0, 3.0];
        let cfg = DistillConfig { step_size: 0.5, ..base_cfg() };
        let (x_r, obj) = invert_representation(&model, &target, &init, &cfg).unwrap();
        assert!(numerics::dist2(&x_r, &target) <= 1e-6, "{x_r:?}");
        assert!(obj <= 1e-6);
    }

    #[test]
    fn inversion_descends_on_random_instances() {
        let model = random_model(ArchitectureId::Mlp32, 4, 2, 3);
        let mut rng = RngStream::new(5, 0);
        let cfg = DistillConfig { steps: 60, ..base_cfg() };
        for _ in 0..100 {
            let target: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let init: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let rep_target = model.representation(&target).unwrap();
            let initial = representation_distance_grad(&model, &init, &rep_target).unwrap().0;
            let (_, final_obj) = invert_representation(&model, &target, &init, &cfg).unwrap();
            assert!(final_obj <= initial + 1e-12, "{final_obj} vs {initial}");
        }
    }

    #[test]
    fn robust_dataset_preserves_labels_and_tracks_objectives() {
        let ds = toy_dataset(48, 4);
        let model = random_model(ArchitectureId::Linear, 2, 2, 7);
        let cfg = DistillConfig { steps: 400, step_size: 0.08, ..base_cfg() };
        let out = build_robust_dataset(&ds, &model, &cfg).unwrap();
        assert_eq!(out.n(), ds.n());
        assert_eq!(out.labels(), ds.labels());
        let manifest = out.manifest();
        let initial = manifest["mean_initial_objective"].as_f64().unwrap();
        let fin = manifest["mean_final_objective"].as_f64().unwrap();
        assert!(fin <= 0.1 * initial, "mean final {fin} vs mean initial {initial}");
        assert_eq!(manifest["source_dataset_hash"].as_str().unwrap(), ds.content_hash());
        assert_eq!(manifest["source_model_hash"].as_str().unwrap(), model.content_hash());
        // Identity representation: the inversion lands near the original rows.
        for i in 0..ds.n() {
            assert!(numerics::dist2(out.row(i), ds.row(i)) <= cfg.step_size + 1e-9);
        }
    }

    #[test]
    fn robust_dataset_noise_mode_multiplies_steps() {
        let ds = toy_dataset(12, 6);
        let model = random_model(ArchitectureId::Linear, 2, 2, 8);
        // 3 * 10 noise steps of 0.2 are enough to cross from [0,1]^2 seeds
        // to inputs a few units away; 3 steps alone would not be.
        let cfg = DistillConfig {
            steps: 3,
            step_size: 0.2,
            seed_mode: SeedMode::Noise,
            seed: 1,
            clip01: false,
        };
        let out = build_robust_dataset(&ds, &model, &cfg).unwrap();
        let fin = out.manifest()["mean_final_objective"].as_f64().unwrap();
        let initial = out.manifest()["mean_initial_objective"].as_f64().unwrap();
        assert!(fin <= 0.25 * initial, "{fin} vs {initial}");
    }

    #[test]
    fn nonrobust_deterministic_permutes_labels_within_budget() {
        let ds = toy_dataset(64, 9);
        let trained =
            crate::models::train(&ds, ArchitectureId::Linear, &crate::models::TrainConfig::default())
                .unwrap()
                .model;
        let atk = AttackConfig {
            mode: AttackMode::Targeted,
            steps: 20,
            step_size: 0.1,
            ..AttackConfig::for_epsilon(1.0)
        };
        let out =
            build_nonrobust_dataset(&ds, &trained, &atk, RelabelMode::Deterministic, &RngStream::new(3, 0))
                .unwrap();
        assert_eq!(out.n(), ds.n());
        for i in 0..ds.n() {
            assert_eq!(out.label(i), (ds.label(i) + 1) % 2);
            assert!(numerics::dist2(out.row(i), ds.row(i)) <= atk.epsilon + 1e-9);
        }
        let fraction = out.manifest()["attack_success_fraction"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&fraction));
        let bitmap = out.manifest()["attack_success_bitmap"].as_array().unwrap();
        assert_eq!(bitmap.len(), ds.n());
        let bit_count = bitmap.iter().filter(|b| b.as_bool().unwrap()).count();
        assert!((bit_count as f64 / ds.n() as f64 - fraction).abs() < 1e-12);
    }

    #[test]
    fn nonrobust_random_labels_are_roughly_uniform() {
        let ds = toy_dataset(600, 10);
        let model = random_model(ArchitectureId::Mlp32, 2, 2, 11);
        let atk = AttackConfig {
            mode: AttackMode::Targeted,
            ..AttackConfig::for_epsilon(0.3)
        };
        let out =
            build_nonrobust_dataset(&ds, &model, &atk, RelabelMode::Random, &RngStream::new(5, 0))
                .unwrap();
        let ones = out.labels().iter().filter(|&&l| l == 1).count() as f64;
        let n = out.n() as f64;
        let three_sigma = 3.0 * (n * 0.25).sqrt();
        assert!((ones - n / 2.0).abs() <= three_sigma, "{ones} of {n}");
    }

    #[test]
    fn nonrobust_requires_targeted_attack() {
        let ds = toy_dataset(8, 12);
        let model = random_model(ArchitectureId::Linear, 2, 2, 13);
        let atk = AttackConfig::for_epsilon(0.3);
        assert!(matches!(
            build_nonrobust_dataset(&ds, &model, &atk, RelabelMode::Random, &RngStream::new(0, 0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn builders_are_deterministic() {
        let ds = toy_dataset(24, 14);
        let model = random_model(ArchitectureId::Mlp32, 2, 2, 15);
        let cfg = DistillConfig { steps: 50, ..base_cfg() };
        let a = build_robust_dataset(&ds, &model, &cfg).unwrap();
        let b = build_robust_dataset(&ds, &model, &cfg).unwrap();
        assert_eq!(a, b);
        let atk = AttackConfig { mode: AttackMode::Targeted, ..AttackConfig::for_epsilon(0.4) };
        let root = RngStream::new(9, 2);
        let c = build_nonrobust_dataset(&ds, &model, &atk, RelabelMode::Random, &root).unwrap();
        let d = build_nonrobust_dataset(&ds, &model, &atk, RelabelMode::Random, &root).unwrap();
        assert_eq!(c, d);
    }
}
