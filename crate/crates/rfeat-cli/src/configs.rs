//! JSON experiment configurations for every subcommand.
//!
//! All configs are strict: unknown keys are rejected at load time with an
//! error naming the offending key, before any compute starts. Matching JSON
//! Schema documents ship under `schemas/` in this crate.
//!
//! # Seeding
//!
//! Each config carries one top-level `seed` (default 0), overridable with
//! the `--seed` flag. Commands derive every internal seed from it through
//! fixed, documented slots (see [`derive_seed`]); nested `seed` fields
//! inside embedded train/distill/task specs are accepted by the schema but
//! **overwritten** by the derived values, so a single knob controls the
//! whole run and the manifest can list the effective seeds.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rfeat::attacks::AttackConfig;
use rfeat::data::{self, LabeledDataset, SyntheticSpec};
use rfeat::distill::{DistillConfig, RelabelMode};
use rfeat::metrics::LabelMap;
use rfeat::models::{ArchitectureId, TrainConfig};
use rfeat::rng::RngStream;

/// Derives the seed for a named slot from the run's global seed.
///
/// Distinct `(global, slot)` pairs give decorrelated seeds because the
/// stream is ChaCha-keyed by both values.
pub fn derive_seed(global: u64, slot: u64) -> u64 {
    RngStream::new(global, slot).below(u64::MAX)
}

/// Configs with one global seed the `--seed` flag can override.
pub trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;
}

macro_rules! impl_seeded {
    ($($ty:ty),+) => {$(
        impl Seeded for $ty {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
        }
    )+};
}

/// Loads and validates a config file, tagging errors with the path and the
/// offending key (serde names unknown fields in its message).
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Where a command gets its dataset from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Generate with one of the built-in synthetic tasks.
    Synthetic(SyntheticSource),
    /// Load a dataset file in the native format.
    Rfd1(FileSource),
    /// Load an IDX image/label tensor pair.
    Idx(IdxSource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl DataSource {
    /// Materializes the dataset. Synthetic sources are generated with their
    /// spec seed replaced by `seed` so the run's global seed governs them.
    pub fn load(&self, seed: u64) -> Result<LabeledDataset> {
        match self {
            DataSource::Synthetic(s) => {
                let spec = reseed_spec(&s.spec, seed);
                data::generate(&spec).context("generating synthetic dataset")
            }
            DataSource::Rfd1(f) => LabeledDataset::load(&f.path)
                .with_context(|| format!("loading dataset {}", f.path.display())),
            DataSource::Idx(f) => {
                let images = data::load_idx(&f.images)
                    .with_context(|| format!("loading IDX images {}", f.images.display()))?;
                let labels = data::load_idx(&f.labels)
                    .with_context(|| format!("loading IDX labels {}", f.labels.display()))?;
                data::dataset_from_idx(&images, &labels).context("assembling IDX dataset")
            }
        }
    }

    /// Short description for reports.
    pub fn describe(&self) -> String {
        match self {
            DataSource::Synthetic(s) => format!("synthetic:{}", spec_kind(&s.spec)),
            DataSource::Rfd1(f) => format!("rfd1:{}", f.path.display()),
            DataSource::Idx(f) => format!("idx:{}", f.images.display()),
        }
    }
}

fn spec_kind(spec: &SyntheticSpec) -> &'static str {
    match spec {
        SyntheticSpec::TwoGaussian(_) => "two-gaussian",
        SyntheticSpec::RobustnessVsAccuracy(_) => "robustness-vs-accuracy",
        SyntheticSpec::MulticlassBlobs(_) => "multiclass-blobs",
        SyntheticSpec::ImageBlobs(_) => "image-blobs",
    }
}

/// Returns the spec with its embedded seed replaced.
pub fn reseed_spec(spec: &SyntheticSpec, seed: u64) -> SyntheticSpec {
    let mut spec = spec.clone();
    match &mut spec {
        SyntheticSpec::TwoGaussian(s) => s.seed = seed,
        SyntheticSpec::RobustnessVsAccuracy(s) => s.seed = seed,
        SyntheticSpec::MulticlassBlobs(s) => s.seed = seed,
        SyntheticSpec::ImageBlobs(s) => s.seed = seed,
    }
    spec
}

// ---------------------------------------------------------------------------
// theory
// ---------------------------------------------------------------------------

/// Config for the `theory` subcommand: the closed-form Gaussian suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    /// True mean μ*.
    pub mu_star: Vec<f64>,
    /// True covariance diagonal Σ* (positive entries).
    pub sigma_star: Vec<f64>,
    /// Adversarial budgets to fit at; may include 0 (no adversary).
    #[serde(default = "default_epsilon_grid")]
    pub epsilon_grid: Vec<f64>,
    /// Penalty weight C for the vulnerability gap; must exceed
    /// 1/σ_min(Σ*). Defaults to 3/σ_min(Σ*) when omitted.
    #[serde(default)]
    pub penalty_c: Option<f64>,
    /// Monte-Carlo sample count for the gap cross-check.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Sample count for the finite-sample standard MLE section.
    #[serde(default = "default_mle_samples")]
    pub mle_samples: usize,
    /// Dimensions for the distortion-concentration diagnostic.
    #[serde(default = "default_spread_dims")]
    pub spread_dims: Vec<usize>,
    /// Samples per dimension for the distortion diagnostic.
    #[serde(default = "default_spread_samples")]
    pub spread_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2]
}
fn default_mc_samples() -> usize {
    100_000
}
fn default_mle_samples() -> usize {
    20_000
}
fn default_spread_dims() -> Vec<usize> {
    vec![10, 100, 1000]
}
fn default_spread_samples() -> usize {
    2000
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

/// Directional thresholds checked by the `pipeline` subcommand.
///
/// Each threshold can be disabled with an explicit `null` (for example a
/// two-class task cannot beat 3x chance, and a task without a robust
/// feature that survives representation inversion cannot retain
/// robustness); omitted fields keep their defaults. The inversion
/// convergence check (final representation distance at most 10% of the
/// initial distance) is structural and always on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineChecks {
    /// Standard training must be this vulnerable (robust accuracy below).
    pub erm_robust_acc_max: Option<f64>,
    /// Adversarial training must reach at least this robust accuracy.
    pub adv_robust_acc_min: Option<f64>,
    /// Standard training on the robustified set must retain at least this
    /// fraction of the source robust model's robust accuracy.
    pub robust_data_retention_min: Option<f64>,
    /// The control set built from the standard model must stay vulnerable.
    pub nonrobust_control_robust_acc_max: Option<f64>,
    /// Relabeled-set models must beat chance on the original test set by
    /// this factor.
    pub relabeled_chance_multiplier_min: Option<f64>,
    /// The deterministic relabel from a robust source must score higher
    /// under the permuted label map than under the identity map.
    pub det_control_permuted_beats_identity: bool,
}

impl Default for PipelineChecks {
    fn default() -> Self {
        Self {
            erm_robust_acc_max: Some(0.20),
            adv_robust_acc_min: Some(0.95),
            robust_data_retention_min: Some(0.8),
            nonrobust_control_robust_acc_max: Some(0.05),
            relabeled_chance_multiplier_min: Some(3.0),
            det_control_permuted_beats_identity: true,
        }
    }
}

/// Config for the `pipeline` subcommand: the full dataset-surgery study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub train_data: DataSource,
    pub test_data: DataSource,
    /// Architecture for the source (standard and robust) models.
    pub source_arch: ArchitectureId,
    /// Architecture for models retrained on the derived datasets
    /// (defaults to `source_arch`).
    #[serde(default)]
    pub retrain_arch: Option<ArchitectureId>,
    /// Standard-training hyperparameters (also the retraining default).
    #[serde(default)]
    pub standard_train: TrainConfig,
    /// Adversarial-training hyperparameters; `attack` must be set.
    pub robust_train: TrainConfig,
    /// Evaluation attack for robust accuracies.
    pub eval_attack: AttackConfig,
    /// Representation-inversion parameters for the robustified sets.
    pub distill: DistillConfig,
    /// Targeted attack used to build the relabeled sets.
    pub relabel_attack: AttackConfig,
    /// Hyperparameters for retraining on derived datasets
    /// (defaults to `standard_train`).
    #[serde(default)]
    pub retrain: Option<TrainConfig>,
    /// Route image-like generated data through an IDX write/read round
    /// trip (quantizing pixels to bytes) before use.
    #[serde(default)]
    pub idx_roundtrip: bool,
    #[serde(default)]
    pub checks: PipelineChecks,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.robust_train.attack.is_none() {
            bail!("pipeline config: robust_train.attack must be set");
        }
        self.eval_attack.validate().context("pipeline config: eval_attack")?;
        self.relabel_attack.validate().context("pipeline config: relabel_attack")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Config for the `gen-data` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub spec: SyntheticSpec,
    /// Write the dataset in the native format (`dataset.rfd1`).
    #[serde(default = "default_true")]
    pub write_rfd1: bool,
    /// Also write IDX tensors (`images.idx`, `labels.idx`); requires
    /// image-like data (all values in [0, 1]) and quantizes to bytes.
    #[serde(default)]
    pub write_idx: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Config for the `train` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: DataSource,
    pub arch: ArchitectureId,
    #[serde(default)]
    pub train: TrainConfig,
    /// Optional held-out set; enables accuracy reporting.
    #[serde(default)]
    pub eval_data: Option<DataSource>,
    /// Optional untargeted attack; enables robust-accuracy reporting on the
    /// eval set.
    #[serde(default)]
    pub eval_attack: Option<AttackConfig>,
    /// Optional check: clean accuracy on the eval set must reach this.
    #[serde(default)]
    pub min_eval_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

/// Config for the `attack` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackCmdConfig {
    pub data: DataSource,
    /// Model checkpoint to attack (`.rfm1`).
    pub model: PathBuf,
    pub attack: AttackConfig,
    /// Optional ascending step grid; adds an accuracy-versus-steps curve
    /// and its monotonicity check.
    #[serde(default)]
    pub steps_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

/// Which derived dataset the `distill` subcommand builds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistillMode {
    /// Representation inversion against the given model.
    Robust(RobustDistillMode),
    /// Targeted relabeling toward random or deterministic targets.
    Nonrobust(NonrobustDistillMode),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustDistillMode {
    pub distill: DistillConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonrobustDistillMode {
    /// Targeted attack parameters (`mode` is forced to targeted).
    pub attack: AttackConfig,
    pub relabel: RelabelMode,
}

/// Config for the `distill` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillCmdConfig {
    pub data: DataSource,
    /// Reference model checkpoint (`.rfm1`).
    pub model: PathBuf,
    pub mode: DistillMode,
    #[serde(default)]
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

/// Config for the `transfer` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferCmdConfig {
    /// Training set for every architecture (typically a relabeled set).
    pub train_data: DataSource,
    /// Evaluation set for clean accuracy and the attack sweep (typically
    /// the original test set).
    pub eval_data: DataSource,
    /// At least two architectures; duplicates rejected.
    pub archs: Vec<ArchitectureId>,
    /// The architecture whose model generates the attacks; must appear in
    /// `archs`.
    pub source_arch: ArchitectureId,
    #[serde(default)]
    pub train: TrainConfig,
    pub attack: AttackConfig,
    /// Targeted transfer instead of untargeted.
    #[serde(default)]
    pub targeted: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TransferCmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.archs.len() < 2 {
            bail!("transfer config: need at least two architectures");
        }
        for (i, a) in self.archs.iter().enumerate() {
            if self.archs[..i].contains(a) {
                bail!("transfer config: duplicate architecture {}", a.name());
            }
        }
        if !self.archs.contains(&self.source_arch) {
            bail!(
                "transfer config: source_arch {} is not among archs",
                self.source_arch.name()
            );
        }
        self.attack.validate().context("transfer config: attack")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Config for the `eval` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub data: DataSource,
    /// Model checkpoints to evaluate (at least one).
    pub models: Vec<PathBuf>,
    /// Label maps to score against.
    #[serde(default = "default_label_maps")]
    pub label_maps: Vec<LabelMap>,
    /// Optional untargeted attack; adds robust accuracy per model.
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    /// Optional check: every model's identity-map accuracy must reach this.
    #[serde(default)]
    pub min_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_label_maps() -> Vec<LabelMap> {
    vec![LabelMap::Identity]
}

impl EvalCmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            bail!("eval config: need at least one model");
        }
        if self.label_maps.is_empty() {
            bail!("eval config: need at least one label map");
        }
        Ok(())
    }
}

impl_seeded!(
    TheoryConfig,
    PipelineConfig,
    GenDataConfig,
    TrainCmdConfig,
    AttackCmdConfig,
    DistillCmdConfig,
    TransferCmdConfig,
    EvalCmdConfig
);
