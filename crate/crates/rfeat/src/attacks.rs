//! L2 projected gradient descent attacks and robust-accuracy evaluation.
//!
//! One attack loop serves four variants, selected by [`AttackMode`] and
//! [`AttackLoss`]: untargeted/targeted, cross-entropy/margin. Every step
//! moves exactly `step_size` in L2 along the normalized gradient, projects
//! back onto the epsilon ball around the clean input, and (for image-like
//! data) clips coordinates to `[0, 1]`; iterates with an exactly zero
//! gradient are kept unchanged and the loop continues. PGD starts from the
//! clean input unless `random_start` is set.
//!
//! The margin variants use the loss `max(Z_y - max_{j != y} Z_j, -kappa)`
//! with `kappa = 0`: once the clamp is active (the sample is already
//! misclassified, or the target already wins) the gradient is zero and the
//! iterate stays put.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{class_margin, grad_input, LossKind, Model};
use crate::numerics::{self, Vec64};
use crate::rng::RngStream;

/// Attack direction: break the true label or hit a chosen target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    Untargeted,
    Targeted,
}

/// Loss maximized (untargeted) or minimized (targeted) by the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackLoss {
    CrossEntropy,
    Margin,
}

fn default_mode() -> AttackMode {
    AttackMode::Untargeted
}

fn default_loss() -> AttackLoss {
    AttackLoss::CrossEntropy
}

/// Projected-gradient-descent attack parameters (L2 geometry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// L2 perturbation budget (must be positive).
    pub epsilon: f64,
    /// L2 distance moved per step; zero is allowed and degenerates to a
    /// no-op attack.
    pub step_size: f64,
    /// Number of PGD steps (at least 1).
    pub steps: usize,
    #[serde(default = "default_mode")]
    pub mode: AttackMode,
    #[serde(default = "default_loss")]
    pub loss: AttackLoss,
    /// Clip iterates to `[0, 1]` after each step (image-like data).
    #[serde(default)]
    pub clip01: bool,
    /// Start from a uniform point in the epsilon ball instead of the input.
    #[serde(default)]
    pub random_start: bool,
}

impl AttackConfig {
    /// The standard recipe for a budget: 7 steps of `epsilon / 5`,
    /// untargeted cross-entropy, no clipping.
    pub fn for_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            step_size: epsilon / 5.0,
            steps: 7,
            mode: AttackMode::Untargeted,
            loss: AttackLoss::CrossEntropy,
            clip01: false,
            random_start: false,
        }
    }

    /// Checks the config invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::NonPositive { what: "attack epsilon", value: self.epsilon });
        }
        if self.step_size < 0.0 || !self.step_size.is_finite() {
            return Err(Error::NonPositive { what: "attack step_size", value: self.step_size });
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("attack steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ascent direction maximizing the attack objective at `x`, or `None` when
/// the gradient is exactly zero (saturated loss or active margin clamp).
fn attack_gradient(
    model: &Model,
    x: &[f64],
    label_or_target: u32,
    cfg: &AttackConfig,
) -> Result<Option<Vec64>> {
    let grad = match (cfg.mode, cfg.loss) {
        (AttackMode::Untargeted, AttackLoss::CrossEntropy) => {
            grad_input(model, x, LossKind::CrossEntropy, label_or_target)?
        }
        (AttackMode::Targeted, AttackLoss::CrossEntropy) => {
            let mut g = grad_input(model, x, LossKind::CrossEntropy, label_or_target)?;
            numerics::scale(&mut g, -1.0);
            g
        }
        (AttackMode::Untargeted, AttackLoss::Margin) => {
            // Minimize max(margin(y), 0): stop once the label strictly
            // loses (at margin exactly 0 we keep the subgradient and push
            // through the kink, since argmax ties resolve to the clean
            // class).
            let logits = model.forward(x)?;
            if class_margin(&logits, label_or_target) < 0.0 {
                return Ok(None);
            }
            let mut g = grad_input(model, x, LossKind::Margin, label_or_target)?;
            numerics::scale(&mut g, -1.0);
            g
        }
        (AttackMode::Targeted, AttackLoss::Margin) => {
            // Maximize min(margin(t), 0): stop once the target strictly wins.
            let logits = model.forward(x)?;
            if class_margin(&logits, label_or_target) > 0.0 {
                return Ok(None);
            }
            grad_input(model, x, LossKind::Margin, label_or_target)?
        }
    };
    if numerics::norm2(&grad) == 0.0 {
        return Ok(None);
    }
    Ok(Some(grad))
}

/// Runs the PGD attack from `x`, returning an adversarial input inside the
/// L2 ball of radius `cfg.epsilon` around `x` (and inside `[0, 1]` when
/// `cfg.clip01`).
///
/// `label_or_target` is the true label for untargeted mode and the desired
/// class for targeted mode. `rng` is consumed only when
/// `cfg.random_start` is set; identical `(model, x, cfg, rng)` always yields
/// bit-identical output.
pub fn pgd_l2(
    model: &Model,
    x: &[f64],
    label_or_target: u32,
    cfg: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Vec64> {
    cfg.validate()?;
    if label_or_target >= model.class_count() {
        return Err(Error::LabelOutOfRange { label: label_or_target, classes: model.class_count() });
    }
    if x.len() != model.input_dim() {
        return Err(Error::DimMismatch { what: "attack input", expected: model.input_dim(), got: x.len() });
    }
    if cfg.clip01 && !x.iter().all(|&v| (0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidConfig("clip01 attack requires inputs in [0, 1]".into()));
    }
    let mut current = x.to_vec();
    if cfg.random_start {
        // Uniform point in the epsilon ball: random direction, radius
        // epsilon * u^(1/d).
        let dir = rng.unit_vector(x.len());
        let radius = cfg.epsilon * rng.uniform().powf(1.0 / x.len() as f64);
        numerics::axpy(radius, &dir, &mut current);
        if cfg.clip01 {
            numerics::clamp01(&mut current);
        }
    }
    for _ in 0..cfg.steps {
        let Some(grad) = attack_gradient(model, &current, label_or_target, cfg)? else {
            continue;
        };
        let norm = numerics::norm2(&grad);
        numerics::axpy(cfg.step_size / norm, &grad, &mut current);
        current = numerics::l2_project(&current, x, cfg.epsilon);
        if cfg.clip01 {
            numerics::clamp01(&mut current);
        }
    }
    Ok(current)
}

/// One row of an attack evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub sample_index: usize,
    pub clean_label: u32,
    pub adv_label: u32,
    pub l2_dist: f64,
    /// Untargeted: the adversarial input is misclassified. Targeted: it is
    /// classified as the attack target.
    pub success: bool,
}

/// Attacks every sample of a dataset and reports per-sample records.
///
/// Targeted mode aims each sample at `(label + 1) mod class_count`. `rng`
/// seeds per-sample substreams (used only with `random_start`).
pub fn evaluate_attack(
    model: &Model,
    ds: &LabeledDataset,
    cfg: &AttackConfig,
    rng: &RngStream,
) -> Result<Vec<AttackRecord>> {
    cfg.validate()?;
    if ds.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    numerics::parallel::try_indexed_map(ds.n(), |i| {
        let clean_label = ds.label(i);
        let target = match cfg.mode {
            AttackMode::Untargeted => clean_label,
            AttackMode::Targeted => (clean_label + 1) % ds.class_count(),
        };
        let mut sample_rng = rng.substream(i as u64);
        let adv = pgd_l2(model, ds.row(i), target, cfg, &mut sample_rng)?;
        let adv_label = model.predict(&adv)?;
        let success = match cfg.mode {
            AttackMode::Untargeted => adv_label != clean_label,
            AttackMode::Targeted => adv_label == target,
        };
        Ok(AttackRecord {
            sample_index: i,
            clean_label,
            adv_label,
            l2_dist: numerics::dist2(&adv, ds.row(i)),
            success,
        })
    })
}

/// Stream key for the internal RNG of [`robust_accuracy`]; only consumed
/// when the config requests random starts.
const ROBUST_ACCURACY_STREAM: u64 = 1;

/// Fraction of samples still classified correctly after an untargeted PGD
/// attack.
pub fn robust_accuracy(model: &Model, ds: &LabeledDataset, cfg: &AttackConfig) -> Result<f64> {
    if cfg.mode != AttackMode::Untargeted {
        return Err(Error::InvalidConfig("robust_accuracy requires an untargeted attack".into()));
    }
    let records = evaluate_attack(model, ds, cfg, &RngStream::new(0, ROBUST_ACCURACY_STREAM))?;
    let correct = records.iter().filter(|r| !r.success).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Robust accuracy per step count over an ascending grid.
pub fn accuracy_vs_steps(
    model: &Model,
    ds: &LabeledDataset,
    cfg: &AttackConfig,
    step_grid: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if step_grid.is_empty() {
        return Err(Error::InvalidConfig("step grid must be nonempty".into()));
    }
    if !step_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig("step grid must be strictly ascending".into()));
    }
    step_grid
        .iter()
        .map(|&steps| {
            let point = AttackConfig { steps, ..cfg.clone() };
            Ok((steps, robust_accuracy(model, ds, &point)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_gaussian, label_sign, TwoGaussianSpec};
    use crate::models::{ArchitectureId, Layer};

    fn linear_binary(w0: [f64; 2], w1: [f64; 2], b: [f64; 2]) -> Model {
        let layer = Layer::new(vec![w0[0], w0[1], w1[0], w1[1]], vec![b[0], b[1]], 2, 2).unwrap();
        Model::from_parts(ArchitectureId::Linear, 2, 2, vec![layer]).unwrap()
    }

    fn mlp(seed: u64, input_dim: usize, classes: u32) -> Model {
        let mut rng = RngStream::new(seed, 0);
        Model::init(ArchitectureId::Mlp32, input_dim, classes, &mut rng).unwrap()
    }

    fn gaussian_ds(n: usize, seed: u64) -> LabeledDataset {
        gen_two_gaussian(&TwoGaussianSpec {
            dim: 2,
            n,
            mu_star: vec![1.5, 0.5],
            sigma_star: vec![0.4, 0.4],
            seed,
        })
        .unwrap()
    }

    #[test]
    fn one_step_matches_linear_closed_form() {
        let model = linear_binary([0.7, -0.3], [-0.1, 0.9], [0.2, -0.5]);
        let w_eff = [-0.8, 1.2];
        let w_norm = numerics::norm2(&w_eff);
        let mut rng = RngStream::new(0, 0);
        for (label, y) in [(0u32, -1.0), (1u32, 1.0)] {
            let x = [0.3, -0.6];
            let cfg = AttackConfig { steps: 1, step_size: 0.5, ..AttackConfig::for_epsilon(0.5) };
            let adv = pgd_l2(&model, &x, label, &cfg, &mut rng).unwrap();
            for j in 0..2 {
                let expect = x[j] - 0.5 * y * w_eff[j] / w_norm;
                assert!((adv[j] - expect).abs() < 1e-10, "{adv:?}");
            }
        }
    }

    #[test]
    fn budget_and_box_feasibility() {
        let model = mlp(5, 4, 3);
        let mut rng = RngStream::new(9, 0);
        for trial in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
            let cfg = AttackConfig {
                clip01: trial % 2 == 0,
                random_start: trial % 3 == 0,
                steps: 10,
                ..AttackConfig::for_epsilon(0.3)
            };
            let mut attack_rng = RngStream::new(trial, 4);
            let adv = pgd_l2(&model, &x, (trial % 3) as u32, &cfg, &mut attack_rng).unwrap();
            assert!(numerics::dist2(&adv, &x) <= cfg.epsilon + 1e-9);
            if cfg.clip01 {
                assert!(adv.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn single_step_moves_exactly_step_size() {
        let model = mlp(6, 3, 2);
        let x = [0.2, -0.4, 0.8];
        let cfg = AttackConfig { steps: 1, step_size: 0.05, ..AttackConfig::for_epsilon(1.0) };
        let mut rng = RngStream::new(0, 0);
        let adv = pgd_l2(&model, &x, 0, &cfg, &mut rng).unwrap();
        assert!((numerics::dist2(&adv, &x) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_step_size_returns_input() {
        let model = mlp(7, 3, 2);
        let x = [0.1, 0.2, 0.3];
        let cfg = AttackConfig { steps: 1, step_size: 0.0, ..AttackConfig::for_epsilon(0.5) };
        let mut rng = RngStream::new(0, 0);
        assert_eq!(pgd_l2(&model, &x, 1, &cfg, &mut rng).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_epsilon_rejected() {
        let cfg = AttackConfig { epsilon: 0.0, ..AttackConfig::for_epsilon(1.0) };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn saturated_gradient_keeps_iterate() {
        // Margin 1000 underflows the softmax tail to exactly zero in f64.
        let model = linear_binary([500.0, 0.0], [-500.0, 0.0], [0.0, 0.0]);
        let x = [1.0, 0.25];
        let cfg = AttackConfig { steps: 3, ..AttackConfig::for_epsilon(0.1) };
        let mut rng = RngStream::new(0, 0);
        // Cross-entropy at this point is saturated to exactly zero gradient.
        let adv = pgd_l2(&model, &x, 0, &cfg, &mut rng).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn targeted_margin_stops_once_target_wins() {
        let model = linear_binary([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        let x = [0.5, 0.0]; // already classified as class 0
        let cfg = AttackConfig {
            mode: AttackMode::Targeted,
            loss: AttackLoss::Margin,
            ..AttackConfig::for_epsilon(0.2)
        };
        let mut rng = RngStream::new(0, 0);
        let adv = pgd_l2(&model, &x, 0, &cfg, &mut rng).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn untargeted_margin_flips_linear_label() {
        let model = linear_binary([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        let x = [0.1, 0.0];
        let cfg = AttackConfig {
            loss: AttackLoss::Margin,
            steps: 10,
            step_size: 0.1,
            ..AttackConfig::for_epsilon(0.5)
        };
        let mut rng = RngStream::new(0, 0);
        let adv = pgd_l2(&model, &x, 0, &cfg, &mut rng).unwrap();
        assert_eq!(model.predict(&adv).unwrap(), 1);
    }

    #[test]
    fn tiny_epsilon_equals_clean_accuracy() {
        let ds = gaussian_ds(200, 3);
        let model = mlp(11, 2, 2);
        let clean = (0..ds.n())
            .filter(|&i| model.predict(ds.row(i)).unwrap() == ds.label(i))
            .count() as f64
            / ds.n() as f64;
        let cfg = AttackConfig::for_epsilon(1e-9);
        assert_eq!(robust_accuracy(&model, &ds, &cfg).unwrap(), clean);
    }

    #[test]
    fn robust_accuracy_at_most_clean() {
        let ds = gaussian_ds(200, 4);
        let model = mlp(13, 2, 2);
        let clean = (0..ds.n())
            .filter(|&i| model.predict(ds.row(i)).unwrap() == ds.label(i))
            .count() as f64
            / ds.n() as f64;
        let robust = robust_accuracy(&model, &ds, &AttackConfig::for_epsilon(0.5)).unwrap();
        assert!(robust <= clean);
    }

    #[test]
    fn attack_is_deterministic() {
        let model = mlp(17, 2, 2);
        let ds = gaussian_ds(32, 5);
        let cfg = AttackConfig { random_start: true, ..AttackConfig::for_epsilon(0.4) };
        let root = RngStream::new(21, 1);
        let a = evaluate_attack(&model, &ds, &cfg, &root).unwrap();
        let b = evaluate_attack(&model, &ds, &cfg, &root).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn targeted_attack_records_hit_target() {
        // Strongly separated data and a confident model: targeted attacks
        // within a generous budget reach the (y+1) mod 2 class.
        let model = linear_binary([1.0, 0.5], [-1.0, -0.5], [0.0, 0.0]);
        let ds = gaussian_ds(64, 6);
        let cfg = AttackConfig {
            mode: AttackMode::Targeted,
            steps: 30,
            step_size: 0.5,
            ..AttackConfig::for_epsilon(6.0)
        };
        let records = evaluate_attack(&model, &ds, &cfg, &RngStream::new(0, 0)).unwrap();
        let hits = records.iter().filter(|r| r.success).count();
        assert!(hits as f64 / records.len() as f64 > 0.9, "{hits}/{}", records.len());
        for r in &records {
            if r.success {
                assert_eq!(r.adv_label, (r.clean_label + 1) % 2);
            }
        }
    }

    #[test]
    fn step_grid_validation_and_consistency() {
        let model = mlp(19, 2, 2);
        let ds = gaussian_ds(64, 7);
        let cfg = AttackConfig::for_epsilon(0.3);
        assert!(accuracy_vs_steps(&model, &ds, &cfg, &[]).is_err());
        assert!(accuracy_vs_steps(&model, &ds, &cfg, &[5, 5]).is_err());
        assert!(accuracy_vs_steps(&model, &ds, &cfg, &[5, 1]).is_err());
        let curve = accuracy_vs_steps(&model, &ds, &cfg, &[7]).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].1, robust_accuracy(&model, &ds, &cfg).unwrap());
    }

    #[test]
    fn flippable_coordinate_matches_construction() {
        // On the robustness-vs-accuracy construction, the non-robust
        // coordinate flip delta = (0, -y * eps) stays inside the eps ball.
        let eps = 0.5f64;
        let ds = crate::data::gen_robustness_vs_accuracy(&crate::data::RobustnessVsAccuracySpec {
            n: 16,
            epsilon_design: eps,
            seed: 8,
        })
        .unwrap();
        for i in 0..ds.n() {
            let y = label_sign(ds.label(i));
            let delta = [0.0, -y * eps];
            assert!(numerics::norm2(&delta) <= eps + 1e-12);
            let flipped = ds.row(i)[1] + delta[1];
            assert_eq!(flipped, -y * eps / 2.0);
        }
    }
}
