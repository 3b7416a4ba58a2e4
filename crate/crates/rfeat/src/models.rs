//! Small differentiable classifiers with standard and adversarial training.
//!
//! The registry is a closed set of five architectures: a linear model and
//! four fully connected networks. All models end in a linear layer producing
//! one logit per class (binary tasks use 2 logits) and are trained with
//! softmax cross-entropy by minibatch gradient descent with momentum.
//!
//! The *representation* of an input is the activation vector feeding the
//! final linear layer. For the linear architecture that penultimate layer is
//! the input itself, so representation matching degenerates to input
//! matching there.
//!
//! Training can standardize inputs (per-coordinate mean/variance fitted on
//! the training set). The standardization is folded into the first layer's
//! weights before the model is returned, so a trained [`Model`] always
//! consumes raw inputs; adversarial training likewise generates its
//! perturbations in raw input space.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::attacks::{pgd_l2, AttackConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{self, Vec64};
use crate::rng::RngStream;

/// Magic bytes that open an RFM1 checkpoint file.
const RFM1_MAGIC: &[u8; 4] = b"RFM1";

/// Hidden-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// The closed registry of model architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchitectureId {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "mlp-32")]
    Mlp32,
    #[serde(rename = "mlp-64x64")]
    Mlp64x64,
    #[serde(rename = "mlp-128")]
    Mlp128,
    #[serde(rename = "mlp-64x64-tanh")]
    Mlp64x64Tanh,
}

impl ArchitectureId {
    /// All registered architectures, in id order.
    pub const ALL: [ArchitectureId; 5] = [
        ArchitectureId::Linear,
        ArchitectureId::Mlp32,
        ArchitectureId::Mlp64x64,
        ArchitectureId::Mlp128,
        ArchitectureId::Mlp64x64Tanh,
    ];

    /// Hidden layer widths (empty for the linear model).
    pub fn hidden_dims(self) -> &'static [usize] {
        match self {
            ArchitectureId::Linear => &[],
            ArchitectureId::Mlp32 => &[32],
            ArchitectureId::Mlp64x64 | ArchitectureId::Mlp64x64Tanh => &[64, 64],
            ArchitectureId::Mlp128 => &[128],
        }
    }

    /// Hidden-layer activation.
    pub fn activation(self) -> Activation {
        match self {
            ArchitectureId::Mlp64x64Tanh => Activation::Tanh,
            _ => Activation::Relu,
        }
    }

    /// Stable numeric id used in the checkpoint header.
    pub fn code(self) -> u32 {
        match self {
            ArchitectureId::Linear => 0,
            ArchitectureId::Mlp32 => 1,
            ArchitectureId::Mlp64x64 => 2,
            ArchitectureId::Mlp128 => 3,
            ArchitectureId::Mlp64x64Tanh => 4,
        }
    }

    /// Inverse of [`ArchitectureId::code`].
    pub fn from_code(code: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown architecture code {code}")))
    }

    /// Kebab-case name, matching the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            ArchitectureId::Linear => "linear",
            ArchitectureId::Mlp32 => "mlp-32",
            ArchitectureId::Mlp64x64 => "mlp-64x64",
            ArchitectureId::Mlp128 => "mlp-128",
            ArchitectureId::Mlp64x64Tanh => "mlp-64x64-tanh",
        }
    }
}

impl std::fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown architecture {s:?}")))
    }
}

/// One affine layer: `out_dim x in_dim` row-major weights plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    w: Vec64,
    b: Vec64,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    /// Builds a layer from row-major weights and a bias vector.
    pub fn new(w: Vec64, b: Vec64, in_dim: usize, out_dim: usize) -> Result<Self> {
        if w.len() != in_dim * out_dim {
            return Err(Error::DimMismatch { what: "layer weights", expected: in_dim * out_dim, got: w.len() });
        }
        if b.len() != out_dim {
            return Err(Error::DimMismatch { what: "layer bias", expected: out_dim, got: b.len() });
        }
        if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "layer parameters" });
        }
        Ok(Self { w, b, in_dim, out_dim })
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim], in_dim, out_dim }
    }

    /// Input width.
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Output width.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Row `o` of the weight matrix.
    pub fn row(&self, o: usize) -> &[f64] {
        &self.w[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// Bias vector.
    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    /// `z = W x + b`.
    fn affine(&self, x: &[f64]) -> Vec64 {
        let mut z = self.b.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            *zo += numerics::dot(self.row(o), x);
        }
        z
    }

    /// Accumulates `Wᵀ dz` into a fresh vector.
    fn backprop_input(&self, dz: &[f64]) -> Vec64 {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dz.iter().enumerate() {
            numerics::axpy(g, self.row(o), &mut dx);
        }
        dx
    }
}

/// A feed-forward classifier from the closed architecture registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ArchitectureId,
    input_dim: usize,
    class_count: u32,
    layers: Vec<Layer>,
}

impl Model {
    /// Expected per-layer `(in, out)` dims for an architecture.
    fn expected_dims(arch: ArchitectureId, input_dim: usize, class_count: u32) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = input_dim;
        for &h in arch.hidden_dims() {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, class_count as usize));
        dims
    }

    /// Assembles a model from explicit layers, validating the dimension
    /// chain against the architecture's fixed specification.
    pub fn from_parts(
        arch: ArchitectureId,
        input_dim: usize,
        class_count: u32,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("model input_dim must be at least 1".into()));
        }
        if class_count < 2 {
            return Err(Error::InvalidConfig("model class_count must be at least 2".into()));
        }
        let expected = Self::expected_dims(arch, input_dim, class_count);
        if layers.len() != expected.len() {
            return Err(Error::DimMismatch { what: "model layers", expected: expected.len(), got: layers.len() });
        }
        for (layer, &(in_dim, out_dim)) in layers.iter().zip(&expected) {
            if layer.in_dim != in_dim || layer.out_dim != out_dim {
                return Err(Error::DimMismatch { what: "layer shape", expected: in_dim * out_dim, got: layer.in_dim * layer.out_dim });
            }
        }
        Ok(Self { arch, input_dim, class_count, layers })
    }

    /// Fresh model with symmetric uniform fan-in-scaled weights and zero
    /// biases, drawn deterministically from `rng`.
    pub fn init(
        arch: ArchitectureId,
        input_dim: usize,
        class_count: u32,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("model input_dim must be at least 1".into()));
        }
        if class_count < 2 {
            return Err(Error::InvalidConfig("model class_count must be at least 2".into()));
        }
        let mut layers = Vec::new();
        for (in_dim, out_dim) in Self::expected_dims(arch, input_dim, class_count) {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w: Vec64 = (0..in_dim * out_dim).map(|_| rng.uniform_in(-bound, bound)).collect();
            layers.push(Layer::new(w, vec![0.0; out_dim], in_dim, out_dim)?);
        }
        Self::from_parts(arch, input_dim, class_count, layers)
    }

    /// Architecture id.
    pub fn arch(&self) -> ArchitectureId {
        self.arch
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of classes (= number of logits).
    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    /// Layers, input side first.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Width of the representation (penultimate activation; the input for
    /// the linear architecture).
    pub fn representation_dim(&self) -> usize {
        self.layers.last().expect("models have at least one layer").in_dim
    }

    /// For a 2-class model, the effective decision direction
    /// `w(class 1) - w(class 0)` of the final layer, pulled back to the
    /// representation space.
    pub fn binary_decision_direction(&self) -> Result<Vec64> {
        if self.class_count != 2 {
            return Err(Error::InvalidConfig("decision direction requires a 2-class model".into()));
        }
        let last = self.layers.last().expect("nonempty");
        Ok(numerics::sub(last.row(1), last.row(0)))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch { what: "model input", expected: self.input_dim, got: x.len() });
        }
        Ok(())
    }

    /// Runs the network, recording every layer's activation output.
    ///
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s
    /// output (post-activation for hidden layers, raw logits for the last).
    fn forward_cache(&self, x: &[f64]) -> Result<Vec<Vec64>> {
        self.check_input(x)?;
        let act = self.arch.activation();
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(activations.last().expect("nonempty"));
            if l != last {
                for v in &mut z {
                    *v = act.apply(*v);
                }
            }
            activations.push(z);
        }
        Ok(activations)
    }

    /// Class logits for an input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec64> {
        Ok(self.forward_cache(x)?.pop().expect("nonempty"))
    }

    /// Activations of the layer feeding the final linear layer (the raw
    /// input for the linear architecture).
    pub fn representation(&self, x: &[f64]) -> Result<Vec64> {
        let mut cache = self.forward_cache(x)?;
        cache.pop();
        Ok(cache.pop().expect("nonempty"))
    }

    /// Predicted class: argmax of the logits, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        let logits = self.forward(x)?;
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best as u32)
    }

    /// Backpropagates a logit gradient to the input.
    fn backprop_to_input(&self, activations: &[Vec64], dlogits: Vec64) -> Vec64 {
        let act = self.arch.activation();
        let mut dz = dlogits;
        for l in (0..self.layers.len()).rev() {
            let mut da = self.layers[l].backprop_input(&dz);
            if l > 0 {
                for (g, &a) in da.iter_mut().zip(&activations[l]) {
                    *g *= act.derivative_from_output(a);
                }
            }
            dz = da;
        }
        dz
    }

    /// Backpropagates a logit gradient to all parameters.
    fn backprop_to_params(&self, activations: &[Vec64], dlogits: Vec64) -> Vec<Layer> {
        let act = self.arch.activation();
        let mut grads: Vec<Layer> =
            self.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect();
        let mut dz = dlogits;
        for l in (0..self.layers.len()).rev() {
            let input = &activations[l];
            let g = &mut grads[l];
            for (o, &gz) in dz.iter().enumerate() {
                g.b[o] = gz;
                let row = &mut g.w[o * g.in_dim..(o + 1) * g.in_dim];
                for (wg, &a) in row.iter_mut().zip(input.iter()) {
                    *wg = gz * a;
                }
            }
            if l > 0 {
                let mut da = self.layers[l].backprop_input(&dz);
                for (gr, &a) in da.iter_mut().zip(&activations[l]) {
                    *gr *= act.derivative_from_output(a);
                }
                dz = da;
            }
        }
        grads
    }

    /// Serializes the model to the RFM1 byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(RFM1_MAGIC);
        out.extend_from_slice(&self.arch.code().to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.class_count.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for &v in layer.w.iter().chain(layer.b.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a model from RFM1 bytes, rejecting malformed or trailing data.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, count: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(count)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Format("truncated RFM1 file".into()))?;
            let slice = &bytes[*pos..end];
            *pos = end;
            Ok(slice)
        };
        let u32_le = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().expect("length checked")))
        };
        let magic = take(&mut pos, 4)?;
        if magic != RFM1_MAGIC {
            return Err(Error::Format(format!("bad RFM1 magic {magic:02x?}")));
        }
        let arch = ArchitectureId::from_code(u32_le(&mut pos)?)?;
        let input_dim = u32_le(&mut pos)? as usize;
        let class_count = u32_le(&mut pos)?;
        let layer_count = u32_le(&mut pos)? as usize;
        let mut dims = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let in_dim = u32_le(&mut pos)? as usize;
            let out_dim = u32_le(&mut pos)? as usize;
            dims.push((in_dim, out_dim));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for (in_dim, out_dim) in dims {
            let count = in_dim
                .checked_mul(out_dim)
                .and_then(|c| c.checked_add(out_dim))
                .ok_or_else(|| Error::Format("RFM1 layer dims overflow".into()))?;
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let raw = take(&mut pos, 8)?;
                values.push(f64::from_le_bytes(raw.try_into().expect("length checked")));
            }
            let b = values.split_off(in_dim * out_dim);
            layers.push(Layer::new(values, b, in_dim, out_dim)?);
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "trailing data: {} unread bytes after RFM1 parse",
                bytes.len() - pos
            )));
        }
        Self::from_parts(arch, input_dim, class_count, layers)
    }

    /// Writes the model to `path` in the RFM1 format.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Reads an RFM1 model from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 digest of the serialized model.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write as _;
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// Loss functions whose input gradient [`grad_input`] can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy against the given class.
    CrossEntropy,
    /// Raw class margin `Z_c - max_{j != c} Z_j`. Attack-side clamping (the
    /// `-kappa` cutoff) is applied by callers, which know the attack mode.
    Margin,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec64 = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = numerics::sum(&out);
    numerics::scale(&mut out, 1.0 / total);
    out
}

/// Softmax cross-entropy `logsumexp(z) - z_target`.
pub fn cross_entropy(logits: &[f64], target: u32) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target as usize]
}

/// Class margin `Z_c - max_{j != c} Z_j` (positive iff `c` wins).
pub fn class_margin(logits: &[f64], c: u32) -> f64 {
    let c = c as usize;
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != c)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[c] - other
}

fn check_label(model: &Model, label: u32) -> Result<()> {
    if label >= model.class_count {
        return Err(Error::LabelOutOfRange { label, classes: model.class_count });
    }
    Ok(())
}

fn loss_dlogits(logits: &[f64], loss: LossKind, target: u32) -> Vec64 {
    match loss {
        LossKind::CrossEntropy => {
            let mut d = softmax(logits);
            d[target as usize] -= 1.0;
            d
        }
        LossKind::Margin => {
            let c = target as usize;
            let mut best = usize::MAX;
            for (j, &v) in logits.iter().enumerate() {
                if j != c && (best == usize::MAX || v > logits[best]) {
                    best = j;
                }
            }
            let mut d = vec![0.0; logits.len()];
            d[c] = 1.0;
            d[best] = -1.0;
            d
        }
    }
}

/// Gradient of the chosen loss at `(x, target)` with respect to the input,
/// by reverse-mode accumulation.
pub fn grad_input(model: &Model, x: &[f64], loss: LossKind, target: u32) -> Result<Vec64> {
    check_label(model, target)?;
    let activations = model.forward_cache(x)?;
    let logits = activations.last().expect("nonempty");
    let dlogits = loss_dlogits(logits, loss, target);
    Ok(model.backprop_to_input(&activations, dlogits))
}

/// Representation distance `‖g(x) - rep_target‖₂` and its gradient in `x`.
///
/// At distance exactly zero the gradient is the zero vector (the objective
/// is non-differentiable there, and zero is the natural subgradient for a
/// descent method that has already converged).
pub fn representation_distance_grad(
    model: &Model,
    x: &[f64],
    rep_target: &[f64],
) -> Result<(f64, Vec64)> {
    if rep_target.len() != model.representation_dim() {
        return Err(Error::DimMismatch {
            what: "representation target",
            expected: model.representation_dim(),
            got: rep_target.len(),
        });
    }
    let mut activations = model.forward_cache(x)?;
    activations.pop();
    let rep = activations.last().expect("nonempty");
    let diff = numerics::sub(rep, rep_target);
    let dist = numerics::norm2(&diff);
    if dist == 0.0 {
        return Ok((0.0, vec![0.0; model.input_dim]));
    }
    if model.layers.len() == 1 {
        // Linear architecture: the representation is the input itself.
        let mut grad = diff;
        numerics::scale(&mut grad, 1.0 / dist);
        return Ok((dist, grad));
    }
    // Chain rule through the hidden stack only: d/dx ‖a_{L-1} - t‖ with
    // da_{L-1} = diff / dist, then the activation derivative of the last
    // hidden layer before walking down the remaining layers.
    let act = model.arch.activation();
    let top = model.layers.len() - 2;
    let mut dz: Vec64 = diff
        .iter()
        .zip(activations.last().expect("nonempty"))
        .map(|(&g, &a)| g / dist * act.derivative_from_output(a))
        .collect();
    for l in (0..=top).rev() {
        let mut da = model.layers[l].backprop_input(&dz);
        if l > 0 {
            for (g, &a) in da.iter_mut().zip(&activations[l]) {
                *g *= act.derivative_from_output(a);
            }
        }
        dz = da;
    }
    Ok((dist, dz))
}

/// Training hyperparameters.
///
/// `attack: Some(..)` switches on adversarial training: every batch example
/// is replaced by its PGD perturbation (computed against the current model
/// in raw input space) before the gradient step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// L1 penalty on weights, applied as a proximal soft-threshold step
    /// after each update. Unlike `weight_decay` it drives weights the data
    /// does not keep re-earning to exactly zero, so a model can be made
    /// genuinely blind to coordinates that only ever offer marginal loss
    /// reductions.
    pub l1: f64,
    pub momentum: f64,
    /// Standardize inputs on training-set statistics; the affine map is
    /// folded into the first layer of the returned model.
    pub input_norm: bool,
    pub attack: Option<AttackConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            weight_decay: 0.0,
            l1: 0.0,
            momentum: 0.9,
            input_norm: true,
            attack: None,
        }
    }
}

/// A trained model plus its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub loss_curve: Vec64,
}

/// Per-coordinate standardization statistics fitted on a training set.
struct Standardizer {
    mean: Vec64,
    scale: Vec64,
}

impl Standardizer {
    fn fit(ds: &LabeledDataset) -> Self {
        let d = ds.dim();
        let n = ds.n() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..ds.n() {
            numerics::axpy(1.0 / n, ds.row(i), &mut mean);
        }
        let mut var = vec![0.0; d];
        for i in 0..ds.n() {
            for (j, (&x, &m)) in ds.row(i).iter().zip(&mean).enumerate() {
                var[j] += (x - m) * (x - m) / n;
            }
        }
        // Near-constant coordinates keep unit scale: centering already maps
        // them to ~0 and dividing by a vanishing deviation would explode.
        let scale = var.iter().map(|&v| if v.sqrt() < 1e-8 { 1.0 } else { v.sqrt() }).collect();
        Self { mean, scale }
    }

    fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    fn apply(&self, x: &[f64]) -> Vec64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect()
    }

    /// Rewrites the first layer so the model consumes raw inputs:
    /// `W z + b` with `z = (x - m) / s` equals `W' x + b'` where
    /// `W' = W diag(1/s)` and `b' = b - W (m / s)`.
    fn fold_into(&self, mut model: Model) -> Model {
        {
            let first = &mut model.layers[0];
            for o in 0..first.out_dim {
                let row = &mut first.w[o * first.in_dim..(o + 1) * first.in_dim];
                let mut shift = 0.0;
                for ((w, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                    shift += *w * m / s;
                    *w /= s;
                }
                first.b[o] -= shift;
            }
        }
        model
    }
}

/// Per-sample loss and parameter gradients, averaged over a batch in index
/// order (so the reduction is identical however the map was scheduled).
fn batch_loss_and_grads(
    model: &Model,
    examples: &[(Vec64, u32)],
) -> Result<(f64, Vec<Layer>)> {
    let per_sample = numerics::parallel::try_indexed_map(examples.len(), |i| {
        let (x, y) = &examples[i];
        let activations = model.forward_cache(x)?;
        let logits = activations.last().expect("nonempty");
        let loss = cross_entropy(logits, *y);
        let dlogits = loss_dlogits(logits, LossKind::CrossEntropy, *y);
        Ok((loss, model.backprop_to_params(&activations, dlogits)))
    })?;
    let scale = 1.0 / examples.len() as f64;
    let mut total_loss = 0.0;
    let mut grads: Vec<Layer> =
        model.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect();
    for (loss, sample_grads) in per_sample {
        total_loss += loss * scale;
        for (acc, g) in grads.iter_mut().zip(&sample_grads) {
            numerics::axpy(scale, &g.w, &mut acc.w);
            numerics::axpy(scale, &g.b, &mut acc.b);
        }
    }
    Ok((total_loss, grads))
}

/// Trains a classifier by minibatch gradient descent with momentum on
/// softmax cross-entropy (adversarial training when `cfg.attack` is set).
///
/// The returned model consumes raw inputs regardless of `cfg.input_norm`,
/// and seed-identical runs produce bit-identical models.
pub fn train(ds: &LabeledDataset, arch: ArchitectureId, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if ds.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::NonPositive { what: "learning_rate", value: cfg.learning_rate });
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    if cfg.batch_size == 0 || cfg.batch_size > ds.n() {
        return Err(Error::InvalidConfig(format!(
            "batch_size must be in [1, {}], got {}",
            ds.n(),
            cfg.batch_size
        )));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
    }
    if cfg.weight_decay < 0.0 || !cfg.weight_decay.is_finite() {
        return Err(Error::NonPositive { what: "weight_decay", value: cfg.weight_decay });
    }
    if cfg.l1 < 0.0 || !cfg.l1.is_finite() {
        return Err(Error::NonPositive { what: "l1", value: cfg.l1 });
    }
    if let Some(attack) = &cfg.attack {
        attack.validate()?;
    }
    if ds.class_count() < 2 {
        return Err(Error::InvalidConfig("training needs at least 2 classes".into()));
    }

    let standardizer =
        if cfg.input_norm { Standardizer::fit(ds) } else { Standardizer::identity(ds.dim()) };
    let root = RngStream::new(cfg.seed, 0);
    let mut model =
        Model::init(arch, ds.dim(), ds.class_count(), &mut root.substream(0))?;
    let mut shuffle_rng = root.substream(1);
    let attack_root = root.substream(2);

    let mut velocity: Vec<Layer> =
        model.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect();
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    let mut prev_epoch_loss = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (minibatch, batch) in order.chunks(cfg.batch_size).enumerate() {
            let examples: Vec<(Vec64, u32)> = if let Some(attack) = &cfg.attack {
                // Perturb in raw input space against the current model.
                let raw_model = standardizer.fold_into(model.clone());
                let epoch_root = attack_root.substream(epoch as u64);
                numerics::parallel::try_indexed_map(batch.len(), |b| {
                    let i = batch[b];
                    let mut rng = epoch_root.substream(i as u64);
                    let adv = pgd_l2(&raw_model, ds.row(i), ds.label(i), attack, &mut rng)?;
                    Ok((standardizer.apply(&adv), ds.label(i)))
                })?
            } else {
                batch
                    .iter()
                    .map(|&i| (standardizer.apply(ds.row(i)), ds.label(i)))
                    .collect()
            };
            let (batch_loss, grads) = batch_loss_and_grads(&model, &examples)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, minibatch });
            }
            epoch_loss += batch_loss * examples.len() as f64;
            for ((layer, vel), grad) in model.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for (j, v) in vel.w.iter_mut().enumerate() {
                    *v = cfg.momentum * *v + grad.w[j] + cfg.weight_decay * layer.w[j];
                }
                for (j, v) in vel.b.iter_mut().enumerate() {
                    *v = cfg.momentum * *v + grad.b[j];
                }
                numerics::axpy(-lr, &vel.w, &mut layer.w);
                numerics::axpy(-lr, &vel.b, &mut layer.b);
                if cfg.l1 > 0.0 {
                    let t = lr * cfg.l1;
                    for w in &mut layer.w {
                        *w = w.signum() * (w.abs() - t).max(0.0);
                    }
                }
            }
        }
        epoch_loss /= ds.n() as f64;
        loss_curve.push(epoch_loss);
        if epoch_loss > prev_epoch_loss {
            lr *= 0.5;
        }
        prev_epoch_loss = epoch_loss;
    }

    Ok(TrainOutcome { model: standardizer.fold_into(model), loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_gaussian, TwoGaussianSpec};

    fn identity_linear() -> Model {
        let layer = Layer::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2).unwrap();
        Model::from_parts(ArchitectureId::Linear, 2, 2, vec![layer]).unwrap()
    }

    fn random_model(arch: ArchitectureId, input_dim: usize, classes: u32, seed: u64) -> Model {
        let mut rng = RngStream::new(seed, 3);
        Model::init(arch, input_dim, classes, &mut rng).unwrap()
    }

    #[test]
    fn identity_linear_forward() {
        let model = identity_linear();
        assert_eq!(model.forward(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..5).map(|_| rng.uniform_in(-30.0, 30.0)).collect();
            let p = softmax(&logits);
            assert!((numerics::sum(&p) - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forward_is_affine_of_representation() {
        for arch in ArchitectureId::ALL {
            let model = random_model(arch, 3, 4, 9);
            let mut rng = RngStream::new(10, 0);
            let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let rep = model.representation(&x).unwrap();
            let last = model.layers().last().unwrap();
            let direct = model.forward(&x).unwrap();
            for (o, &logit) in direct.iter().enumerate() {
                let affine = numerics::dot(last.row(o), &rep) + last.bias()[o];
                assert!((logit - affine).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn representation_shapes() {
        let model = random_model(ArchitectureId::Mlp32, 5, 2, 1);
        let rep = model.representation(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(rep.len(), 32);
        assert_eq!(model.representation_dim(), 32);
        let linear = random_model(ArchitectureId::Linear, 5, 2, 1);
        let x = [0.5, -0.25, 0.0, 1.0, 2.0];
        assert_eq!(linear.representation(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn grad_input_matches_finite_differences() {
        let mut rng = RngStream::new(12, 0);
        for arch in ArchitectureId::ALL {
            for case in 0..5 {
                let model = random_model(arch, 4, 3, 100 + case);
                let x: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                for loss in [LossKind::CrossEntropy, LossKind::Margin] {
                    let grad = grad_input(&model, &x, loss, 1).unwrap();
                    let fd = numerics::finite_diff_grad(
                        |p| {
                            let logits = model.forward(p).unwrap();
                            match loss {
                                LossKind::CrossEntropy => cross_entropy(&logits, 1),
                                LossKind::Margin => class_margin(&logits, 1),
                            }
                        },
                        &x,
                        1e-6,
                    );
                    let denom = numerics::norm2(&fd).max(1e-3);
                    assert!(
                        numerics::dist2(&grad, &fd) / denom < 1e-5,
                        "{arch:?} {loss:?}: {grad:?} vs {fd:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = RngStream::new(21, 0);
        for arch in [ArchitectureId::Mlp32, ArchitectureId::Mlp64x64Tanh] {
            let model = random_model(arch, 3, 2, 77);
            let x: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let y = 1u32;
            let activations = model.forward_cache(&x).unwrap();
            let logits = activations.last().unwrap();
            let dlogits = loss_dlogits(logits, LossKind::CrossEntropy, y);
            let grads = model.backprop_to_params(&activations, dlogits);
            let h = 1e-6;
            for (l, layer_grad) in grads.iter().enumerate() {
                // Spot-check a handful of weight entries per layer.
                let count = model.layers()[l].w.len();
                for k in [0, count / 2, count - 1] {
                    let mut plus = model.clone();
                    plus.layers[l].w[k] += h;
                    let mut minus = model.clone();
                    minus.layers[l].w[k] -= h;
                    let fd = (cross_entropy(&plus.forward(&x).unwrap(), y)
                        - cross_entropy(&minus.forward(&x).unwrap(), y))
                        / (2.0 * h);
                    let got = layer_grad.w[k];
                    assert!(
                        (got - fd).abs() / fd.abs().max(1e-3) < 1e-5,
                        "{arch:?} layer {l} w[{k}]: {got} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn logistic_gradient_closed_form() {
        // 2-logit linear model: CE reduces to logistic loss on the logit gap.
        let w0 = [0.3, -0.7];
        let w1 = [-0.2, 0.9];
        let b = [0.1, -0.4];
        let layer =
            Layer::new(vec![w0[0], w0[1], w1[0], w1[1]], vec![b[0], b[1]], 2, 2).unwrap();
        let model = Model::from_parts(ArchitectureId::Linear, 2, 2, vec![layer]).unwrap();
        let x = [0.8, -1.3];
        for (label, y) in [(0u32, -1.0f64), (1u32, 1.0)] {
            let grad = grad_input(&model, &x, LossKind::CrossEntropy, label).unwrap();
            let w_eff = [w1[0] - w0[0], w1[1] - w0[1]];
            let b_eff = b[1] - b[0];
            let margin = y * (w_eff[0] * x[0] + w_eff[1] * x[1] + b_eff);
            let sigma = 1.0 / (1.0 + margin.exp());
            for j in 0..2 {
                let closed = -y * w_eff[j] * sigma;
                assert!((grad[j] - closed).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_saturated_minimum() {
        let layer = Layer::new(vec![40.0, 0.0, -40.0, 0.0], vec![0.0, 0.0], 2, 2).unwrap();
        let model = Model::from_parts(ArchitectureId::Linear, 2, 2, vec![layer]).unwrap();
        let x = [1.0, 0.0];
        let logits = model.forward(&x).unwrap();
        assert!(cross_entropy(&logits, 0) < 1e-12);
        let grad = grad_input(&model, &x, LossKind::CrossEntropy, 0).unwrap();
        assert!(numerics::norm2(&grad) < 1e-12);
    }

    #[test]
    fn representation_distance_grad_matches_fd() {
        let mut rng = RngStream::new(31, 0);
        for arch in ArchitectureId::ALL {
            let model = random_model(arch, 4, 2, 5);
            let x: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let target_x: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let rep_target = model.representation(&target_x).unwrap();
            let (dist, grad) = representation_distance_grad(&model, &x, &rep_target).unwrap();
            let fd = numerics::finite_diff_grad(
                |p| {
                    let rep = model.representation(p).unwrap();
                    numerics::dist2(&rep, &rep_target)
                },
                &x,
                1e-6,
            );
            assert!(dist > 0.0);
            let denom = numerics::norm2(&fd).max(1e-3);
            assert!(numerics::dist2(&grad, &fd) / denom < 1e-5, "{arch:?}");
        }
    }

    #[test]
    fn representation_distance_zero_at_fixed_point() {
        let model = random_model(ArchitectureId::Mlp32, 3, 2, 8);
        let x = [0.2, -0.1, 0.4];
        let rep = model.representation(&x).unwrap();
        let (dist, grad) = representation_distance_grad(&model, &x, &rep).unwrap();
        assert_eq!(dist, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    fn gaussian_train_set(n: usize, seed: u64) -> LabeledDataset {
        gen_two_gaussian(&TwoGaussianSpec {
            dim: 2,
            n,
            mu_star: vec![2.0, 1.0],
            sigma_star: vec![0.5, 0.5],
            seed,
        })
        .unwrap()
    }

    #[test]
    fn train_separable_task_to_high_accuracy() {
        let ds = gaussian_train_set(512, 1);
        let cfg = TrainConfig { epochs: 50, seed: 7, ..TrainConfig::default() };
        let outcome = train(&ds, ArchitectureId::Linear, &cfg).unwrap();
        let correct = (0..ds.n())
            .filter(|&i| outcome.model.predict(ds.row(i)).unwrap() == ds.label(i))
            .count();
        assert!(correct as f64 / ds.n() as f64 >= 0.99, "train accuracy {correct}/{}", ds.n());
        assert_eq!(outcome.loss_curve.len(), 50);
    }

    #[test]
    fn train_is_deterministic() {
        let ds = gaussian_train_set(128, 2);
        let cfg = TrainConfig { epochs: 5, seed: 3, ..TrainConfig::default() };
        let a = train(&ds, ArchitectureId::Mlp32, &cfg).unwrap();
        let b = train(&ds, ArchitectureId::Mlp32, &cfg).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn train_diverges_with_absurd_learning_rate() {
        let ds = gaussian_train_set(64, 3);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 3,
            momentum: 0.0,
            input_norm: false,
            ..TrainConfig::default()
        };
        match train(&ds, ArchitectureId::Mlp32, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn standardization_fold_matches_standardized_forward() {
        let ds = gaussian_train_set(64, 4);
        let standardizer = Standardizer::fit(&ds);
        let model = random_model(ArchitectureId::Mlp64x64, 2, 2, 6);
        let folded = standardizer.fold_into(model.clone());
        for i in 0..8 {
            let raw = ds.row(i);
            let via_std = model.forward(&standardizer.apply(raw)).unwrap();
            let via_fold = folded.forward(raw).unwrap();
            for (a, b) in via_std.iter().zip(&via_fold) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rfm1_round_trip_bit_exact() {
        for arch in ArchitectureId::ALL {
            let model = random_model(arch, 3, 4, 40 + arch.code() as u64);
            let bytes = model.to_bytes();
            let back = Model::from_bytes(&bytes).unwrap();
            assert_eq!(model, back);
            assert_eq!(bytes, back.to_bytes());
            assert_eq!(model.content_hash(), back.content_hash());
        }
    }

    #[test]
    fn rfm1_save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfm1");
        let model = random_model(ArchitectureId::Mlp128, 6, 3, 2);
        model.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), model);
    }

    #[test]
    fn rfm1_rejects_corruption() {
        let model = random_model(ArchitectureId::Linear, 2, 2, 1);
        let bytes = model.to_bytes();
        assert!(matches!(Model::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(Model::from_bytes(&trailing), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[0] = b'Z';
        assert!(matches!(Model::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn from_parts_enforces_architecture_dims() {
        let layer = Layer::new(vec![0.0; 6], vec![0.0; 3], 2, 3).unwrap();
        assert!(Model::from_parts(ArchitectureId::Linear, 2, 2, vec![layer]).is_err());
    }

    #[test]
    fn architecture_names_round_trip() {
        for arch in ArchitectureId::ALL {
            assert_eq!(arch.name().parse::<ArchitectureId>().unwrap(), arch);
            assert_eq!(ArchitectureId::from_code(arch.code()).unwrap(), arch);
            let json = serde_json::to_string(&arch).unwrap();
            assert_eq!(json, format!("\"{}\"", arch.name()));
        }
    }
}
