//! Dataset container, binary formats, and synthetic task generators.
//!
//! The [`LabeledDataset`] container stores an `n × d` row-major matrix of
//! `f64` inputs together with integer class labels in `[0, class_count)`.
//! Binary tasks use the convention that class id `0` means label `-1` and
//! class id `1` means label `+1` (see [`label_sign`]).
//!
//! Two binary formats are supported:
//!
//! * **RFD1** — the native container (magic `RFD1`, little-endian header,
//!   raw `f64` inputs, `u32` labels, and a length-prefixed JSON manifest).
//!   `load(save(ds))` is bit-identical, and truncated or oversized files are
//!   rejected without returning a partial dataset.
//! * **IDX** — the big-endian tensor format used by classic image corpora,
//!   supporting unsigned-byte (`0x08`) and 32-bit float (`0x0D`) payloads.
//!
//! Generators are pure functions of their spec (seed included): rerunning a
//! generator with an equal spec yields a byte-identical dataset. Every
//! generated dataset carries a manifest recording the spec that produced it;
//! derived datasets (attacks, distillation) append to that manifest so
//! provenance stays auditable via [`LabeledDataset::content_hash`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, DiagMat, Vec64};
use crate::rng::RngStream;

/// Magic bytes that open an RFD1 container file.
const RFD1_MAGIC: &[u8; 4] = b"RFD1";

/// Flag bit marking a dataset whose inputs live in `[0, 1]`.
const FLAG_IMAGE_LIKE: u32 = 1;

/// Signed label (`-1.0` or `+1.0`) for a binary class id (`0` or `1`).
///
/// # Panics
/// Panics if `label > 1`; binary conventions only apply to two-class data.
pub fn label_sign(label: u32) -> f64 {
    assert!(label <= 1, "label_sign is defined for binary class ids, got {label}");
    2.0 * f64::from(label) - 1.0
}

/// Binary class id (`0` or `1`) for a signed label (`-1` or `+1`).
///
/// # Panics
/// Panics if `sign` is not `-1` or `+1`.
pub fn sign_to_label(sign: i8) -> u32 {
    match sign {
        -1 => 0,
        1 => 1,
        other => panic!("sign_to_label expects -1 or +1, got {other}"),
    }
}

/// Immutable labeled dataset: `n` rows of dimension `d` plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec64,
    n: usize,
    d: usize,
    labels: Vec<u32>,
    class_count: u32,
    image_like: bool,
    manifest: BTreeMap<String, serde_json::Value>,
}

impl LabeledDataset {
    /// Builds a dataset from a row-major input matrix and labels.
    ///
    /// Validates that the matrix is non-empty and well-shaped, all entries
    /// are finite, and every label is in `[0, class_count)`.
    pub fn new(inputs: Vec64, d: usize, labels: Vec<u32>, class_count: u32) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if d == 0 {
            return Err(Error::InvalidConfig("input dimension must be at least 1".into()));
        }
        if class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be at least 1".into()));
        }
        let n = labels.len();
        if inputs.len() != n * d {
            return Err(Error::DimMismatch { what: "dataset inputs", expected: n * d, got: inputs.len() });
        }
        if !inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "dataset inputs" });
        }
        for &label in &labels {
            if label >= class_count {
                return Err(Error::LabelOutOfRange { label, classes: class_count });
            }
        }
        Ok(Self { inputs, n, d, labels, class_count, image_like: false, manifest: BTreeMap::new() })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of classes.
    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    /// Whether inputs are constrained to `[0, 1]` (image-like data).
    pub fn image_like(&self) -> bool {
        self.image_like
    }

    /// Flags the dataset as image-like after checking the `[0, 1]` bound.
    pub fn set_image_like(&mut self, image_like: bool) -> Result<()> {
        if image_like && !self.inputs.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig("image-like dataset requires inputs in [0, 1]".into()));
        }
        self.image_like = image_like;
        Ok(())
    }

    /// Row-major input matrix as one flat slice of length `n * dim`.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// The `i`-th input row.
    ///
    /// # Panics
    /// Panics if `i >= n`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    /// All labels.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// The `i`-th label.
    ///
    /// # Panics
    /// Panics if `i >= n`.
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Provenance manifest (generator spec, source hashes, derivation notes).
    pub fn manifest(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.manifest
    }

    /// Inserts (or replaces) one manifest entry.
    pub fn insert_manifest(&mut self, key: &str, value: serde_json::Value) {
        self.manifest.insert(key.to_string(), value);
    }

    /// Hex SHA-256 digest of the dataset content (header, inputs, labels).
    ///
    /// The manifest (provenance record) is deliberately excluded so that two
    /// datasets with identical samples hash identically regardless of how
    /// they were produced.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.content_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write as _;
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    fn flags(&self) -> u32 {
        if self.image_like {
            FLAG_IMAGE_LIKE
        } else {
            0
        }
    }

    /// Serialized content region: magic, header, inputs, labels (no manifest).
    fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.inputs.len() * 8 + self.labels.len() * 4);
        out.extend_from_slice(RFD1_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&self.class_count.to_le_bytes());
        out.extend_from_slice(&self.flags().to_le_bytes());
        for &v in &self.inputs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &label in &self.labels {
            out.extend_from_slice(&label.to_le_bytes());
        }
        out
    }

    /// Serializes the dataset to the RFD1 byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.n > u32::MAX as usize || self.d > u32::MAX as usize {
            return Err(Error::InvalidConfig("dataset too large for RFD1 32-bit header".into()));
        }
        let manifest = serde_json::to_vec(&self.manifest)?;
        if manifest.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig("manifest too large for RFD1 32-bit length".into()));
        }
        let mut out = self.content_bytes();
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        Ok(out)
    }

    /// Parses a dataset from RFD1 bytes, rejecting truncated or trailing data.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != RFD1_MAGIC {
            return Err(Error::Format(format!("bad RFD1 magic {magic:02x?}")));
        }
        let n = r.u32_le()? as usize;
        let d = r.u32_le()? as usize;
        let class_count = r.u32_le()?;
        let flags = r.u32_le()?;
        if flags & !FLAG_IMAGE_LIKE != 0 {
            return Err(Error::Format(format!("unknown RFD1 flag bits {flags:#x}")));
        }
        let count = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format("RFD1 header overflows n*d".into()))?;
        let mut inputs = Vec::with_capacity(count);
        for _ in 0..count {
            inputs.push(r.f64_le()?);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32_le()?);
        }
        let manifest_len = r.u32_le()? as usize;
        let manifest_bytes = r.take(manifest_len)?;
        let manifest: BTreeMap<String, serde_json::Value> = serde_json::from_slice(manifest_bytes)?;
        r.finish()?;
        let mut ds = Self::new(inputs, d, labels, class_count)?;
        ds.set_image_like(flags & FLAG_IMAGE_LIKE != 0)?;
        ds.manifest = manifest;
        Ok(ds)
    }

    /// Writes the dataset to `path` in the RFD1 format.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Reads an RFD1 dataset from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

/// Strict forward-only reader over a byte buffer.
struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, count: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(count)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: need {count} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32_le(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().expect("length checked")))
    }

    fn f64_le(&mut self) -> Result<f64> {
        let bytes = self.take(8)?;
        Ok(f64::from_le_bytes(bytes.try_into().expect("length checked")))
    }

    fn u32_be(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes(bytes.try_into().expect("length checked")))
    }

    fn f32_be(&mut self) -> Result<f32> {
        let bytes = self.take(4)?;
        Ok(f32::from_be_bytes(bytes.try_into().expect("length checked")))
    }

    /// Errors unless the buffer has been consumed exactly.
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "trailing data: {} unread bytes after parse",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Payload of an IDX tensor: unsigned bytes or 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// A dense tensor parsed from (or destined for) an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    shape: Vec<usize>,
    data: IdxData,
}

impl IdxTensor {
    /// Builds a tensor, checking that the payload length matches the shape.
    pub fn new(shape: Vec<usize>, data: IdxData) -> Result<Self> {
        if shape.is_empty() || shape.len() > 255 {
            return Err(Error::InvalidConfig("IDX tensors need 1..=255 dimensions".into()));
        }
        let expected: usize = shape.iter().product();
        let got = match &data {
            IdxData::U8(v) => v.len(),
            IdxData::F32(v) => v.len(),
        };
        if expected != got {
            return Err(Error::DimMismatch { what: "IDX payload", expected, got });
        }
        Ok(Self { shape, data })
    }

    /// Tensor shape, outermost dimension first.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Tensor payload.
    pub fn data(&self) -> &IdxData {
        &self.data
    }
}

const IDX_TYPE_U8: u8 = 0x08;
const IDX_TYPE_F32: u8 = 0x0d;

/// Parses an IDX file: `00 00 <type> <ndim>` magic, big-endian dimension
/// sizes, then the row-major payload (floats big-endian).
pub fn load_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path)?;
    load_idx_bytes(&bytes)
}

/// Parses IDX content from an in-memory buffer. See [`load_idx`].
pub fn load_idx_bytes(bytes: &[u8]) -> Result<IdxTensor> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::Format(format!("bad IDX magic {magic:02x?}")));
    }
    let type_byte = magic[2];
    let ndim = magic[3] as usize;
    if ndim == 0 {
        return Err(Error::Format("IDX dimension count must be at least 1".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        let size = r.u32_be()? as usize;
        count = count
            .checked_mul(size)
            .ok_or_else(|| Error::Format("IDX shape overflows element count".into()))?;
        shape.push(size);
    }
    let data = match type_byte {
        IDX_TYPE_U8 => IdxData::U8(r.take(count)?.to_vec()),
        IDX_TYPE_F32 => {
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(r.f32_be()?);
            }
            IdxData::F32(values)
        }
        other => return Err(Error::Format(format!("unsupported IDX type byte {other:#04x}"))),
    };
    r.finish()?;
    IdxTensor::new(shape, data)
}

/// Writes a tensor to `path` in the IDX byte layout.
pub fn save_idx(path: &Path, tensor: &IdxTensor) -> Result<()> {
    let mut out = Vec::new();
    let type_byte = match tensor.data {
        IdxData::U8(_) => IDX_TYPE_U8,
        IdxData::F32(_) => IDX_TYPE_F32,
    };
    out.extend_from_slice(&[0, 0, type_byte, tensor.shape.len() as u8]);
    for &size in &tensor.shape {
        let size = u32::try_from(size)
            .map_err(|_| Error::InvalidConfig("IDX dimension exceeds 32 bits".into()))?;
        out.extend_from_slice(&size.to_be_bytes());
    }
    match &tensor.data {
        IdxData::U8(values) => out.extend_from_slice(values),
        IdxData::F32(values) => {
            for &v in values {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Assembles a dataset from an IDX image tensor and an IDX label vector.
///
/// Images may be `n × h × w` or `n × d`; unsigned-byte payloads are rescaled
/// to `[0, 1]` (divide by 255) and the dataset is flagged image-like when all
/// inputs land in that range. Labels must be a 1-D unsigned-byte tensor;
/// `class_count` is `max(label) + 1`.
pub fn dataset_from_idx(images: &IdxTensor, labels: &IdxTensor) -> Result<LabeledDataset> {
    let (n, d) = match images.shape() {
        [n, h, w] => (*n, h * w),
        [n, d] => (*n, *d),
        other => {
            return Err(Error::Format(format!(
                "IDX image tensor must be 2-D or 3-D, got {} dims",
                other.len()
            )))
        }
    };
    let inputs: Vec64 = match images.data() {
        IdxData::U8(values) => values.iter().map(|&v| f64::from(v) / 255.0).collect(),
        IdxData::F32(values) => values.iter().map(|&v| f64::from(v)).collect(),
    };
    let label_values = match (labels.shape(), labels.data()) {
        ([m], IdxData::U8(values)) => {
            if *m != n {
                return Err(Error::DimMismatch { what: "IDX labels", expected: n, got: *m });
            }
            values.iter().map(|&v| u32::from(v)).collect::<Vec<u32>>()
        }
        _ => return Err(Error::Format("IDX labels must be a 1-D unsigned-byte tensor".into())),
    };
    let class_count = label_values.iter().copied().max().unwrap_or(0) + 1;
    let mut ds = LabeledDataset::new(inputs, d, label_values, class_count)?;
    let in_unit_box = ds.inputs().iter().all(|&v| (0.0..=1.0).contains(&v));
    ds.set_image_like(in_unit_box)?;
    Ok(ds)
}

/// Parameters for the two-Gaussian binary task: `y` uniform on `{-1, +1}`,
/// `x ~ N(y mu_star, Sigma_star)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoGaussianSpec {
    pub dim: usize,
    pub n: usize,
    pub mu_star: Vec64,
    pub sigma_star: Vec64,
    pub seed: u64,
}

/// Parameters for the two-coordinate robustness-versus-accuracy task.
///
/// Coordinate 1 is `y * u` with `u` uniform on `[1, 2]` (robustly useful:
/// the class gap is 2, which must exceed `2 * epsilon_design`); coordinate 2
/// is exactly `y * epsilon_design / 2` (perfectly predictive but flippable
/// inside the epsilon ball).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessVsAccuracySpec {
    pub n: usize,
    pub epsilon_design: f64,
    pub seed: u64,
}

/// Parameters for the multiclass ring-blob task (`dim = 2 + classes`).
///
/// The first two coordinates place class `y` on a radius-2 ring at angle
/// `2 pi y / classes` plus Gaussian noise; the remaining `classes`
/// coordinates hold a noiseless one-hot marker scaled so that moving it onto
/// another class costs `0.9 * epsilon_design` in L2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MulticlassBlobsSpec {
    pub classes: u32,
    pub n: usize,
    pub epsilon_design: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Parameters for the synthetic image task (`side * side` pixels in `[0,1]`).
///
/// Class sign `y` adds a centered disk pattern with L2 amplitude
/// `3 * epsilon_design` (robust) and a four-corner pattern whose class flip
/// costs `0.9 * epsilon_design` (non-robust); pixel noise is Gaussian and the
/// result is clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageBlobsSpec {
    pub side: usize,
    pub n: usize,
    pub epsilon_design: f64,
    pub noise: f64,
    pub seed: u64,
}

/// A synthetic task description: which generator to run and with what
/// parameters. Serialized with a `kind` tag, e.g. `{"kind": "two-gaussian", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    TwoGaussian(TwoGaussianSpec),
    RobustnessVsAccuracy(RobustnessVsAccuracySpec),
    MulticlassBlobs(MulticlassBlobsSpec),
    ImageBlobs(ImageBlobsSpec),
}

/// Runs the generator selected by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    match spec {
        SyntheticSpec::TwoGaussian(s) => gen_two_gaussian(s),
        SyntheticSpec::RobustnessVsAccuracy(s) => gen_robustness_vs_accuracy(s),
        SyntheticSpec::MulticlassBlobs(s) => gen_multiclass_blobs(s),
        SyntheticSpec::ImageBlobs(s) => gen_image_blobs(s),
    }
}

fn finalize(
    mut ds: LabeledDataset,
    spec: &SyntheticSpec,
    image_like: bool,
) -> Result<LabeledDataset> {
    ds.set_image_like(image_like)?;
    ds.insert_manifest("generator", serde_json::to_value(spec)?);
    Ok(ds)
}

/// Samples the two-Gaussian task: `y` uniform on `{-1, +1}`,
/// `x ~ N(y mu_star, Sigma_star)`. Class ids follow [`sign_to_label`].
pub fn gen_two_gaussian(spec: &TwoGaussianSpec) -> Result<LabeledDataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if spec.mu_star.len() != spec.dim {
        return Err(Error::DimMismatch { what: "mu_star", expected: spec.dim, got: spec.mu_star.len() });
    }
    let sigma = DiagMat::new(spec.sigma_star.clone())?;
    if sigma.dim() != spec.dim {
        return Err(Error::DimMismatch { what: "sigma_star", expected: spec.dim, got: sigma.dim() });
    }
    if !sigma.is_positive() {
        return Err(Error::NonPositive { what: "sigma_star", value: sigma.min_entry() });
    }
    let parent = RngStream::new(spec.seed, 0);
    let mut inputs = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    let mut mean = vec![0.0; spec.dim];
    for i in 0..spec.n {
        let mut rng = parent.substream(i as u64);
        let y = rng.sign();
        for (m, &mu) in mean.iter_mut().zip(&spec.mu_star) {
            *m = y * mu;
        }
        let x = sample_gaussian(&mut rng, &mean, &sigma)?;
        inputs.extend_from_slice(&x);
        labels.push(sign_to_label(y as i8));
    }
    let ds = LabeledDataset::new(inputs, spec.dim, labels, 2)?;
    finalize(ds, &SyntheticSpec::TwoGaussian(spec.clone()), false)
}

/// Samples the robustness-versus-accuracy task (dimension 2).
///
/// Errors with [`Error::MarginViolation`] unless the robust coordinate's
/// class gap (always 2) exceeds `2 * epsilon_design`, i.e. unless
/// `epsilon_design < 1`.
pub fn gen_robustness_vs_accuracy(spec: &RobustnessVsAccuracySpec) -> Result<LabeledDataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(spec.epsilon_design.is_finite() && spec.epsilon_design > 0.0) {
        return Err(Error::NonPositive { what: "epsilon_design", value: spec.epsilon_design });
    }
    if 2.0 * spec.epsilon_design >= 2.0 {
        return Err(Error::MarginViolation(format!(
            "robust-coordinate class gap 2 must exceed 2 * epsilon_design = {}",
            2.0 * spec.epsilon_design
        )));
    }
    let parent = RngStream::new(spec.seed, 0);
    let mut inputs = Vec::with_capacity(spec.n * 2);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = parent.substream(i as u64);
        let y = rng.sign();
        let u = rng.uniform_in(1.0, 2.0);
        inputs.push(y * u);
        inputs.push(y * spec.epsilon_design / 2.0);
        labels.push(sign_to_label(y as i8));
    }
    let ds = LabeledDataset::new(inputs, 2, labels, 2)?;
    finalize(ds, &SyntheticSpec::RobustnessVsAccuracy(spec.clone()), false)
}

/// Ring radius of the multiclass blob task's robust coordinates.
pub const BLOB_RING_RADIUS: f64 = 2.0;

/// Fraction of the perturbation budget consumed by flipping a non-robust
/// marker between classes (kept strictly below 1 so the flip is feasible).
pub const NONROBUST_FLIP_FRACTION: f64 = 0.9;

/// Samples the multiclass ring-blob task (`dim = 2 + classes`).
///
/// Labels are uniform over `[0, classes)`. Construction requires the ring
/// blobs to stay `epsilon`-separated: adjacent class centers are
/// `2 R sin(pi / C)` apart, which must exceed `2 * epsilon_design`.
pub fn gen_multiclass_blobs(spec: &MulticlassBlobsSpec) -> Result<LabeledDataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if spec.classes < 2 {
        return Err(Error::InvalidConfig("multiclass blobs need at least 2 classes".into()));
    }
    if !(spec.epsilon_design.is_finite() && spec.epsilon_design > 0.0) {
        return Err(Error::NonPositive { what: "epsilon_design", value: spec.epsilon_design });
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::NonPositive { what: "noise", value: spec.noise });
    }
    let classes = spec.classes as usize;
    let center_gap = 2.0 * BLOB_RING_RADIUS * (PI / classes as f64).sin();
    if center_gap <= 2.0 * spec.epsilon_design {
        return Err(Error::MarginViolation(format!(
            "ring center gap {center_gap:.6} must exceed 2 * epsilon_design = {}",
            2.0 * spec.epsilon_design
        )));
    }
    let marker = NONROBUST_FLIP_FRACTION * spec.epsilon_design / 2.0_f64.sqrt();
    let d = 2 + classes;
    let parent = RngStream::new(spec.seed, 0);
    let mut inputs = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = parent.substream(i as u64);
        let y = rng.below(spec.classes as u64) as u32;
        let theta = 2.0 * PI * f64::from(y) / classes as f64;
        inputs.push(BLOB_RING_RADIUS * theta.cos() + spec.noise * rng.standard_normal());
        inputs.push(BLOB_RING_RADIUS * theta.sin() + spec.noise * rng.standard_normal());
        for c in 0..classes {
            inputs.push(if c == y as usize { marker } else { 0.0 });
        }
        labels.push(y);
    }
    let ds = LabeledDataset::new(inputs, d, labels, spec.classes)?;
    finalize(ds, &SyntheticSpec::MulticlassBlobs(spec.clone()), false)
}

/// L2 amplitude of the image task's robust disk pattern, as a multiple of
/// `epsilon_design` (well outside the perturbation budget).
pub const IMAGE_ROBUST_AMPLITUDE: f64 = 3.0;

/// Returns the unit-norm disk mask (radius `side / 4`, centered) used as the
/// image task's robust pattern.
pub fn image_disk_mask(side: usize) -> Vec64 {
    let center = (side as f64 - 1.0) / 2.0;
    let radius = side as f64 / 4.0;
    let mut mask = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let dr = r as f64 - center;
            let dc = c as f64 - center;
            if (dr * dr + dc * dc).sqrt() <= radius {
                mask[r * side + c] = 1.0;
            }
        }
    }
    let norm = crate::numerics::norm2(&mask);
    if norm > 0.0 {
        for v in &mut mask {
            *v /= norm;
        }
    }
    mask
}

/// Returns the unit-norm four-corner mask used as the image task's
/// non-robust pattern (disjoint from the disk for `side >= 4`).
pub fn image_corner_mask(side: usize) -> Vec64 {
    let mut mask = vec![0.0; side * side];
    let last = side - 1;
    for (r, c) in [(0, 0), (0, last), (last, 0), (last, last)] {
        mask[r * side + c] = 0.5;
    }
    mask
}

/// Samples the synthetic image task: `side * side` pixels in `[0, 1]`.
///
/// Each image is `0.5 + y * 3 eps * disk + y * 0.45 eps * corners + noise`,
/// clamped to `[0, 1]`, with `y = +1` for class 1 and `-1` for class 0.
pub fn gen_image_blobs(spec: &ImageBlobsSpec) -> Result<LabeledDataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if spec.side < 4 {
        return Err(Error::InvalidConfig("image blobs need side >= 4".into()));
    }
    if !(spec.epsilon_design.is_finite() && spec.epsilon_design > 0.0) {
        return Err(Error::NonPositive { what: "epsilon_design", value: spec.epsilon_design });
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::NonPositive { what: "noise", value: spec.noise });
    }
    let d = spec.side * spec.side;
    let disk = image_disk_mask(spec.side);
    let corners = image_corner_mask(spec.side);
    let robust_amp = IMAGE_ROBUST_AMPLITUDE * spec.epsilon_design;
    let marker_amp = NONROBUST_FLIP_FRACTION * spec.epsilon_design / 2.0;
    let parent = RngStream::new(spec.seed, 0);
    let mut inputs = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut pixel = vec![0.0; d];
    for i in 0..spec.n {
        let mut rng = parent.substream(i as u64);
        let y = rng.sign();
        for j in 0..d {
            pixel[j] = 0.5
                + y * robust_amp * disk[j]
                + y * marker_amp * corners[j]
                + spec.noise * rng.standard_normal();
        }
        crate::numerics::clamp01(&mut pixel);
        inputs.extend_from_slice(&pixel);
        labels.push(sign_to_label(y as i8));
    }
    let ds = LabeledDataset::new(inputs, d, labels, 2)?;
    finalize(ds, &SyntheticSpec::ImageBlobs(spec.clone()), true)
}
