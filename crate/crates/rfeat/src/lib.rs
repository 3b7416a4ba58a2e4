//! Robust and non-robust feature analysis for small classifiers.
//!
//! The crate has two halves that share one set of conventions:
//!
//! * **Closed-form theory** ([`gaussian`]): binary classification of a
//!   diagonal Gaussian `N(y·μ*, Σ*)`, `y ∈ {−1, +1}`. Optimal L2-bounded
//!   adversarial perturbations, the adversarially robust maximum-likelihood
//!   estimate of `(μ, Σ)`, a closed form for the robustly learned covariance,
//!   the vulnerability gap of the standard estimate, and gradient/Bayes-
//!   direction alignment. Every quantity here has an independent numerical
//!   check (Monte-Carlo estimate, brute-force search, or finite differences)
//!   exercised by the test suite.
//!
//! * **Empirical dataset surgery** ([`models`], [`attacks`], [`distill`],
//!   [`metrics`], [`data`]): train small fully connected classifiers, attack
//!   them with L2 projected gradient descent, and rebuild training sets so
//!   that they contain only the features a reference model relies on —
//!   either by matching penultimate-layer representations (a "robustified"
//!   dataset) or by relabeling adversarial examples toward random or
//!   deterministic targets (a "non-robust" dataset). [`metrics`] quantifies
//!   feature usefulness, robust usefulness, and attack transferability.
//!
//! # Conventions
//!
//! * All floating point data is `f64`; vectors are plain `Vec<f64>`
//!   ([`numerics::Vec64`]) and covariances are diagonal
//!   ([`gaussian::DiagMat`]).
//! * Datasets store labels as class ids `0..C`. Binary ±1 labels map to class
//!   ids by `y = 2·id − 1` (class 1 is `+1`, the tie-break class of
//!   [`gaussian::classify`]).
//! * Every stochastic routine takes either a seed or an [`rng::RngStream`].
//!   Streams are keyed by `(seed, stream id, counter)`; per-item substreams
//!   make results independent of iteration order and thread count. With the
//!   default `parallel` feature, per-sample loops run on rayon; reductions
//!   always run sequentially in index order, so outputs are bit-identical
//!   with any number of threads and with the feature disabled.
//! * Nothing in this crate writes wall-clock time into results: equal inputs
//!   and seeds produce byte-identical artifacts.
//!
//! # Errors
//!
//! Fallible operations return [`error::Result`]. Panics are reserved for
//! violated internal invariants (indexing bugs), never for bad user input.

pub mod attacks;
pub mod data;
pub mod distill;
pub mod error;
pub mod gaussian;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};

/// Library version string embedded in run manifests and file metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
