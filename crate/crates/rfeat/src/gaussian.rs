//! Closed-form adversarial theory for binary Gaussian classification.
//!
//! Data model: `x ~ N(y·μ*, Σ*)` with label `y ∈ {−1, +1}` equiprobable and
//! diagonal Σ*. A classifier is a parameter pair Θ = (μ, Σ); it labels `x` by
//! the likelihood test `sign(xᵀΣ⁻¹μ)` and is trained by minimizing Gaussian
//! negative log-likelihood (NLL), either plainly ([`mle_fit`]) or against a
//! worst-case L2 adversary ([`adversarial_mle_fit`]).
//!
//! The adversary has two equivalent descriptions, both implemented:
//!
//! * **Per-sample, hard budget**: `max_{‖δ‖₂ ≤ ε} nll(x+δ)` is solved by
//!   `δ* = (λΣ − I)⁻¹(x − μ)` with a per-sample multiplier λ on the branch
//!   `λ > 1/σ_min(Σ)` chosen so `‖δ*‖₂ = ε` ([`optimal_delta`]).
//! * **Penalized**: for a penalty weight `C ≥ 1/σ_min(Σ)` the objective
//!   `nll(x+δ) − (C/2)‖δ‖₂²` is concave in δ and is globally maximized by
//!   `δ* = (CΣ − I)⁻¹(x − μ)` ([`lagrangian_delta`]); the quadratic penalty
//!   is what makes the problem exactly solvable — the concavity condition is
//!   `∇²δ = Σ⁻¹ − C·I ⪯ 0`.
//!
//! Against the penalized adversary, the expected excess loss of the standard
//! parameters Θ* has the closed form implemented by [`vulnerability_gap`]
//! and cross-checked by the Monte-Carlo estimator [`vulnerability_gap_mc`].
//!
//! The robust fit works in the linear-operator relaxation: the adversary
//! picks a diagonal `M` with expected squared distortion
//! `E‖Mv‖₂² = tr(Σ*M²) ≤ ε²` and perturbs `x ↦ x + M(x − μ)`. The inner
//! maximizer is `M* = (λΣ − I)⁻¹` with λ solving `tr(Σ*M²) = ε²`
//! ([`solve_lambda`]); the outer minimization runs in natural parameters
//! `(T, m) = (Σ⁻¹, Σ⁻¹μ)` with the population gradient
//! `[½(AΣ* − T⁻¹); A(T⁻¹m − μ*)]`, `A = (I+M)²` (a Danskin subgradient,
//! valid because the budget set does not depend on Θ). At the fixed point the
//! robust covariance obeys `Σ*⁻¹ = Σ⁻¹(M+I)²`, whose explicit solution is
//! [`robust_cov_closed_form`]: `Σᵣ = (1/λ)I + ½Σ* + √(Σ*/λ + ¼Σ*²)`.
//! Consequences tested here and in the suite:
//!
//! * `Σᵣ ≥ Σ*` elementwise (variances only inflate), with the inflation
//!   relatively larger for small variances — Σᵣ blends toward a multiple of
//!   the identity as ε grows;
//! * the multiplier obeys a-priori bounds ([`lambda_bounds`]);
//! * the condition number κ can only improve, which bounds the worst-case
//!   cosine between the likelihood-test gradient Σ⁻¹x and x:
//!   `min_x cos∠(Σ⁻¹x, x) = 2√κ/(1+κ)` ([`alignment_stats`]).
//!
//! Everything is elementwise over diagonals; no dense linear algebra exists
//! here. All expectations are taken in closed form except where an explicit
//! Monte-Carlo oracle is requested.

use crate::error::{Error, Result};
use crate::numerics::{self, parallel, sample_gaussian, DiagMat, Vec64};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// `ln 2π`, the normalization constant of the Gaussian NLL.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Mean and diagonal covariance Θ = (μ, Σ) of one class-conditional
/// Gaussian; the binary problem is `x ~ N(y·μ, Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    /// Mean vector μ (finite entries).
    pub mu: Vec64,
    /// Diagonal covariance Σ (strictly positive diagonal).
    pub sigma: DiagMat,
}

impl GaussianParams {
    /// Validates and wraps (μ, Σ).
    ///
    /// # Errors
    /// Dimension mismatch, non-finite μ, or non-positive variance.
    pub fn new(mu: Vec64, sigma: DiagMat) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::DimMismatch {
                what: "GaussianParams mean vs covariance",
                expected: sigma.dim(),
                got: mu.len(),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "GaussianParams mean",
            });
        }
        check_positive(&sigma, "GaussianParams covariance")?;
        Ok(Self { mu, sigma })
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Converts to natural parameters `(T, m) = (Σ⁻¹, Σ⁻¹μ)`.
    pub fn to_natural(&self) -> NaturalParams {
        let t = self.sigma.map(|s| 1.0 / s);
        let m = t.mul_vec(&self.mu);
        NaturalParams { t, m }
    }
}

/// Natural parameterization `(T, m) = (Σ⁻¹, Σ⁻¹μ)` used by the robust fit;
/// the adversarial objective is smooth in these coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    /// Precision T = Σ⁻¹ (strictly positive diagonal).
    pub t: DiagMat,
    /// Precision-scaled mean m = Σ⁻¹μ.
    pub m: Vec64,
}

impl NaturalParams {
    /// Converts back to (μ, Σ). Round-trips with
    /// [`GaussianParams::to_natural`] to within a relative 1e-12.
    ///
    /// # Errors
    /// Non-positive precision entries.
    pub fn to_params(&self) -> Result<GaussianParams> {
        check_positive(&self.t, "NaturalParams precision")?;
        let sigma = self.t.map(|t| 1.0 / t);
        let mu = self
            .m
            .iter()
            .zip(self.t.diag())
            .map(|(m, t)| m / t)
            .collect();
        GaussianParams::new(mu, sigma)
    }
}

/// Penalty weight C of the exactly solvable adversary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianConfig {
    /// Penalty weight; must satisfy `C·σᵢ > 1` for every variance of the
    /// attacked parameters (concavity of the penalized objective).
    pub c: f64,
}

impl LagrangianConfig {
    /// Checks the concavity condition `C ≥ 1/σ_min(Σ)` strictly, which also
    /// keeps `CΣ − I` invertible.
    ///
    /// # Errors
    /// [`Error::InvalidConfig`] when `C·σᵢ ≤ 1` for some i.
    pub fn validate_for(&self, sigma: &DiagMat) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::NonFinite {
                what: "LagrangianConfig penalty weight",
            });
        }
        let min = sigma.min_entry();
        if self.c * min <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "penalty weight C = {} must exceed 1/sigma_min = {} strictly \
                 (concavity/invertibility of C*Sigma - I)",
                self.c,
                1.0 / min
            )));
        }
        Ok(())
    }
}

/// Result of [`adversarial_mle_fit`].
#[derive(Debug, Clone, Serialize)]
pub struct RobustFitResult {
    /// Robustly learned parameters Θᵣ = (μᵣ, Σᵣ).
    pub params: GaussianParams,
    /// Multiplier λ of the budget constraint at the solution
    /// (`+∞` when ε = 0: no adversary).
    pub lambda: f64,
    /// Optimal adversarial operator `M* = (λΣᵣ − I)⁻¹` (zero when ε = 0);
    /// positive semidefinite inside the small-budget regime.
    pub m_star: DiagMat,
    /// Absolute budget residual `|tr(Σ*·M*²) − ε²|`.
    pub trace_residual: f64,
    /// Outer gradient iterations performed.
    pub iterations: usize,
}

/// Gradient source for the outer minimization of [`adversarial_mle_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMode {
    /// Deterministic population-expectation gradient (default; converges to
    /// the stated tolerances).
    Population,
    /// Demonstration mode: per-iteration minibatches of `batch` fresh draws
    /// from N(μ*, Σ*) seeded by `seed`; an unbiased estimate of the
    /// population gradient near μ = μ*. Runs the full iteration budget with
    /// a slowly decaying step and reports whatever accuracy it reached —
    /// the tight population-mode tolerances do not apply.
    Sampled { batch: usize, seed: u64 },
}

/// Options for [`adversarial_mle_fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Initial outer step size; halved whenever a step would increase the
    /// population objective.
    pub step: f64,
    /// Outer iteration budget.
    pub max_iters: usize,
    /// Convergence threshold on the Euclidean norm of the (T, m) gradient.
    pub grad_tol: f64,
    /// Starting point; defaults to Θ* itself.
    pub init: Option<GaussianParams>,
    /// Gradient source.
    pub mode: FitMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            step: 1e-2,
            max_iters: 100_000,
            grad_tol: 1e-8,
            init: None,
            mode: FitMode::Population,
        }
    }
}

fn check_positive(sigma: &DiagMat, what: &'static str) -> Result<()> {
    if let Some(&bad) = sigma.diag().iter().find(|&&v| v <= 0.0) {
        return Err(Error::NonPositive { what, value: bad });
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize, what: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Gaussian negative log-likelihood
/// `½(x−μ)ᵀΣ⁻¹(x−μ) + ½Σᵢ log σᵢ + (d/2)·ln 2π`.
///
/// # Errors
/// Dimension mismatch or non-positive variance.
pub fn nll(params: &GaussianParams, x: &[f64]) -> Result<f64> {
    check_dim(params.dim(), x.len(), "nll input")?;
    check_positive(&params.sigma, "nll covariance")?;
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for ((&xi, &mi), &s) in x.iter().zip(&params.mu).zip(params.sigma.diag()) {
        let v = xi - mi;
        quad += v * v / s;
        logdet += s.ln();
    }
    Ok(0.5 * quad + 0.5 * logdet + 0.5 * x.len() as f64 * LN_2PI)
}

/// Analytic gradient of [`nll`] with respect to x: `Σ⁻¹(x − μ)`.
///
/// # Errors
/// Dimension mismatch or non-positive variance.
pub fn grad_nll_x(params: &GaussianParams, x: &[f64]) -> Result<Vec64> {
    check_dim(params.dim(), x.len(), "grad_nll_x input")?;
    check_positive(&params.sigma, "grad_nll_x covariance")?;
    Ok(x.iter()
        .zip(&params.mu)
        .zip(params.sigma.diag())
        .map(|((x, m), s)| (x - m) / s)
        .collect())
}

/// Likelihood-test label `sign(xᵀΣ⁻¹μ)`; exact ties resolve to `+1`.
///
/// # Errors
/// Dimension mismatch or non-positive variance.
pub fn classify(params: &GaussianParams, x: &[f64]) -> Result<i8> {
    check_dim(params.dim(), x.len(), "classify input")?;
    check_positive(&params.sigma, "classify covariance")?;
    let score: f64 = x
        .iter()
        .zip(&params.mu)
        .zip(params.sigma.diag())
        .map(|((x, m), s)| x * m / s)
        .sum();
    Ok(if score >= 0.0 { 1 } else { -1 })
}

/// Maximum-likelihood fit of (μ, Σ) from labeled pairs `(x, y)`,
/// `y ∈ {−1, +1}`.
///
/// Folds the two classes into one Gaussian via `z = y·x`, then takes the
/// sample mean and the *population* variance (divide by n — the MLE, not
/// the unbiased estimator) per coordinate.
///
/// # Errors
/// Fewer than 2 samples, inconsistent dimensions, labels outside {−1, +1},
/// or a coordinate with zero empirical variance.
pub fn mle_fit(samples: &[(Vec64, i8)]) -> Result<GaussianParams> {
    if samples.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "mle_fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].0.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for (x, y) in samples {
        check_dim(d, x.len(), "mle_fit sample")?;
        if *y != 1 && *y != -1 {
            return Err(Error::InvalidConfig(format!(
                "mle_fit labels must be -1 or +1, got {y}"
            )));
        }
        let y = f64::from(*y);
        for i in 0..d {
            mean[i] += y * x[i];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for (x, y) in samples {
        let y = f64::from(*y);
        for i in 0..d {
            let v = y * x[i] - mean[i];
            var[i] += v * v;
        }
    }
    for v in &mut var {
        *v /= n;
        if *v <= 0.0 {
            return Err(Error::NonPositive {
                what: "mle_fit empirical variance",
                value: *v,
            });
        }
    }
    GaussianParams::new(mean, DiagMat::new(var)?)
}

/// Per-coordinate `δᵢ = vᵢ/(λσᵢ − 1)`, i.e. `(λΣ − I)⁻¹ v`.
fn delta_from_lambda(v: &[f64], sigma: &DiagMat, lambda: f64) -> Vec64 {
    v.iter()
        .zip(sigma.diag())
        .map(|(v, s)| v / (lambda * s - 1.0))
        .collect()
}

/// Worst-case perturbation of the hard-budget adversary:
/// `argmax_{‖δ‖₂ ≤ ε} nll(x + δ)`.
///
/// Returns `δ* = (λΣ − I)⁻¹ v`, `v = x − μ`, with λ found by bisection on
/// the branch `λ ∈ (1/σ_min(Σ), ∞)` where `‖δ(λ)‖₂` decreases strictly from
/// ∞ to 0, so that `‖δ*‖₂ = ε` to a relative 1e-10.
///
/// # Errors
/// `ε ≤ 0`; `v = 0` (no ascent direction — a measure-zero event, callers
/// resample); bracket or bisection failure.
pub fn optimal_delta(params: &GaussianParams, x: &[f64], epsilon: f64) -> Result<Vec64> {
    check_dim(params.dim(), x.len(), "optimal_delta input")?;
    check_positive(&params.sigma, "optimal_delta covariance")?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::NonPositive {
            what: "optimal_delta epsilon",
            value: epsilon,
        });
    }
    let v = numerics::sub(x, &params.mu);
    if numerics::norm2(&v) == 0.0 {
        return Err(Error::ZeroVector {
            what: "optimal_delta v = x - mu",
        });
    }
    let sigma = &params.sigma;
    // ‖δ(λ)‖ − ε is strictly decreasing on the branch.
    let g = |lambda: f64| numerics::norm2(&delta_from_lambda(&v, sigma, lambda)) - epsilon;
    let lo = (1.0 + 1e-12) / sigma.min_entry();
    let hi = numerics::expand_bracket_up(g, lo, lo + lo.abs().max(1.0), 200)?;
    let lambda = numerics::bisect_decreasing(g, lo, hi, 0.5e-10 * epsilon, 600)?;
    Ok(delta_from_lambda(&v, sigma, lambda))
}

/// Globally optimal perturbation of the penalized adversary:
/// `δ = (C·Σ − I)⁻¹ (x − μ)` maximizes `nll(x+δ) − (C/2)‖δ‖₂²`
/// (see [`lagrangian_objective`]), which is concave under the config's
/// invariant.
///
/// # Errors
/// Dimension mismatch, or `C·σᵢ ≤ 1` for some coordinate (the objective is
/// no longer concave and `CΣ − I` may be singular).
pub fn lagrangian_delta(params: &GaussianParams, x: &[f64], cfg: LagrangianConfig) -> Result<Vec64> {
    check_dim(params.dim(), x.len(), "lagrangian_delta input")?;
    check_positive(&params.sigma, "lagrangian_delta covariance")?;
    cfg.validate_for(&params.sigma)?;
    let v = numerics::sub(x, &params.mu);
    Ok(delta_from_lambda(&v, &params.sigma, cfg.c))
}

/// The penalized adversarial objective `nll(x + δ) − (C/2)·‖δ‖₂²`.
///
/// For `C ≥ 1/σ_min(Σ)` this is concave in δ (Hessian `Σ⁻¹ − C·I ⪯ 0`), so
/// [`lagrangian_delta`] is its unique global maximizer; the brute-force
/// tests compare against random perturbations of arbitrary norm.
///
/// # Errors
/// As [`nll`]; δ must match the dimension.
pub fn lagrangian_objective(
    params: &GaussianParams,
    x: &[f64],
    delta: &[f64],
    cfg: LagrangianConfig,
) -> Result<f64> {
    check_dim(params.dim(), delta.len(), "lagrangian_objective delta")?;
    let xp: Vec64 = x.iter().zip(delta).map(|(a, b)| a + b).collect();
    let n = nll(params, &xp)?;
    Ok(n - 0.5 * cfg.c * numerics::dot(delta, delta))
}

/// Closed-form vulnerability gap of the standard parameters against the
/// penalized adversary: `Σᵢ (1 + 1/(C·σ*ᵢ − 1))² − d`.
///
/// The gap is the expected excess of the quadratic-form loss
/// `q(x) = (x−μ)ᵀΣ⁻¹(x−μ)` under `x ↦ x + δ*` — equivalently
/// `2·E[nll(x+δ*) − nll(x)]`, since the log-det terms cancel in the
/// difference. Among diagonal Σ* of fixed trace it is minimized by the
/// isotropic one (each term is convex in σᵢ on the branch).
///
/// # Errors
/// `C·σᵢ ≤ 1` for some coordinate.
pub fn vulnerability_gap(sigma_star: &DiagMat, c: f64) -> Result<f64> {
    check_positive(sigma_star, "vulnerability_gap covariance")?;
    LagrangianConfig { c }.validate_for(sigma_star)?;
    Ok(sigma_star
        .diag()
        .iter()
        .map(|&s| {
            let t = 1.0 + 1.0 / (c * s - 1.0);
            t * t - 1.0
        })
        .sum())
}

/// Monte-Carlo estimate of [`vulnerability_gap`]: draws `v ~ N(0, Σ*)`
/// (the law of `y·x − μ*`), applies `δ* = (CΣ* − I)⁻¹v`, and averages the
/// quadratic-form excess `q(v + δ*) − q(v)` with `q(u) = uᵀΣ*⁻¹u`
/// (the convention of the closed form; equal to twice the NLL excess).
///
/// Samples are drawn from per-index substreams of `rng` and reduced
/// sequentially, so the estimate is independent of thread count.
///
/// # Errors
/// As [`vulnerability_gap`]; `n_samples == 0`.
pub fn vulnerability_gap_mc(
    sigma_star: &DiagMat,
    c: f64,
    n_samples: usize,
    rng: &RngStream,
) -> Result<f64> {
    check_positive(sigma_star, "vulnerability_gap_mc covariance")?;
    LagrangianConfig { c }.validate_for(sigma_star)?;
    if n_samples == 0 {
        return Err(Error::InvalidConfig(
            "vulnerability_gap_mc needs n_samples >= 1".into(),
        ));
    }
    let d = sigma_star.dim();
    let zeros = vec![0.0; d];
    let excesses = parallel::try_indexed_map(n_samples, |i| {
        let mut sub = rng.substream(i as u64);
        let v = sample_gaussian(&mut sub, &zeros, sigma_star)?;
        let mut excess = 0.0;
        for (&vj, &s) in v.iter().zip(sigma_star.diag()) {
            let dj = vj / (c * s - 1.0);
            let p = vj + dj;
            excess += (p * p - vj * vj) / s;
        }
        Ok(excess)
    })?;
    Ok(numerics::sum(&excesses) / n_samples as f64)
}

/// Budget function `tr(Σ*·M(λ)²) = Σᵢ σ*ᵢ/(λσᵢ − 1)²`.
fn budget_at(sigma: &DiagMat, sigma_star: &DiagMat, lambda: f64) -> f64 {
    sigma
        .diag()
        .iter()
        .zip(sigma_star.diag())
        .map(|(&s, &ss)| {
            let m = lambda * s - 1.0;
            ss / (m * m)
        })
        .sum()
}

/// Solves `tr(Σ*·M²) = ε²` for the unique `λ > 1/σ_min(Σ)`,
/// `M = (λΣ − I)⁻¹` (squared-budget convention).
///
/// On the branch the budget decays strictly from ∞ to 0, so a root always
/// exists; it is found by doubling the upper bracket and bisecting until the
/// residual is at most a relative 1e-10 of ε².
///
/// # Errors
/// Non-positive ε or variances, dimension mismatch, bracket/bisection
/// failure.
pub fn solve_lambda(sigma: &DiagMat, sigma_star: &DiagMat, epsilon: f64) -> Result<f64> {
    check_dim(sigma.dim(), sigma_star.dim(), "solve_lambda covariances")?;
    check_positive(sigma, "solve_lambda learned covariance")?;
    check_positive(sigma_star, "solve_lambda true covariance")?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::NonPositive {
            what: "solve_lambda epsilon",
            value: epsilon,
        });
    }
    let budget = epsilon * epsilon;
    let g = |lambda: f64| budget_at(sigma, sigma_star, lambda) - budget;
    let lo = (1.0 + 1e-12) / sigma.min_entry();
    let hi = numerics::expand_bracket_up(g, lo, lo + lo.abs().max(1.0), 200)?;
    numerics::bisect_decreasing(g, lo, hi, 0.5e-10 * budget, 600)
}

/// Explicit robust covariance at multiplier λ:
/// `Σᵣ = (1/λ)·I + ½Σ* + √(Σ*/λ + ¼Σ*²)` elementwise.
///
/// Satisfies the fixed point `Σ*⁻¹ = Σᵣ⁻¹(M + I)²` with `M = (λΣᵣ − I)⁻¹`
/// and dominates Σ* elementwise for every λ > 0.
///
/// # Errors
/// Non-positive λ or variances.
pub fn robust_cov_closed_form(sigma_star: &DiagMat, lambda: f64) -> Result<DiagMat> {
    check_positive(sigma_star, "robust_cov_closed_form covariance")?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::NonPositive {
            what: "robust_cov_closed_form lambda",
            value: lambda,
        });
    }
    Ok(sigma_star
        .map(|s| 1.0 / lambda + 0.5 * s + (s / lambda + 0.25 * s * s).sqrt()))
}

/// Relative residual of the robust fixed point `Σ*⁻¹ = Σ⁻¹(M+I)²`,
/// `M = (λΣ − I)⁻¹`: `max_i |1/σ*ᵢ − (1+mᵢ)²/σᵢ| · σ*ᵢ`.
///
/// # Errors
/// Non-positive variances or dimension mismatch.
pub fn fixed_point_residual(sigma: &DiagMat, sigma_star: &DiagMat, lambda: f64) -> Result<f64> {
    check_dim(sigma.dim(), sigma_star.dim(), "fixed_point_residual")?;
    check_positive(sigma, "fixed_point_residual learned covariance")?;
    check_positive(sigma_star, "fixed_point_residual true covariance")?;
    let mut worst = 0.0_f64;
    for (&s, &ss) in sigma.diag().iter().zip(sigma_star.diag()) {
        let m = 1.0 / (lambda * s - 1.0);
        let lhs = 1.0 / ss;
        let rhs = (1.0 + m) * (1.0 + m) / s;
        worst = worst.max(((lhs - rhs) * ss).abs());
    }
    Ok(worst)
}

/// A-priori sandwich for the multiplier of [`solve_lambda`] at budget ε²:
/// `lower = (d/tr(Σ))·(1 + √(d·σ_min(Σ*)/ε²))` and
/// `upper = (1/σ_min(Σ))·(√(‖Σ*‖_F·d/ε²) + 1)`.
///
/// Derivation sketch: `ε² ≥ (σ_min(Σ*)/d)·tr(M)²` (Cauchy–Schwarz) with
/// `tr(M) ≥ d²/(λ·tr(Σ) − d)` (AM–HM) gives the lower bound;
/// `ε² ≤ tr(Σ*)/(λ·σ_min(Σ) − 1)²` with `tr(Σ*) ≤ √d·‖Σ*‖_F` gives the
/// upper. Both collapse to the exact scalar answer `λ = 1 + 1/ε` at
/// `Σ = Σ* = (1)`.
///
/// # Errors
/// Non-positive ε or variances, dimension mismatch.
pub fn lambda_bounds(sigma_star: &DiagMat, sigma: &DiagMat, epsilon: f64) -> Result<(f64, f64)> {
    check_dim(sigma.dim(), sigma_star.dim(), "lambda_bounds covariances")?;
    check_positive(sigma, "lambda_bounds learned covariance")?;
    check_positive(sigma_star, "lambda_bounds true covariance")?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::NonPositive {
            what: "lambda_bounds epsilon",
            value: epsilon,
        });
    }
    let budget = epsilon * epsilon;
    let d = sigma.dim() as f64;
    let lower = d / sigma.trace() * (1.0 + (d * sigma_star.min_entry() / budget).sqrt());
    let upper = 1.0 / sigma.min_entry() * ((sigma_star.frobenius() * d / budget).sqrt() + 1.0);
    Ok((lower, upper))
}

/// Condition number and worst-case gradient alignment of a likelihood test
/// with covariance Σ: `κ = σ_max/σ_min` and
/// `min_{x≠0} cos∠(Σ⁻¹x, x) = 2√κ/(1+κ)`.
///
/// # Errors
/// Non-positive variances.
pub fn alignment_stats(sigma: &DiagMat) -> Result<(f64, f64)> {
    check_positive(sigma, "alignment_stats covariance")?;
    let kappa = sigma.max_entry() / sigma.min_entry();
    let worst_cosine = 2.0 * kappa.sqrt() / (1.0 + kappa);
    Ok((kappa, worst_cosine))
}

/// Alignment cosine at one point: `cos∠(Σ⁻¹x, x)
/// = xᵀΣ⁻¹x / (‖x‖·‖Σ⁻¹x‖)`. Brute-force minimization of this quantity over
/// unit vectors is the oracle for [`alignment_stats`].
///
/// # Errors
/// Non-positive variances, dimension mismatch, or `x = 0`.
pub fn alignment_cosine(sigma: &DiagMat, x: &[f64]) -> Result<f64> {
    check_dim(sigma.dim(), x.len(), "alignment_cosine input")?;
    check_positive(sigma, "alignment_cosine covariance")?;
    let nx = numerics::norm2(x);
    if nx == 0.0 {
        return Err(Error::ZeroVector {
            what: "alignment_cosine x",
        });
    }
    let sx: Vec64 = x.iter().zip(sigma.diag()).map(|(x, s)| x / s).collect();
    Ok(numerics::dot(x, &sx) / (nx * numerics::norm2(&sx)))
}

/// Mahalanobis distance `√((a−b)ᵀΣ⁻¹(a−b))` induced by the likelihood test.
///
/// # Errors
/// Dimension mismatch or non-positive variance.
pub fn mahalanobis(params: &GaussianParams, a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(params.dim(), a.len(), "mahalanobis first input")?;
    check_dim(params.dim(), b.len(), "mahalanobis second input")?;
    check_positive(&params.sigma, "mahalanobis covariance")?;
    Ok(a.iter()
        .zip(b)
        .zip(params.sigma.diag())
        .map(|((a, b), s)| (a - b) * (a - b) / s)
        .sum::<f64>()
        .sqrt())
}

/// Population adversarial NLL of Θ against the operator adversary at budget
/// ε²: `E_x[nll(x + M*(x−μ); Θ)]`, with `M*` re-solved at Θ (the Danskin
/// outer value). For ε = 0 this is the plain population NLL.
///
/// Closed form: `½Σᵢ aᵢ(σ*ᵢ + (μ*ᵢ−μᵢ)²)/σᵢ + ½Σᵢ log σᵢ + (d/2)ln 2π`
/// with `A = (I+M*)²`.
///
/// # Errors
/// As [`solve_lambda`]; ε < 0.
pub fn adversarial_population_nll(
    params: &GaussianParams,
    mu_star: &[f64],
    sigma_star: &DiagMat,
    epsilon: f64,
) -> Result<f64> {
    check_dim(params.dim(), mu_star.len(), "adversarial_population_nll mean")?;
    check_dim(
        params.dim(),
        sigma_star.dim(),
        "adversarial_population_nll covariance",
    )?;
    if epsilon < 0.0 {
        return Err(Error::NonPositive {
            what: "adversarial_population_nll epsilon",
            value: epsilon,
        });
    }
    let m_star = if epsilon == 0.0 {
        DiagMat::constant(params.dim(), 0.0)
    } else {
        let lambda = solve_lambda(&params.sigma, sigma_star, epsilon)?;
        params.sigma.map(|s| 1.0 / (lambda * s - 1.0))
    };
    Ok(population_nll_at(params, mu_star, sigma_star, &m_star))
}

/// Population NLL of Θ under a *fixed* adversarial operator M — the inner
/// expectation `E_x[nll(x + M(x−μ); Θ)]`, `x ~ N(μ*, Σ*)`, before
/// maximizing over M:
/// `½Σᵢ [aᵢ(σ*ᵢ + (μ*ᵢ−μᵢ)²)/σᵢ + log σᵢ] + (d/2)·ln 2π`, `A = (I+M)²`.
///
/// [`population_gradient`] is its exact (T, m)-gradient; for the solved
/// `M*` at μ = μ* this also equals the Danskin gradient of
/// [`adversarial_population_nll`].
pub fn population_nll_at(
    params: &GaussianParams,
    mu_star: &[f64],
    sigma_star: &DiagMat,
    m: &DiagMat,
) -> f64 {
    let d = params.dim();
    let mut acc = 0.5 * d as f64 * LN_2PI;
    let rows = m
        .diag()
        .iter()
        .zip(params.sigma.diag())
        .zip(params.mu.iter().zip(mu_star))
        .zip(sigma_star.diag());
    for (((&mi, &s), (&mu_i, &mu_star_i)), &s_star) in rows {
        let a = (1.0 + mi) * (1.0 + mi);
        let dm = mu_star_i - mu_i;
        acc += 0.5 * (a * (s_star + dm * dm) / s + s.ln());
    }
    acc
}

/// Population gradient of the adversarial NLL in natural parameters at a
/// fixed adversary `M` (the Danskin subgradient once `M = M*`):
/// `∇_T = ½(A·Σ* − T⁻¹) + ½A(μ*∘μ* − μ∘μ)`, `∇_m = A·(μ − μ*)`, with
/// `A = (I+M)²` and `μ = T⁻¹m`.
///
/// This is the exact partial gradient of [`adversarial_population_nll`]'s
/// inner expectation at fixed `M` — it matches finite differences at every
/// (T, m), not just on the μ = μ* manifold where the second ∇_T term
/// vanishes. Zeroing it forces μ = μ* (m-block) and then the covariance
/// fixed point `Σ = Σ*(M+I)²` (T-block).
pub fn population_gradient(
    nat: &NaturalParams,
    mu_star: &[f64],
    sigma_star: &DiagMat,
    m: &DiagMat,
) -> (Vec64, Vec64) {
    let d = nat.m.len();
    let mut g_t = vec![0.0; d];
    let mut g_m = vec![0.0; d];
    for i in 0..d {
        let a = (1.0 + m.diag()[i]) * (1.0 + m.diag()[i]);
        let t = nat.t.diag()[i];
        let mu_i = nat.m[i] / t;
        let mu_star_i = mu_star[i];
        g_t[i] = 0.5 * (a * sigma_star.diag()[i] - 1.0 / t)
            + 0.5 * a * (mu_star_i * mu_star_i - mu_i * mu_i);
        g_m[i] = a * (mu_i - mu_star_i);
    }
    (g_t, g_m)
}

/// Outer-objective evaluation: solves the inner adversary at Θ and returns
/// `(objective, λ, M*)`.
fn outer_eval(
    nat: &NaturalParams,
    mu_star: &[f64],
    sigma_star: &DiagMat,
    epsilon: f64,
) -> Result<(f64, f64, DiagMat)> {
    let params = nat.to_params()?;
    let lambda = solve_lambda(&params.sigma, sigma_star, epsilon)?;
    let m = params.sigma.map(|s| 1.0 / (lambda * s - 1.0));
    let obj = population_nll_at(&params, mu_star, sigma_star, &m);
    Ok((obj, lambda, m))
}

/// Adversarially robust maximum-likelihood fit of (μ, Σ) at L2 budget ε.
///
/// Outer minimization runs in natural parameters (T, m): each iteration
/// solves the inner adversary `M* = (λΣ − I)⁻¹` via [`solve_lambda`] and
/// takes a [`population_gradient`] step, halving the step whenever the
/// population objective (with M* re-solved at the proposal) would increase.
/// In `Population` mode, once the gradient norm reaches `opts.grad_tol`, a
/// fixed-point polish alternates λ ← solve_lambda(Σ) and
/// Σ ← [`robust_cov_closed_form`]\(Σ*, λ) to machine precision, so the
/// returned λ is accurate well beyond the gradient tolerance.
///
/// ε = 0 returns Θ* exactly (λ = +∞, M = 0). The small-budget regime
/// `ε² < σ_min(Σ*)` is required.
///
/// # Errors
/// Invalid inputs; λ-solver failure; non-convergence (final μ farther than
/// 1e-6 from μ* or fixed-point residual above 1e-6) in `Population` mode.
pub fn adversarial_mle_fit(
    mu_star: &[f64],
    sigma_star: &DiagMat,
    epsilon: f64,
    opts: &FitOptions,
) -> Result<RobustFitResult> {
    check_dim(sigma_star.dim(), mu_star.len(), "adversarial_mle_fit mean")?;
    check_positive(sigma_star, "adversarial_mle_fit covariance")?;
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::NonPositive {
            what: "adversarial_mle_fit epsilon",
            value: epsilon,
        });
    }
    if !(opts.step.is_finite() && opts.step > 0.0 && opts.grad_tol > 0.0) {
        return Err(Error::InvalidConfig(
            "adversarial_mle_fit needs positive step and grad_tol".into(),
        ));
    }
    let d = sigma_star.dim();
    if epsilon == 0.0 {
        return Ok(RobustFitResult {
            params: GaussianParams::new(mu_star.to_vec(), sigma_star.clone())?,
            lambda: f64::INFINITY,
            m_star: DiagMat::constant(d, 0.0),
            trace_residual: 0.0,
            iterations: 0,
        });
    }
    if epsilon * epsilon >= sigma_star.min_entry() {
        return Err(Error::InvalidConfig(format!(
            "budget epsilon^2 = {} is outside the small-budget regime \
             (requires epsilon^2 < sigma_min(Sigma*) = {})",
            epsilon * epsilon,
            sigma_star.min_entry()
        )));
    }

    let init = match &opts.init {
        Some(p) => {
            check_dim(d, p.dim(), "adversarial_mle_fit init")?;
            p.clone()
        }
        None => GaussianParams::new(mu_star.to_vec(), sigma_star.clone())?,
    };
    let mut nat = init.to_natural();

    match opts.mode {
        FitMode::Population => fit_population(nat, mu_star, sigma_star, epsilon, opts),
        FitMode::Sampled { batch, seed } => {
            if batch == 0 {
                return Err(Error::InvalidConfig(
                    "sampled fit mode needs batch >= 1".into(),
                ));
            }
            fit_sampled(&mut nat, mu_star, sigma_star, epsilon, opts, batch, seed)
        }
    }
}

fn fit_population(
    mut nat: NaturalParams,
    mu_star: &[f64],
    sigma_star: &DiagMat,
    epsilon: f64,
    opts: &FitOptions,
) -> Result<RobustFitResult> {
    let (mut obj, mut lambda, mut m_op) = outer_eval(&nat, mu_star, sigma_star, epsilon)?;
    let mut iterations = 0;
    // Warm-started backtracking scale for the preconditioned direction,
    // capped at the full Newton step.
    let mut eta_start = opts.step.min(1.0);
    for it in 0..opts.max_iters {
        iterations = it;
        let (g_t, g_m) = population_gradient(&nat, mu_star, sigma_star, &m_op);
        let gnorm = (numerics::dot(&g_t, &g_t) + numerics::dot(&g_m, &g_m)).sqrt();
        if gnorm <= opts.grad_tol {
            break;
        }
        // Precondition per coordinate by the exact 2×2 Hessian of the
        // fixed-M objective in (tᵢ, mᵢ),
        //   H = [[1/(2t²) + aμ²/t, −aμ/t], [−aμ/t, a/t]],  det = a/(2t³) > 0,
        // so the step direction stays a descent direction while the raw
        // gradient's (σ_max/σ_min)² conditioning cancels. Fixed points are
        // unchanged: p = 0 iff g = 0.
        let d = nat.m.len();
        let mut p_t = vec![0.0; d];
        let mut p_m = vec![0.0; d];
        for i in 0..d {
            let t = nat.t.diag()[i];
            let mu_i = nat.m[i] / t;
            let mi = m_op.diag()[i];
            let a = (1.0 + mi) * (1.0 + mi);
            p_t[i] = 2.0 * t * t * (g_t[i] + mu_i * g_m[i]);
            p_m[i] = t / a * g_m[i] + 2.0 * t * t * mu_i * (g_t[i] + mu_i * g_m[i]);
        }
        // Backtracking line search: shrink until the proposal keeps T
        // positive and does not increase the population objective (up to
        // rounding slack).
        let mut eta = eta_start;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_t: Vec64 = nat
                .t
                .diag()
                .iter()
                .zip(&p_t)
                .map(|(t, p)| t - eta * p)
                .collect();
            if cand_t.iter().any(|&t| t <= 0.0) {
                eta *= 0.5;
                continue;
            }
            let cand = NaturalParams {
                t: DiagMat::new(cand_t)?,
                m: nat
                    .m
                    .iter()
                    .zip(&p_m)
                    .map(|(m, p)| m - eta * p)
                    .collect(),
            };
            match outer_eval(&cand, mu_star, sigma_star, epsilon) {
                Ok((cand_obj, cand_lambda, cand_m)) => {
                    if cand_obj <= obj + 1e-14 * (1.0 + obj.abs()) {
                        nat = cand;
                        obj = cand_obj;
                        lambda = cand_lambda;
                        m_op = cand_m;
                        accepted = true;
                        break;
                    }
                    eta *= 0.5;
                }
                // A transiently infeasible proposal (λ branch lost): shrink.
                Err(_) => eta *= 0.5,
            }
        }
        if !accepted {
            // No descent possible at f64 resolution; hand over to the polish.
            break;
        }
        eta_start = (2.0 * eta).min(1.0);
    }

    // Fixed-point polish: alternate the closed-form updates to machine
    // precision. μ is held at its converged value (≈ μ*).
    let params = nat.to_params()?;
    let mut sigma = params.sigma.clone();
    let mut best = (
        fixed_point_residual(&sigma, sigma_star, lambda)?,
        sigma.clone(),
        lambda,
    );
    for _ in 0..200 {
        let lam = solve_lambda(&sigma, sigma_star, epsilon)?;
        let next = robust_cov_closed_form(sigma_star, lam)?;
        let res = fixed_point_residual(&next, sigma_star, lam)?;
        let moved = sigma
            .diag()
            .iter()
            .zip(next.diag())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0_f64, f64::max);
        sigma = next;
        if res < best.0 {
            best = (res, sigma.clone(), lam);
        }
        if moved < 1e-15 {
            break;
        }
    }
    let (fp_residual, sigma, lambda) = best;
    let final_params = GaussianParams::new(params.mu.clone(), sigma)?;
    let mu_err = final_params
        .mu
        .iter()
        .zip(mu_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    if mu_err > 1e-6 || fp_residual > 1e-6 {
        return Err(Error::NoConverge {
            what: "adversarial_mle_fit",
            iterations,
            residual: mu_err.max(fp_residual),
        });
    }
    let m_star = final_params.sigma.map(|s| 1.0 / (lambda * s - 1.0));
    let trace = m_star
        .diag()
        .iter()
        .zip(sigma_star.diag())
        .map(|(m, ss)| ss * m * m)
        .sum::<f64>();
    Ok(RobustFitResult {
        params: final_params,
        lambda,
        m_star,
        trace_residual: (trace - epsilon * epsilon).abs(),
        iterations: iterations.max(1),
    })
}

/// Demonstration mode: minibatch estimates of the population gradient.
/// `g_T = ½((x̃−μ)∘(x̃−μ) − T⁻¹)`, `g_m = A(μ − x)` with `x̃ = x + M(x−μ)`
/// are unbiased for the population gradient at μ = μ*. Runs the full budget
/// with a decaying step; accuracy is Monte-Carlo limited.
fn fit_sampled(
    nat: &mut NaturalParams,
    mu_star: &[f64],
    sigma_star: &DiagMat,
    epsilon: f64,
    opts: &FitOptions,
    batch: usize,
    seed: u64,
) -> Result<RobustFitResult> {
    let d = nat.m.len();
    let root = RngStream::new(seed, 0);
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        let params = nat.to_params()?;
        let lambda = solve_lambda(&params.sigma, sigma_star, epsilon)?;
        let m_op = params.sigma.map(|s| 1.0 / (lambda * s - 1.0));
        let mut g_t = vec![0.0; d];
        let mut g_m = vec![0.0; d];
        let mut rng = root.substream(it as u64);
        for _ in 0..batch {
            let x = sample_gaussian(&mut rng, mu_star, sigma_star)?;
            for i in 0..d {
                let mu_i = params.mu[i];
                let a = (1.0 + m_op.diag()[i]) * (1.0 + m_op.diag()[i]);
                let xt = x[i] + m_op.diag()[i] * (x[i] - mu_i);
                let c = xt - mu_i;
                g_t[i] += 0.5 * (c * c - params.sigma.diag()[i]);
                g_m[i] += a * (mu_i - x[i]);
            }
        }
        let eta = opts.step / (1.0 + it as f64 * 1e-3) / batch as f64;
        for i in 0..d {
            let t_new = nat.t.diag()[i] - eta * g_t[i];
            if t_new > 0.0 {
                let mut diag = nat.t.diag().to_vec();
                diag[i] = t_new;
                nat.t = DiagMat::new(diag)?;
            }
            nat.m[i] -= eta * g_m[i];
        }
    }
    let params = nat.to_params()?;
    let lambda = solve_lambda(&params.sigma, sigma_star, epsilon)?;
    let m_star = params.sigma.map(|s| 1.0 / (lambda * s - 1.0));
    let trace = m_star
        .diag()
        .iter()
        .zip(sigma_star.diag())
        .map(|(m, ss)| ss * m * m)
        .sum::<f64>();
    Ok(RobustFitResult {
        params,
        lambda,
        m_star,
        trace_residual: (trace - epsilon * epsilon).abs(),
        iterations,
    })
}

/// Spread statistics of the realized distortion `‖Mv‖₂`, `v ~ N(0, Σ*)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistortionSpread {
    /// Mean of `‖Mv‖₂` over the samples.
    pub mean: f64,
    /// Standard deviation divided by the mean.
    pub rel_std: f64,
}

/// Diagnostic for the expected-norm relaxation: samples `‖M*v‖₂` at the
/// solved multiplier and reports its spread. As d grows the relative spread
/// shrinks, which is why the expected-squared-norm budget and the
/// almost-sure budget agree in high dimension.
///
/// # Errors
/// As [`solve_lambda`]; `n_samples == 0`.
pub fn distortion_spread(
    sigma: &DiagMat,
    sigma_star: &DiagMat,
    epsilon: f64,
    n_samples: usize,
    rng: &RngStream,
) -> Result<DistortionSpread> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig(
            "distortion_spread needs n_samples >= 1".into(),
        ));
    }
    let lambda = solve_lambda(sigma, sigma_star, epsilon)?;
    let m = sigma.map(|s| 1.0 / (lambda * s - 1.0));
    let zeros = vec![0.0; sigma.dim()];
    let norms = parallel::try_indexed_map(n_samples, |i| {
        let mut sub = rng.substream(i as u64);
        let v = sample_gaussian(&mut sub, &zeros, sigma_star)?;
        Ok(numerics::norm2(&m.mul_vec(&v)))
    })?;
    let (mean, var) = numerics::mean_var_population(&norms);
    Ok(DistortionSpread {
        mean,
        rel_std: var.sqrt() / mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: &[f64], sigma: &[f64]) -> GaussianParams {
        GaussianParams::new(mu.to_vec(), DiagMat::new(sigma.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn nll_standard_normal_values() {
        let p = params(&[0.0], &[1.0]);
        assert!((nll(&p, &[0.0]).unwrap() - 0.5 * LN_2PI).abs() < 1e-12);
        assert!((nll(&p, &[2.0]).unwrap() - (2.0 + 0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn classify_uses_precision_weighted_score_and_breaks_ties_up() {
        let p = params(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(classify(&p, &[0.5, -7.0]).unwrap(), 1);
        assert_eq!(classify(&p, &[-0.5, 3.0]).unwrap(), -1);
        // Exact tie: score 0.
        assert_eq!(classify(&p, &[0.0, 123.0]).unwrap(), 1);
    }

    #[test]
    fn classify_is_odd() {
        let p = params(&[0.7, -0.3], &[2.0, 0.5]);
        let x = vec![1.3, 0.4];
        let neg: Vec64 = x.iter().map(|v| -v).collect();
        assert_eq!(
            classify(&p, &x).unwrap(),
            -classify(&p, &neg).unwrap()
        );
    }

    #[test]
    fn mle_fit_hand_example() {
        let samples = vec![
            (vec![1.0, 2.0], 1i8),
            (vec![-1.0, -2.0], -1),
            (vec![3.0, 0.0], 1),
            (vec![-3.0, 0.0], -1),
        ];
        let p = mle_fit(&samples).unwrap();
        assert_eq!(p.mu, vec![2.0, 1.0]);
        assert_eq!(p.sigma.diag(), &[1.0, 1.0]);
    }

    #[test]
    fn mle_fit_rejects_degenerate_input() {
        let samples = vec![(vec![1.0], 1i8), (vec![1.0], 1)];
        assert!(matches!(
            mle_fit(&samples),
            Err(Error::NonPositive { .. })
        ));
        assert!(mle_fit(&[(vec![1.0], 1i8)]).is_err());
        assert!(mle_fit(&[(vec![1.0], 2i8), (vec![2.0], 1)]).is_err());
    }

    #[test]
    fn optimal_delta_scalar_case() {
        let p = params(&[0.0], &[1.0]);
        let d = optimal_delta(&p, &[1.0], 0.5).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn optimal_delta_rejects_center_point() {
        let p = params(&[1.0, 2.0], &[1.0, 1.0]);
        assert!(matches!(
            optimal_delta(&p, &[1.0, 2.0], 0.5),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn lagrangian_delta_identity_case() {
        let p = params(&[0.0, 0.0], &[1.0, 1.0]);
        let d = lagrangian_delta(&p, &[1.0, 1.0], LagrangianConfig { c: 2.0 }).unwrap();
        assert_eq!(d, vec![1.0, 1.0]);
    }

    #[test]
    fn lagrangian_rejects_non_concave_penalty() {
        let p = params(&[0.0], &[0.25]);
        // 1/sigma_min = 4; C = 4 is singular, C < 4 non-concave.
        assert!(lagrangian_delta(&p, &[1.0], LagrangianConfig { c: 4.0 }).is_err());
        assert!(lagrangian_delta(&p, &[1.0], LagrangianConfig { c: 3.0 }).is_err());
        assert!(lagrangian_delta(&p, &[1.0], LagrangianConfig { c: 4.5 }).is_ok());
    }

    #[test]
    fn vulnerability_gap_isotropic_value() {
        let gap = vulnerability_gap(&DiagMat::identity(2), 2.0).unwrap();
        assert!((gap - 6.0).abs() < 1e-12);
    }

    #[test]
    fn robust_cov_closed_form_values() {
        // λ → ∞ recovers Σ*.
        let s = robust_cov_closed_form(&DiagMat::identity(3), 1e8).unwrap();
        for &v in s.diag() {
            assert!((v - 1.0).abs() < 1e-7);
        }
        // λ = 4, Σ* = I: 0.25 + 0.5 + √0.5.
        let s = robust_cov_closed_form(&DiagMat::identity(1), 4.0).unwrap();
        assert!((s.diag()[0] - (0.75 + 0.5_f64.sqrt())).abs() < 1e-12);
        let res = fixed_point_residual(&s, &DiagMat::identity(1), 4.0).unwrap();
        assert!(res < 1e-10, "fixed point residual {res}");
    }

    #[test]
    fn solve_lambda_scalar_case() {
        let one = DiagMat::identity(1);
        let l = solve_lambda(&one, &one, 0.5).unwrap();
        assert!((l - 3.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn lambda_bounds_scalar_case_is_tight() {
        let one = DiagMat::identity(1);
        for eps in [0.5, 0.2, 0.1] {
            let (lo, hi) = lambda_bounds(&one, &one, eps).unwrap();
            let exact = 1.0 + 1.0 / eps;
            assert!((lo - exact).abs() < 1e-12);
            assert!((hi - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_stats_examples() {
        let (k, w) = alignment_stats(&DiagMat::identity(4)).unwrap();
        assert_eq!((k, w), (1.0, 1.0));
        let (k, w) = alignment_stats(&DiagMat::new(vec![4.0, 1.0]).unwrap()).unwrap();
        assert_eq!(k, 4.0);
        assert!((w - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_examples() {
        let p = params(&[0.0, 0.0], &[4.0, 1.0]);
        assert_eq!(mahalanobis(&p, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mahalanobis(&p, &[2.0, 0.0], &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        let id = params(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(
            (mahalanobis(&id, &[3.0, 4.0], &[0.0, 0.0]).unwrap() - 5.0).abs() < 1e-12
        );
    }

    #[test]
    fn natural_round_trip_is_identity() {
        let p = params(&[1.5, -2.0, 0.1], &[0.3, 4.0, 1.7]);
        let back = p.to_natural().to_params().unwrap();
        for i in 0..3 {
            assert!((back.mu[i] - p.mu[i]).abs() <= 1e-12 * p.mu[i].abs().max(1.0));
            assert!(
                ((back.sigma.diag()[i] - p.sigma.diag()[i]) / p.sigma.diag()[i]).abs() <= 1e-12
            );
        }
    }

    #[test]
    fn fit_with_zero_budget_returns_standard_mle() {
        let mu = vec![1.0, -0.5];
        let sig = DiagMat::new(vec![1.0, 0.3]).unwrap();
        let fit = adversarial_mle_fit(&mu, &sig, 0.0, &FitOptions::default()).unwrap();
        assert_eq!(fit.params.mu, mu);
        assert_eq!(fit.params.sigma, sig);
        assert_eq!(fit.lambda, f64::INFINITY);
        assert_eq!(fit.trace_residual, 0.0);
    }

    #[test]
    fn fit_rejects_large_budgets() {
        let sig = DiagMat::new(vec![1.0, 0.04]).unwrap();
        let err = adversarial_mle_fit(&[0.0, 0.0], &sig, 0.5, &FitOptions::default());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
