//! Small dense-vector numerics: inner products, L2 geometry, bracketed
//! root-finding, finite differences, and the indexed-map helpers every
//! per-sample loop in the crate is built on.
//!
//! Everything operates on plain `&[f64]` slices. These are low-level
//! building blocks: shape agreement is the caller's job and is enforced with
//! documented panics rather than `Result`s (higher layers validate input and
//! return [`crate::Error`] before calling in here).
//!
//! # Parallelism
//!
//! [`parallel::indexed_map`] evaluates `f(0..n)` — on rayon when the
//! `parallel` feature is enabled (the default), sequentially otherwise.
//! [`parallel::indexed_map_seq`] is always sequential and exists so
//! benchmarks can compare both code paths in one build. Both return results
//! in index order; callers reduce sequentially over that order, which makes
//! every reduction in the crate independent of thread count.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Deserializer, Serialize};

/// Dense vector of `f64` entries; all public APIs require finite entries.
pub type Vec64 = Vec<f64>;

/// Diagonal `d×d` matrix stored as its diagonal.
///
/// Houses every matrix in the Gaussian theory (Σ, Σ*, M, T = Σ⁻¹,
/// A = (I+M)²) — the learned covariance is restricted to diagonal matrices
/// throughout, so dense matrices appear nowhere.
///
/// Invariants: `d ≥ 1` and all entries finite. Enforced by [`DiagMat::new`]
/// and by deserialization; entry signs are *not* restricted here (M may have
/// any sign in principle), positivity is checked where required.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DiagMat {
    diag: Vec64,
}

impl DiagMat {
    /// Wraps a diagonal, validating the type invariants.
    ///
    /// # Errors
    /// [`Error::DimMismatch`] for an empty diagonal, [`Error::NonFinite`]
    /// for NaN/infinite entries.
    pub fn new(diag: Vec64) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::DimMismatch {
                what: "DiagMat diagonal",
                expected: 1,
                got: 0,
            });
        }
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "DiagMat diagonal",
            });
        }
        Ok(Self { diag })
    }

    /// The `d×d` identity.
    pub fn identity(d: usize) -> Self {
        Self::constant(d, 1.0)
    }

    /// Constant diagonal `v·I`.
    ///
    /// # Panics
    /// If `d == 0` or `v` is not finite.
    pub fn constant(d: usize, v: f64) -> Self {
        Self::new(vec![v; d]).expect("constant diagonal must be valid")
    }

    /// Matrix dimension `d`.
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// The diagonal entries.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Consumes the matrix, returning its diagonal.
    pub fn into_diag(self) -> Vec64 {
        self.diag
    }

    /// Smallest diagonal entry.
    pub fn min_entry(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest diagonal entry.
    pub fn max_entry(&self) -> f64 {
        self.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `tr(Self)`.
    pub fn trace(&self) -> f64 {
        sum(&self.diag)
    }

    /// Frobenius norm `√(Σᵢ dᵢ²)`.
    pub fn frobenius(&self) -> f64 {
        norm2(&self.diag)
    }

    /// True if every entry is strictly positive.
    pub fn is_positive(&self) -> bool {
        self.diag.iter().all(|&v| v > 0.0)
    }

    /// Elementwise map producing a new diagonal.
    ///
    /// # Panics
    /// If the map produces a non-finite entry (internal invariant).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.diag.iter().map(|&v| f(v)).collect())
            .expect("DiagMat::map produced a non-finite entry")
    }

    /// Matrix–vector product (elementwise `diag ⊙ v`).
    ///
    /// # Panics
    /// If dimensions differ.
    pub fn mul_vec(&self, v: &[f64]) -> Vec64 {
        assert_eq!(self.dim(), v.len(), "DiagMat::mul_vec: length mismatch");
        self.diag.iter().zip(v).map(|(d, x)| d * x).collect()
    }
}

impl<'de> Deserialize<'de> for DiagMat {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        let diag = Vec64::deserialize(deserializer)?;
        DiagMat::new(diag).map_err(serde::de::Error::custom)
    }
}

/// Draws `x = mu + √sigma ⊙ z`, `z` standard normal from `rng`.
///
/// # Errors
/// [`Error::DimMismatch`] if `mu` and `sigma` disagree;
/// [`Error::NonPositive`] if any variance is `≤ 0`.
pub fn sample_gaussian(rng: &mut RngStream, mu: &[f64], sigma: &DiagMat) -> Result<Vec64> {
    if mu.len() != sigma.dim() {
        return Err(Error::DimMismatch {
            what: "sample_gaussian mean vs covariance",
            expected: sigma.dim(),
            got: mu.len(),
        });
    }
    if let Some(&bad) = sigma.diag().iter().find(|&&v| v <= 0.0) {
        return Err(Error::NonPositive {
            what: "sample_gaussian variance",
            value: bad,
        });
    }
    Ok(mu
        .iter()
        .zip(sigma.diag())
        .map(|(m, s)| m + s.sqrt() * rng.standard_normal())
        .collect())
}

/// Inner product `⟨a, b⟩`.
///
/// # Panics
/// If `a` and `b` differ in length.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm `‖a‖₂`.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance `‖a − b‖₂`.
///
/// # Panics
/// If `a` and `b` differ in length.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dist2: length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Elementwise difference `a − b`.
///
/// # Panics
/// If `a` and `b` differ in length.
pub fn sub(a: &[f64], b: &[f64]) -> Vec64 {
    assert_eq!(a.len(), b.len(), "sub: length mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// In-place `y ← y + alpha·x`.
///
/// # Panics
/// If `x` and `y` differ in length.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// In-place `a ← s·a`.
pub fn scale(a: &mut [f64], s: f64) {
    for ai in a {
        *ai *= s;
    }
}

/// Sequential sum in index order (deterministic for a fixed input order).
pub fn sum(a: &[f64]) -> f64 {
    a.iter().sum()
}

/// Mean of a nonempty slice.
///
/// # Panics
/// If `a` is empty.
pub fn mean(a: &[f64]) -> f64 {
    assert!(!a.is_empty(), "mean of empty slice");
    sum(a) / a.len() as f64
}

/// Population mean and variance (normalized by `n`, not `n − 1`).
///
/// # Panics
/// If `a` is empty.
pub fn mean_var_population(a: &[f64]) -> (f64, f64) {
    let m = mean(a);
    let v = a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / a.len() as f64;
    (m, v)
}

/// Projects `x` onto the closed L2 ball of the given `radius` around
/// `center`. Points already inside are returned unchanged, so the map is
/// idempotent.
///
/// # Panics
/// If lengths differ or `radius < 0`.
pub fn l2_project(x: &[f64], center: &[f64], radius: f64) -> Vec64 {
    assert_eq!(x.len(), center.len(), "l2_project: length mismatch");
    assert!(radius >= 0.0, "l2_project: negative radius");
    let d = dist2(x, center);
    if d <= radius {
        return x.to_vec();
    }
    let t = radius / d;
    center
        .iter()
        .zip(x)
        .map(|(c, xi)| c + t * (xi - c))
        .collect()
}

/// In-place clamp of every coordinate to `[0, 1]` (image box constraint).
pub fn clamp01(x: &mut [f64]) {
    for xi in x {
        *xi = xi.clamp(0.0, 1.0);
    }
}

/// Root of a continuous, strictly decreasing `g` on `[lo, hi]` by bisection.
///
/// The bracket is refined until it can no longer shrink at f64 resolution
/// (or `g` hits 0 exactly); the point with the smallest |g| seen is
/// returned, provided it meets `g_tol`.
///
/// # Arguments
/// * `g_tol` — absolute tolerance on `|g|` at the returned point.
/// * `max_iter` — bisection step budget.
///
/// # Errors
/// * [`Error::Bracket`] unless `g(lo) ≥ 0 ≥ g(hi)` with both values non-NaN
///   (`g(lo) = +∞` is accepted: it occurs naturally at branch edges).
/// * [`Error::NoConverge`] if `|g|` never reaches `g_tol`; the residual of
///   the best midpoint is reported.
pub fn bisect_decreasing<G>(g: G, lo: f64, hi: f64, g_tol: f64, max_iter: usize) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = (lo, hi);
    let glo = g(lo);
    let ghi = g(hi);
    if glo.is_nan() || ghi.is_nan() {
        return Err(Error::Bracket {
            what: "bisect_decreasing",
            detail: format!("g is NaN at an endpoint (g({lo}) = {glo}, g({hi}) = {ghi})"),
        });
    }
    if !(glo >= 0.0 && ghi <= 0.0) {
        return Err(Error::Bracket {
            what: "bisect_decreasing",
            detail: format!("need g(lo) >= 0 >= g(hi), got g({lo}) = {glo}, g({hi}) = {ghi}"),
        });
    }
    // Refine all the way to f64 interval exhaustion and only then judge the
    // tolerance: callers embed the root in smooth outer objectives, and an
    // early exit at |g| ≈ g_tol injects value noise that can dominate their
    // convergence tests near an optimum.
    let mut best = if glo.abs() <= ghi.abs() {
        (glo.abs(), lo)
    } else {
        (ghi.abs(), hi)
    };
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval exhausted at f64 resolution.
            break;
        }
        let gm = g(mid);
        if gm.is_nan() {
            return Err(Error::Bracket {
                what: "bisect_decreasing",
                detail: format!("g({mid}) is NaN inside the bracket"),
            });
        }
        if gm.abs() < best.0 {
            best = (gm.abs(), mid);
        }
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 <= g_tol {
        Ok(best.1)
    } else {
        Err(Error::NoConverge {
            what: "bisect_decreasing",
            iterations: max_iter,
            residual: best.0,
        })
    }
}

/// Expands an upper bracket for a strictly decreasing `g`: starting from
/// `hi0 > lo`, doubles the distance to `lo` until `g(hi) ≤ 0`.
///
/// # Errors
/// [`Error::Bracket`] if `g` stays positive after `max_doublings`.
pub fn expand_bracket_up<G>(g: G, lo: f64, hi0: f64, max_doublings: usize) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    assert!(hi0 > lo, "expand_bracket_up: hi0 must exceed lo");
    let mut hi = hi0;
    for _ in 0..=max_doublings {
        let v = g(hi);
        if v.is_nan() {
            return Err(Error::Bracket {
                what: "expand_bracket_up",
                detail: format!("g({hi}) is NaN"),
            });
        }
        if v <= 0.0 {
            return Ok(hi);
        }
        hi = lo + 2.0 * (hi - lo);
    }
    Err(Error::Bracket {
        what: "expand_bracket_up",
        detail: format!("g still positive at {hi} after {max_doublings} doublings"),
    })
}

/// Central-difference gradient `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
///
/// Exact (to rounding) for quadratic `f`; `O(h²)` error otherwise.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite_diff_grad: h must be positive");
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

pub mod parallel {
    //! Ordered indexed maps, parallel or sequential.

    use crate::error::Result;

    /// Evaluates `f(i)` for `i ∈ 0..n`, returning results in index order.
    ///
    /// Runs on the rayon pool when the `parallel` feature is enabled,
    /// sequentially otherwise. Because output order is index order either
    /// way, a sequential reduction over the result is identical for any
    /// thread count.
    #[cfg(feature = "parallel")]
    pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    /// Sequential fallback used when the `parallel` feature is disabled.
    #[cfg(not(feature = "parallel"))]
    pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        indexed_map_seq(n, f)
    }

    /// Always-sequential indexed map; semantically identical to
    /// [`indexed_map`] and kept public so benchmarks can compare the two in
    /// a single build.
    pub fn indexed_map_seq<T, F>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }

    /// Fallible variant of [`indexed_map`]: stops at the first error.
    #[cfg(feature = "parallel")]
    pub fn try_indexed_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Send + Sync,
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    /// Fallible variant of [`indexed_map`]: stops at the first error.
    #[cfg(not(feature = "parallel"))]
    pub fn try_indexed_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Send + Sync,
    {
        (0..n).map(f).collect()
    }
}
