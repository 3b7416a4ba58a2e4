//! `theory`: drives the closed-form Gaussian layer end to end and
//! cross-checks every quantity against an independent estimate.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rfeat::gaussian::{
    adversarial_mle_fit, alignment_stats, distortion_spread, lambda_bounds, mle_fit,
    vulnerability_gap, vulnerability_gap_mc, FitOptions, GaussianParams,
};
use rfeat::numerics::{DiagMat, Vec64};
use rfeat::rng::RngStream;

use crate::configs::{derive_seed, TheoryConfig};
use crate::manifest::write_manifest;
use crate::report::{cell, csv_writer, opt_cell, write_json, Check, Checks};

const SLOT_MLE: u64 = 0;
const SLOT_MONTE_CARLO: u64 = 1;
const SLOT_SPREAD: u64 = 2;

#[derive(Serialize)]
struct StandardMleSection {
    samples: usize,
    mu_hat: Vec64,
    sigma_hat: Vec64,
    max_abs_mean_error: f64,
    max_rel_cov_error: f64,
}

#[derive(Serialize)]
struct VulnerabilitySection {
    penalty_c: f64,
    gap_closed_form: f64,
    gap_monte_carlo: f64,
    mc_samples: usize,
    relative_error: f64,
}

#[derive(Serialize)]
struct AlignmentSection {
    condition_number: f64,
    worst_cosine: f64,
}

#[derive(Serialize)]
struct EpsilonRun {
    epsilon: f64,
    /// Budget-constraint multiplier; `null` with no adversary (ε = 0).
    lambda: Option<f64>,
    mu_r: Vec64,
    sigma_r: Vec64,
    max_abs_mean_error: f64,
    budget_residual: f64,
    /// Implicit covariance-equation residual; `null` at ε = 0.
    fixed_point_residual: Option<f64>,
    /// Explicit multiplier bounds at the learned covariance; `null` at ε = 0.
    lambda_lower: Option<f64>,
    lambda_upper: Option<f64>,
    alignment: AlignmentSection,
    /// Smallest per-coordinate inflation σᵣᵢ/σ*ᵢ.
    min_inflation: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct SpreadRow {
    dim: usize,
    samples: usize,
    mean: f64,
    rel_std: f64,
}

#[derive(Serialize)]
struct TheoryReport {
    version: String,
    dim: usize,
    mu_star: Vec64,
    sigma_star: Vec64,
    standard_mle: StandardMleSection,
    vulnerability: VulnerabilitySection,
    alignment_truth: AlignmentSection,
    runs: Vec<EpsilonRun>,
    distortion: Vec<SpreadRow>,
    checks: Vec<Check>,
    all_checks_passed: bool,
}

pub fn run(config: &TheoryConfig, out_dir: &Path) -> Result<bool> {
    let sigma_star = DiagMat::new(config.sigma_star.clone())
        .context("theory config: sigma_star must be a positive diagonal")?;
    let d = sigma_star.dim();
    if config.mu_star.len() != d {
        bail!(
            "theory config: mu_star has {} entries but sigma_star has {}",
            config.mu_star.len(),
            d
        );
    }
    if config.mle_samples == 0 || config.mc_samples == 0 || config.spread_samples == 0 {
        bail!("theory config: sample counts must be positive");
    }
    let mut epsilon_grid = config.epsilon_grid.clone();
    if epsilon_grid.is_empty() {
        bail!("theory config: epsilon_grid must be nonempty");
    }
    epsilon_grid.sort_by(|a, b| a.partial_cmp(b).expect("finite epsilons"));

    let seeds: BTreeMap<String, u64> = [
        ("global".to_string(), config.seed),
        ("mle".to_string(), derive_seed(config.seed, SLOT_MLE)),
        ("monte_carlo".to_string(), derive_seed(config.seed, SLOT_MONTE_CARLO)),
        ("spread".to_string(), derive_seed(config.seed, SLOT_SPREAD)),
    ]
    .into();
    let mut checks = Checks::new();

    // --- Finite-sample standard MLE --------------------------------------
    // Constructing the parameter pair validates dimensions and positivity.
    GaussianParams::new(config.mu_star.clone(), sigma_star.clone())
        .context("theory config: invalid true parameters")?;
    let mut rng = RngStream::new(seeds["mle"], 0);
    let samples: Vec<(Vec64, i8)> = (0..config.mle_samples)
        .map(|_| {
            let y = rng.sign();
            let x: Vec64 = config
                .mu_star
                .iter()
                .zip(sigma_star.diag())
                .map(|(&m, &s)| y * m + s.sqrt() * rng.standard_normal())
                .collect();
            (x, y as i8)
        })
        .collect();
    let fitted = mle_fit(&samples).context("standard MLE")?;
    let n = config.mle_samples as f64;
    let mut max_abs_mean_error: f64 = 0.0;
    let mut max_rel_cov_error: f64 = 0.0;
    let mut mle_ok = true;
    for i in 0..d {
        let mu_err = (fitted.mu[i] - config.mu_star[i]).abs();
        let cov_rel = (fitted.sigma.diag()[i] - sigma_star.diag()[i]).abs() / sigma_star.diag()[i];
        max_abs_mean_error = max_abs_mean_error.max(mu_err);
        max_rel_cov_error = max_rel_cov_error.max(cov_rel);
        // Six standard errors: √(σ*/n) for the mean, √(2/n) relative for the
        // variance of a Gaussian.
        mle_ok &= mu_err <= 6.0 * (sigma_star.diag()[i] / n).sqrt();
        mle_ok &= cov_rel <= 6.0 * (2.0 / n).sqrt();
    }
    checks.add(
        "standard-mle-recovers-parameters",
        mle_ok,
        format!(
            "max |μ̂−μ*| = {max_abs_mean_error:.3e}, max rel Σ̂ error = {max_rel_cov_error:.3e} over {} samples",
            config.mle_samples
        ),
    );

    // --- Vulnerability gap versus Monte Carlo ----------------------------
    let penalty_c = match config.penalty_c {
        Some(c) => {
            if c * sigma_star.min_entry() <= 1.0 {
                bail!(
                    "theory config: penalty_c must exceed 1/min(sigma_star) = {}",
                    1.0 / sigma_star.min_entry()
                );
            }
            c
        }
        None => 3.0 / sigma_star.min_entry(),
    };
    let gap_closed = vulnerability_gap(&sigma_star, penalty_c)?;
    let gap_mc = vulnerability_gap_mc(
        &sigma_star,
        penalty_c,
        config.mc_samples,
        &RngStream::new(seeds["monte_carlo"], 0),
    )?;
    let rel_err = (gap_closed - gap_mc).abs() / gap_closed;
    checks.add(
        "vulnerability-gap-monte-carlo",
        rel_err <= 0.02,
        format!(
            "closed form {gap_closed:.6} vs {} samples {gap_mc:.6}: relative error {rel_err:.4}",
            config.mc_samples
        ),
    );

    // --- Robust fits across the budget grid -------------------------------
    let (kappa_star, cosine_star) = alignment_stats(&sigma_star)?;
    let mut runs = Vec::with_capacity(epsilon_grid.len());
    for &eps in &epsilon_grid {
        if eps < 0.0 {
            bail!("theory config: negative epsilon {eps}");
        }
        if eps > 0.0 && eps * eps >= sigma_star.min_entry() {
            bail!(
                "theory config: epsilon {eps} outside the small-budget regime (ε² ≥ min σ*)"
            );
        }
        let fit = adversarial_mle_fit(&config.mu_star, &sigma_star, eps, &FitOptions::default())
            .with_context(|| format!("robust fit at epsilon {eps}"))?;
        let max_abs_mean_error = fit
            .params
            .mu
            .iter()
            .zip(&config.mu_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let (kappa_r, cosine_r) = alignment_stats(&fit.params.sigma)?;
        let min_inflation = fit
            .params
            .sigma
            .diag()
            .iter()
            .zip(sigma_star.diag())
            .map(|(r, s)| r / s)
            .fold(f64::INFINITY, f64::min);
        let tag = format!("eps-{eps}");
        if eps == 0.0 {
            let exact = fit.params.mu == config.mu_star
                && fit.params.sigma.diag() == sigma_star.diag();
            checks.add(
                "epsilon-zero-recovers-truth",
                exact,
                "no adversary: fit must return the true parameters bit-for-bit".to_string(),
            );
            runs.push(EpsilonRun {
                epsilon: eps,
                lambda: None,
                mu_r: fit.params.mu.clone(),
                sigma_r: fit.params.sigma.diag().to_vec(),
                max_abs_mean_error,
                budget_residual: fit.trace_residual,
                fixed_point_residual: None,
                lambda_lower: None,
                lambda_upper: None,
                alignment: AlignmentSection {
                    condition_number: kappa_r,
                    worst_cosine: cosine_r,
                },
                min_inflation,
                iterations: fit.iterations,
            });
            continue;
        }
        let fp_residual =
            rfeat::gaussian::fixed_point_residual(&fit.params.sigma, &sigma_star, fit.lambda)?;
        let (lo, hi) = lambda_bounds(&sigma_star, &fit.params.sigma, eps)?;
        checks.add(
            &format!("fit-recovers-mean-{tag}"),
            max_abs_mean_error <= 1e-6,
            format!("max |μᵣ−μ*| = {max_abs_mean_error:.3e} (tolerance 1e-6)"),
        );
        checks.add(
            &format!("fit-budget-residual-{tag}"),
            fit.trace_residual <= 1e-6,
            format!("|tr(Σ*M²)−ε²| = {:.3e} (tolerance 1e-6)", fit.trace_residual),
        );
        checks.add(
            &format!("fit-implicit-covariance-{tag}"),
            fp_residual <= 1e-6,
            format!("implicit-equation residual = {fp_residual:.3e} (tolerance 1e-6)"),
        );
        // 1e-9 relative slack: for isotropic Σ* both bounds collapse onto
        // the multiplier itself, leaving only fit convergence error.
        let in_bounds =
            lo - 1e-9 * fit.lambda <= fit.lambda && fit.lambda <= hi + 1e-9 * fit.lambda;
        checks.add(
            &format!("fit-lambda-bounds-{tag}"),
            in_bounds,
            format!("λ = {} within [{lo}, {hi}]", fit.lambda),
        );
        runs.push(EpsilonRun {
            epsilon: eps,
            lambda: Some(fit.lambda),
            mu_r: fit.params.mu.clone(),
            sigma_r: fit.params.sigma.diag().to_vec(),
            max_abs_mean_error,
            budget_residual: fit.trace_residual,
            fixed_point_residual: Some(fp_residual),
            lambda_lower: Some(lo),
            lambda_upper: Some(hi),
            alignment: AlignmentSection {
                condition_number: kappa_r,
                worst_cosine: cosine_r,
            },
            min_inflation,
            iterations: fit.iterations,
        });
    }

    let conditioning_ok = runs
        .iter()
        .all(|r| r.alignment.condition_number <= kappa_star + 1e-9);
    checks.add(
        "conditioning-never-worse",
        conditioning_ok,
        format!(
            "κ(Σᵣ) ≤ κ(Σ*) = {kappa_star:.6} across {} budgets",
            runs.len()
        ),
    );
    let cosine_ok = runs
        .iter()
        .all(|r| r.alignment.worst_cosine >= cosine_star - 1e-9);
    checks.add(
        "alignment-never-worse",
        cosine_ok,
        format!(
            "worst-case cosine ≥ {cosine_star:.6} (truth) across {} budgets",
            runs.len()
        ),
    );
    let inflation_monotone = runs
        .windows(2)
        .all(|w| w[1].min_inflation >= w[0].min_inflation - 1e-9);
    checks.add(
        "inflation-monotone-in-budget",
        inflation_monotone,
        "smallest σᵣ/σ* ratio is nondecreasing along the sorted budget grid".to_string(),
    );

    // --- Distortion concentration across dimension ------------------------
    let mut distortion = Vec::with_capacity(config.spread_dims.len());
    for (k, &dim) in config.spread_dims.iter().enumerate() {
        if dim == 0 {
            bail!("theory config: spread_dims entries must be positive");
        }
        // A mildly anisotropic spectrum keeps the diagnostic nontrivial at
        // every dimension.
        let spectrum = DiagMat::new((0..dim).map(|i| 0.5 + (i % 7) as f64 / 7.0).collect())
            .expect("positive spectrum");
        let spread = distortion_spread(
            &spectrum,
            &spectrum,
            0.3,
            config.spread_samples,
            &RngStream::new(seeds["spread"], k as u64),
        )?;
        distortion.push(SpreadRow {
            dim,
            samples: config.spread_samples,
            mean: spread.mean,
            rel_std: spread.rel_std,
        });
    }
    if distortion.len() >= 2 {
        let decreasing = distortion.windows(2).all(|w| w[1].rel_std < w[0].rel_std);
        checks.add(
            "distortion-spread-concentrates",
            decreasing,
            format!(
                "relative spread of ‖Mv‖ strictly decreases over dims {:?}",
                config.spread_dims
            ),
        );
    }

    // --- Artifacts ---------------------------------------------------------
    let mut sweep = csv_writer(&out_dir.join("theory_sweep.csv"))?;
    sweep.write_record([
        "epsilon",
        "lambda",
        "sigma_r_min",
        "sigma_r_max",
        "sigma_r_trace",
        "condition_number",
        "worst_cosine",
        "min_inflation",
    ])?;
    for r in &runs {
        let smin = r.sigma_r.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = r.sigma_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let trace: f64 = r.sigma_r.iter().sum();
        sweep.write_record([
            cell(r.epsilon),
            opt_cell(r.lambda),
            cell(smin),
            cell(smax),
            cell(trace),
            cell(r.alignment.condition_number),
            cell(r.alignment.worst_cosine),
            cell(r.min_inflation),
        ])?;
    }
    sweep.flush()?;

    let all_passed = checks.all_passed();
    let report = TheoryReport {
        version: rfeat::VERSION.to_string(),
        dim: d,
        mu_star: config.mu_star.clone(),
        sigma_star: config.sigma_star.clone(),
        standard_mle: StandardMleSection {
            samples: config.mle_samples,
            mu_hat: fitted.mu.clone(),
            sigma_hat: fitted.sigma.diag().to_vec(),
            max_abs_mean_error,
            max_rel_cov_error,
        },
        vulnerability: VulnerabilitySection {
            penalty_c,
            gap_closed_form: gap_closed,
            gap_monte_carlo: gap_mc,
            mc_samples: config.mc_samples,
            relative_error: rel_err,
        },
        alignment_truth: AlignmentSection {
            condition_number: kappa_star,
            worst_cosine: cosine_star,
        },
        runs,
        distortion,
        checks: checks.into_items(),
        all_checks_passed: all_passed,
    };
    write_json(&out_dir.join("theory_report.json"), &report)?;
    write_manifest(out_dir, "theory", config, &seeds)?;
    Ok(all_passed)
}
