//! Sample weighting for noisy regression targets.
//!
//! Batch inverse-variance (BIV) weights are `1/(σ²_k + ξ)` normalised to sum to
//! one over the minibatch. The offset ξ is chosen per minibatch as the smallest
//! value whose effective batch size reaches a minimum (`mebs`). SUNRISE and
//! UWAC weights are provided for comparison; they are per-sample factors
//! divided by the batch size and are not renormalised.

use serde::{Deserialize, Serialize};

use crate::nn::sigmoid;
use crate::uncertainty::{VarPrediction, VARIANCE_FLOOR};
use crate::{Error, Result};

/// Offset used in place of ξ = 0 when some variances are exactly zero.
pub const XI_FLOOR: f64 = 1e-8;
/// Upper end of the ξ search, relative to the largest variance.
pub const XI_SEARCH_SCALE: f64 = 1e6;
/// Hard clip of UWAC weights.
pub const UWAC_CLIP: f64 = 1.5;

/// Root finder used to resolve ξ against a minimal effective batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XiSolver {
    /// Bisection on the monotone map ξ ↦ EBS.
    #[default]
    Bisection,
    /// Derivative-free Nelder-Mead on `(EBS(ξ) - mebs)²` in log ξ.
    NelderMead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightScheme {
    Biv {
        /// Minimal effective batch size as a fraction of the batch size.
        mebs_ratio: f64,
        /// Constant ξ instead of solving against `mebs_ratio`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixed_xi: Option<f64>,
        #[serde(default)]
        solver: XiSolver,
    },
    Sunrise {
        temperature: f64,
    },
    Uwac {
        beta: f64,
    },
    Uniform,
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::Biv {
                mebs_ratio, fixed_xi, ..
            } => {
                if !(mebs_ratio > 0.0 && mebs_ratio < 1.0) {
                    return Err(Error::config(format!(
                        "mebs_ratio must lie in (0, 1), got {mebs_ratio}"
                    )));
                }
                if let Some(xi) = fixed_xi {
                    if !(xi >= 0.0 && xi.is_finite()) {
                        return Err(Error::config(format!("fixed xi must be finite and >= 0, got {xi}")));
                    }
                }
            }
            WeightScheme::Sunrise { temperature } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::config(format!(
                        "SUNRISE temperature must be > 0, got {temperature}"
                    )));
                }
            }
            WeightScheme::Uwac { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::config(format!("UWAC beta must be > 0, got {beta}")));
                }
            }
            WeightScheme::Uniform => {}
        }
        Ok(())
    }

    /// True when the weights depend on per-sample variances.
    pub fn uses_variance(&self) -> bool {
        !matches!(self, WeightScheme::Uniform)
    }

    /// Loss multipliers for a minibatch with the given per-sample variances.
    ///
    /// The weighted loss is `Σ_k weights[k] · error_k`; for BIV and uniform
    /// weighting the multipliers sum to one.
    pub fn batch_weights(&self, variances: &[f64]) -> Result<SchemeWeights> {
        let k = variances.len();
        if k == 0 {
            return Err(Error::config("cannot weight an empty batch"));
        }
        let kf = k as f64;
        let (weights, xi, mebs) = match *self {
            WeightScheme::Biv {
                mebs_ratio,
                fixed_xi,
                solver,
            } => {
                let (xi, mebs) = match fixed_xi {
                    Some(xi) => (xi, f64::NAN),
                    None => {
                        let mebs = (mebs_ratio * kf).clamp(1.0, kf);
                        (solve_xi_with(variances, mebs, solver)?, mebs)
                    }
                };
                (biv_weights(variances, xi)?.weights, xi, mebs)
            }
            WeightScheme::Uniform => (vec![1.0 / kf; k], f64::NAN, f64::NAN),
            WeightScheme::Uwac { beta } => (
                variances
                    .iter()
                    .map(|&v| uwac_weight(v.max(VARIANCE_FLOOR), beta) / kf)
                    .collect(),
                f64::NAN,
                f64::NAN,
            ),
            WeightScheme::Sunrise { temperature } => (
                variances
                    .iter()
                    .map(|&v| sunrise_weight(v.max(0.0).sqrt(), temperature) / kf)
                    .collect(),
                f64::NAN,
                f64::NAN,
            ),
        };
        let ebs = ebs_of_weights(&weights)?;
        Ok(SchemeWeights { weights, xi, ebs, mebs })
    }
}

/// Output of [`WeightScheme::batch_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeWeights {
    pub weights: Vec<f64>,
    /// Resolved ξ (NaN for schemes without one).
    pub xi: f64,
    /// Effective batch size of `weights`.
    pub ebs: f64,
    /// The minimum that ξ was solved against (NaN when not solved).
    pub mebs: f64,
}

/// Normalised inverse-variance weights for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub variances: Vec<f64>,
    pub xi: f64,
    pub weights: Vec<f64>,
}

fn check_variances(variances: &[f64]) -> Result<()> {
    if variances.is_empty() {
        return Err(Error::config("empty variance batch"));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::numerical(format!("variances must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// Unnormalised weights `1/(σ² + ξ)`, scaled so the largest is one.
fn relative_inverse_weights(variances: &[f64], xi: f64) -> Result<Vec<f64>> {
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::numerical(format!("xi must be finite and >= 0, got {xi}")));
    }
    let min_den = variances.iter().map(|v| v + xi).fold(f64::INFINITY, f64::min);
    if min_den <= 0.0 {
        return Err(Error::numerical(
            "zero inverse-variance denominator: a variance is zero and xi is zero",
        ));
    }
    Ok(variances.iter().map(|v| min_den / (v + xi)).collect())
}

/// Effective batch size `(Σ w)² / Σ w²` of arbitrary non-negative weights.
pub fn ebs_of_weights(weights: &[f64]) -> Result<f64> {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s2 > 0.0) || !s.is_finite() {
        return Err(Error::numerical("effective batch size of all-zero weights"));
    }
    Ok(s * s / s2)
}

/// Effective batch size of inverse-variance weights `1/(σ²_k + ξ)`.
pub fn ebs(variances: &[f64], xi: f64) -> Result<f64> {
    check_variances(variances)?;
    ebs_of_weights(&relative_inverse_weights(variances, xi)?)
}

/// Smallest ξ ≥ 0 whose effective batch size reaches `mebs` (bisection).
pub fn solve_xi(variances: &[f64], mebs: f64) -> Result<f64> {
    solve_xi_with(variances, mebs, XiSolver::Bisection)
}

pub fn solve_xi_with(variances: &[f64], mebs: f64, solver: XiSolver) -> Result<f64> {
    check_variances(variances)?;
    let k = variances.len() as f64;
    if !mebs.is_finite() || mebs > k {
        return Err(Error::config(format!(
            "minimal effective batch size {mebs} exceeds the batch size {k}"
        )));
    }
    let lo = if variances.iter().any(|&v| v == 0.0) {
        XI_FLOOR
    } else {
        0.0
    };
    if ebs(variances, lo)? >= mebs {
        return Ok(lo);
    }
    let max_v = variances.iter().cloned().fold(0.0, f64::max);
    let hi = (XI_SEARCH_SCALE * max_v).max(lo);
    if ebs(variances, hi)? < mebs {
        log::warn!("EBS stays below {mebs} up to xi = {hi}; using the search bound");
        return Ok(hi);
    }
    match solver {
        XiSolver::Bisection => bisect_xi(variances, mebs, lo, hi),
        XiSolver::NelderMead => nelder_mead_xi(variances, mebs, lo, hi),
    }
}

fn bisect_xi(variances: &[f64], mebs: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    // Invariant: ebs(lo) < mebs <= ebs(hi).
    for _ in 0..400 {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if ebs(variances, mid)? >= mebs {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Nelder-Mead on `u = ln ξ`, restricted to `[ln lo, ln hi]`.
fn nelder_mead_xi(variances: &[f64], mebs: f64, lo: f64, hi: f64) -> Result<f64> {
    let u_min = if lo > 0.0 {
        lo.ln()
    } else {
        (hi * 1e-16).max(f64::MIN_POSITIVE).ln()
    };
    let u_max = hi.ln();
    let objective = |u: f64| -> Result<f64> {
        let xi = u.clamp(u_min, u_max).exp();
        let e = ebs(variances, xi)? - mebs;
        Ok(e * e)
    };
    let mean_v = variances.iter().sum::<f64>() / variances.len() as f64;
    let start = mean_v.max(f64::MIN_POSITIVE).ln().clamp(u_min, u_max);
    let mut simplex = [(start, objective(start)?), (start + 1.0, objective(start + 1.0)?)];
    for _ in 0..2000 {
        if simplex[1].1 < simplex[0].1 {
            simplex.swap(0, 1);
        }
        let (best, worst) = (simplex[0], simplex[1]);
        if (worst.0 - best.0).abs() < 1e-13 * (1.0 + best.0.abs()) {
            break;
        }
        let reflected = best.0 + (best.0 - worst.0);
        let fr = objective(reflected)?;
        if fr < best.1 {
            let expanded = best.0 + 2.0 * (best.0 - worst.0);
            let fe = objective(expanded)?;
            simplex[1] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else {
            let contracted = best.0 + 0.5 * (worst.0 - best.0);
            let fc = objective(contracted)?;
            if fc < worst.1 {
                simplex[1] = (contracted, fc);
            } else {
                // Shrink towards the best vertex.
                let shrunk = best.0 + 0.5 * (worst.0 - best.0);
                simplex[1] = (shrunk, objective(shrunk)?);
            }
        }
    }
    let best = if simplex[0].1 <= simplex[1].1 {
        simplex[0]
    } else {
        simplex[1]
    };
    let mut xi = best.0.clamp(u_min, u_max).exp();
    // Step onto the feasible side of the root.
    for _ in 0..64 {
        if ebs(variances, xi)? >= mebs {
            break;
        }
        xi = (xi * (1.0 + 1e-12)).min(hi);
    }
    Ok(xi)
}

/// Normalised weights `w_k ∝ 1/(σ²_k + ξ)`.
pub fn biv_weights(variances: &[f64], xi: f64) -> Result<WeightedBatch> {
    check_variances(variances)?;
    let raw = relative_inverse_weights(variances, xi)?;
    let total: f64 = raw.iter().sum();
    Ok(WeightedBatch {
        variances: variances.to_vec(),
        xi,
        weights: raw.iter().map(|w| w / total).collect(),
    })
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::config(format!("batch lengths differ: {a}, {b}, {c}")));
    }
    Ok(())
}

/// Batch inverse-variance weighted squared error.
pub fn biv_loss(preds: &[f64], targets: &[f64], variances: &[f64], xi: f64) -> Result<f64> {
    check_lengths(preds.len(), targets.len(), variances.len())?;
    let w = biv_weights(variances, xi)?;
    Ok(w.weights
        .iter()
        .zip(preds.iter().zip(targets))
        .map(|(w, (p, t))| w * (p - t) * (p - t))
        .sum())
}

/// BIV term on `γ² σ²_target + ξ` plus `λ` times loss attenuation on the
/// predicted mean and variance.
pub fn ivrl_loss(
    preds: &[VarPrediction],
    targets: &[f64],
    target_variances: &[f64],
    gamma: f64,
    xi: f64,
    lambda: f64,
) -> Result<f64> {
    check_lengths(preds.len(), targets.len(), target_variances.len())?;
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let scaled: Vec<f64> = target_variances.iter().map(|v| gamma * gamma * v).collect();
    let mus: Vec<f64> = preds.iter().map(|p| p.mu).collect();
    let biv = biv_loss(&mus, targets, &scaled, xi)?;
    let la = if lambda > 0.0 {
        crate::uncertainty::loss_attenuation(preds, targets)?
    } else {
        0.0
    };
    Ok(biv + lambda * la)
}

/// Value and gradients of `Σ_k w_k (μ_k - y_k)² + λ · LA(μ, σ², y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    /// The weighted squared-error term.
    pub weighted: f64,
    /// The loss-attenuation term before multiplication by λ (0 without variances).
    pub attenuation: f64,
    pub total: f64,
    pub d_mu: Vec<f64>,
    /// Gradient with respect to the predicted variances (empty without variances).
    pub d_sigma2: Vec<f64>,
}

pub fn critic_loss(
    mus: &[f64],
    sigma2s: Option<&[f64]>,
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<CriticLoss> {
    check_lengths(mus.len(), targets.len(), weights.len())?;
    let k = mus.len() as f64;
    let mut weighted = 0.0;
    let mut d_mu: Vec<f64> = Vec::with_capacity(mus.len());
    for ((m, t), w) in mus.iter().zip(targets).zip(weights) {
        let r = m - t;
        weighted += w * r * r;
        d_mu.push(2.0 * w * r);
    }
    let mut attenuation = 0.0;
    let mut d_sigma2 = Vec::new();
    if let Some(s2) = sigma2s {
        if s2.len() != mus.len() {
            return Err(Error::config("variance batch length differs"));
        }
        d_sigma2.reserve(s2.len());
        for (i, (&v, (m, t))) in s2.iter().zip(mus.iter().zip(targets)).enumerate() {
            if v < VARIANCE_FLOOR {
                return Err(Error::numerical(format!("variance {v} below floor")));
            }
            let r = m - t;
            attenuation += r * r / v + v.ln();
            d_mu[i] += lambda / k * 2.0 * r / v;
            d_sigma2.push(lambda / k * (1.0 / v - r * r / (v * v)));
        }
        attenuation /= k;
    }
    let total = weighted + lambda * attenuation;
    if !total.is_finite() {
        return Err(Error::numerical(format!("critic loss is not finite ({total})")));
    }
    Ok(CriticLoss {
        weighted,
        attenuation,
        total,
        d_mu,
        d_sigma2,
    })
}

/// Inverse-variance weighted soft actor objective
/// `Σ_k w_k (α log π_k - μ_Q,k)` with `w_k ∝ 1/(σ²_Q,k + ξ)`.
pub fn actor_loss(mu_q: &[f64], sigma2_q: &[f64], log_pi: &[f64], alpha: f64, xi: f64) -> Result<f64> {
    check_lengths(mu_q.len(), sigma2_q.len(), log_pi.len())?;
    if !(alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be >= 0, got {alpha}")));
    }
    let w = biv_weights(sigma2_q, xi)?;
    Ok(weighted_actor_loss(mu_q, log_pi, alpha, &w.weights))
}

/// Actor objective with precomputed loss multipliers.
pub fn weighted_actor_loss(mu_q: &[f64], log_pi: &[f64], alpha: f64, weights: &[f64]) -> f64 {
    weights
        .iter()
        .zip(mu_q.iter().zip(log_pi))
        .map(|(w, (q, lp))| w * (alpha * lp - q))
        .sum()
}

/// SUNRISE weight `sigmoid(-σ T) + 0.5`, in `(0.5, 1]`.
pub fn sunrise_weight(sigma: f64, temperature: f64) -> f64 {
    sigmoid(-sigma * temperature) + 0.5
}

/// UWAC weight `min(β / σ², 1.5)`.
pub fn uwac_weight(sigma2: f64, beta: f64) -> f64 {
    (beta / sigma2).min(UWAC_CLIP)
}
