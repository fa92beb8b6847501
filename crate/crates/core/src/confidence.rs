//! Observation confidence and adaptive prior weights, with robust scales
//! from the weighted median absolute deviation.

use crate::error::{dims, param, Result};

/// Gaussian consistency constant of the MAD.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Lower bound applied to every estimated scale.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Smallest `v` among `values` whose weight mass `Σ_{values ≤ v} w` reaches
/// half the total weight.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return dims(format!("{} values but {} weights", values.len(), weights.len()));
    }
    if values.is_empty() {
        return param("weighted median of an empty set");
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return param("weights must be finite and nonnegative");
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if total <= 0.0 {
        return param("weights sum to zero");
    }
    let half = 0.5 * total;
    let mut acc = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        // accumulate all entries sharing a value before testing
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            acc += pairs[i].1;
            i += 1;
        }
        if acc >= half {
            return Ok(v);
        }
    }
    Ok(pairs[pairs.len() - 1].0)
}

/// Weighted median of absolute deviations from the weighted median.
pub fn weighted_mad(values: &[f64], weights: &[f64]) -> Result<f64> {
    let med = weighted_median(values, weights)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    weighted_median(&dev, weights)
}

/// `σ_noise = 1.4826 · mad(r, β)`, floored.
pub fn noise_scale(residual: &[f64], beta_prev: &[f64]) -> Result<f64> {
    Ok((MAD_TO_SIGMA * weighted_mad(residual, beta_prev)?).max(SCALE_FLOOR))
}

/// `σ_prior = mad(z, α)`, floored. No consistency factor.
pub fn prior_scale(z: &[f64], alpha_prev: &[f64]) -> Result<f64> {
    Ok(weighted_mad(z, alpha_prev)?.max(SCALE_FLOOR))
}

/// Confidence of one observation: 1 inside the noise scale, `σ/|r|` beyond.
#[inline]
pub fn observation_weight(r: f64, sigma_noise: f64) -> f64 {
    let a = r.abs();
    if a <= sigma_noise {
        1.0
    } else {
        sigma_noise / a
    }
}

/// Adaptive prior weight: 1 inside the scale, `p (σ/|z|)^{1-p}` beyond.
#[inline]
pub fn prior_weight(z: f64, sigma_prior: f64, p: f64) -> f64 {
    let a = z.abs();
    if a <= sigma_prior {
        1.0
    } else {
        p * (sigma_prior / a).powf(1.0 - p)
    }
}

pub fn observation_weights(residual: &[f64], sigma_noise: f64) -> Vec<f64> {
    assert!(sigma_noise > 0.0, "noise scale must be positive");
    residual.iter().map(|&r| observation_weight(r, sigma_noise)).collect()
}

pub fn prior_weights_fn(z: &[f64], sigma_prior: f64, p: f64) -> Vec<f64> {
    assert!(sigma_prior > 0.0, "prior scale must be positive");
    assert!((0.0..=1.0).contains(&p), "sparsity must lie in [0, 1]");
    z.iter().map(|&v| prior_weight(v, sigma_prior, p)).collect()
}

/// Weights and scales carried between outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    /// Observation weights `B`, stacked frame by frame.
    pub beta: Vec<f64>,
    /// Prior weights `A`, stacked per shift.
    pub alpha: Vec<f64>,
    pub sigma_noise: f64,
    pub sigma_prior: f64,
}

impl ConfidenceState {
    /// All-ones weights used before the first update.
    pub fn uninformative(observations: usize, prior_rows: usize) -> Self {
        Self {
            beta: vec![1.0; observations],
            alpha: vec![1.0; prior_rows],
            sigma_noise: 1.0,
            sigma_prior: 1.0,
        }
    }
}
