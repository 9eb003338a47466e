//! Rank-based fitness shaping and the Gaussian search-gradient estimator.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Centered-rank utilities: the lowest loss gets `+0.5`, the highest `-0.5`, linear in
/// between. Tied losses share the mean utility of their rank span, so the utilities
/// always sum to zero.
pub fn rank_normalize(losses: &[f64]) -> Vec<f64> {
    let n = losses.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && losses[order[end]].total_cmp(&losses[order[start]]).is_eq() {
            end += 1;
        }
        // Utility is linear in rank, so the mean utility is the utility of the mean rank.
        let mean_rank = (start + end - 1) as f64 / 2.0;
        let shared = 0.5 - mean_rank / (n - 1) as f64;
        for &idx in &order[start..end] {
            out[idx] = shared;
        }
        start = end;
    }
    out
}

/// Monte-Carlo search gradients for the mean (attack vector) and the shared σ.
///
/// `samples` are offsets from the current mean. The mean gradient is
/// `(1/λ) Σ u_k z_k / σ²`; the σ gradient averages `((z² - σ²) / σ³)` over
/// coordinates before weighting.
pub fn estimate_gradients(
    samples: &[Tensor],
    utilities: &[f64],
    sigma: f64,
) -> Result<(Tensor, f64)> {
    if samples.len() != utilities.len() || samples.is_empty() {
        return Err(Error::shape(format!(
            "{} samples but {} utilities",
            samples.len(),
            utilities.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::config("sigma must be positive"));
    }
    let lambda = samples.len() as f64;
    let var = sigma * sigma;
    let mut grad_v = Tensor::zeros(samples[0].dims());
    let mut grad_sigma = 0.0;
    for (z, &u) in samples.iter().zip(utilities) {
        samples[0].check_same_dims(z)?;
        if u == 0.0 {
            continue;
        }
        for (g, &zi) in grad_v.data_mut().iter_mut().zip(z.data()) {
            *g += u * zi / var;
        }
        let n = z.len() as f64;
        let log_sigma: f64 = z
            .data()
            .iter()
            .map(|&zi| (zi * zi - var) / (var * sigma))
            .sum::<f64>()
            / n;
        grad_sigma += u * log_sigma;
    }
    Ok((grad_v.scale(1.0 / lambda), grad_sigma / lambda))
}
