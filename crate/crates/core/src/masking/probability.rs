use rand::Rng;

use super::maps::{InfoScoreMap, MaskMap, MaskProbabilityMap};
use crate::error::{Error, Result};
use crate::rng;

/// Masking probability for patches scoring below the 20th percentile.
pub const LOW_INFO_PROB: f64 = 0.8;
/// Masking probability between the 20th and 80th percentile, boundaries included.
pub const MID_INFO_PROB: f64 = 0.5;
/// Masking probability for patches scoring above the 80th percentile.
pub const HIGH_INFO_PROB: f64 = 0.3;

/// Quantile of `sorted` (ascending) with linear interpolation between order statistics.
pub fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Buckets every patch of every map against quantiles pooled over the whole batch.
pub fn assign_mask_probabilities(scores: &[InfoScoreMap]) -> Result<Vec<MaskProbabilityMap>> {
    if scores.is_empty() || scores.iter().all(|s| s.is_empty()) {
        return Err(Error::invalid("cannot assign mask probabilities for an empty batch"));
    }
    let mut pooled: Vec<f64> = scores.iter().flat_map(|s| s.scores.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    let q20 = linear_quantile(&pooled, 0.2);
    let q80 = linear_quantile(&pooled, 0.8);
    Ok(scores
        .iter()
        .map(|s| MaskProbabilityMap {
            rows: s.rows,
            cols: s.cols,
            probs: s
                .scores
                .iter()
                .map(|&v| {
                    if v < q20 {
                        LOW_INFO_PROB
                    } else if v > q80 {
                        HIGH_INFO_PROB
                    } else {
                        MID_INFO_PROB
                    }
                })
                .collect(),
            q20,
            q80,
        })
        .collect())
}

/// Content-independent baseline: every patch gets the same probability.
pub fn uniform_probabilities(rows: usize, cols: usize, prob: f64) -> MaskProbabilityMap {
    MaskProbabilityMap {
        rows,
        cols,
        probs: vec![prob; rows * cols],
        q20: f64::NAN,
        q80: f64::NAN,
    }
}

/// Independent Bernoulli draw per patch.
pub fn sample_masks(probs: &MaskProbabilityMap, seed: u64) -> MaskMap {
    let mut rng = rng::stream(seed, &[]);
    MaskMap {
        rows: probs.rows,
        cols: probs.cols,
        masked: probs.probs.iter().map(|&p| rng.gen::<f64>() < p).collect(),
    }
}
