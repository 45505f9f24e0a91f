use serde::{Deserialize, Serialize};

use super::maps::InfoScoreMap;
use crate::error::{Error, Result};
use crate::raster::ModalityImage;

/// Weights of the gradient and variance terms in the per-patch score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub gradient: f64,
    pub variance: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            gradient: 1.0,
            variance: 1.0,
        }
    }
}

/// Per-pixel Sobel gradient magnitude of the luminance field, replicate-padded.
/// Each response is a weighted sum of opposite-neighbor differences, so flat
/// regions give exactly 0.
pub fn gradient_magnitude(image: &ModalityImage) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let lum = image.luminance();
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        lum[yy * w + xx]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) - at(y - 1, x - 1))
                + 2.0 * (at(y, x + 1) - at(y, x - 1))
                + (at(y + 1, x + 1) - at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) - at(y - 1, x - 1))
                + 2.0 * (at(y + 1, x) - at(y - 1, x))
                + (at(y + 1, x + 1) - at(y - 1, x + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

pub fn patch_info_score(image: &ModalityImage) -> InfoScoreMap {
    patch_info_score_weighted(image, ScoreWeights::default())
}

/// Mean gradient magnitude plus population luminance variance per patch.
pub fn patch_info_score_weighted(image: &ModalityImage, weights: ScoreWeights) -> InfoScoreMap {
    let grad = gradient_magnitude(image);
    let lum = image.luminance();
    let (rows, cols) = image.grid();
    let p = image.patch_size;
    let w = image.width();
    let n = (p * p) as f64;
    let mut scores = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            // deviations are taken from the patch's first pixel so a flat
            // patch has exactly zero variance
            let origin = lum[pr * p * w + pc * p];
            let (mut g, mut s, mut sq) = (0.0, 0.0, 0.0);
            for y in pr * p..(pr + 1) * p {
                for x in pc * p..(pc + 1) * p {
                    let d = lum[y * w + x] - origin;
                    g += grad[y * w + x];
                    s += d;
                    sq += d * d;
                }
            }
            let mean = s / n;
            let var = (sq / n - mean * mean).max(0.0);
            scores.push(weights.gradient * g / n + weights.variance * var);
        }
    }
    InfoScoreMap { rows, cols, scores }
}

/// Elementwise sum of two modalities' score maps.
pub fn fuse_info_scores(s_rgb: &InfoScoreMap, s_other: &InfoScoreMap) -> Result<InfoScoreMap> {
    if (s_rgb.rows, s_rgb.cols) != (s_other.rows, s_other.cols) {
        return Err(Error::shape((s_rgb.rows, s_rgb.cols), (s_other.rows, s_other.cols)));
    }
    Ok(InfoScoreMap {
        rows: s_rgb.rows,
        cols: s_rgb.cols,
        scores: s_rgb.scores.iter().zip(&s_other.scores).map(|(a, b)| a + b).collect(),
    })
}
