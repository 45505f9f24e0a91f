//! Geometric augmentation drawn once per pair and applied identically to both
//! modalities, so pixel alignment survives. Values are only moved or
//! interpolated, never rescaled.

use rand::Rng;

use crate::data::ModalityPair;
use crate::error::Result;
use crate::raster::ModalityImage;
use crate::rng;

/// Crop window `(top, left, height, width)` resized back to the input size.
pub type CropBox = (usize, usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentParams {
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
    pub crop: Option<CropBox>,
}

impl AugmentParams {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Draws one transform for an `height × width` image.
    pub fn sample<R: Rng>(rng: &mut R, height: usize, width: usize) -> Self {
        let square = height == width;
        let quarter_turns = if square { rng.gen_range(0..4u8) } else { 2 * rng.gen_range(0..2u8) };
        let hflip = rng.gen_bool(0.5);
        let vflip = rng.gen_bool(0.5);
        let crop = if rng.gen_bool(0.5) {
            Some(sample_crop(rng, height, width))
        } else {
            None
        };
        Self {
            quarter_turns,
            hflip,
            vflip,
            crop,
        }
    }

    pub fn apply(&self, image: &ModalityImage) -> Result<ModalityImage> {
        let mut out = image.clone();
        if let Some(c) = self.crop {
            out = crop_resize(&out, c)?;
        }
        for _ in 0..self.quarter_turns {
            out = rotate90(&out)?;
        }
        if self.hflip {
            out = flip(&out, true)?;
        }
        if self.vflip {
            out = flip(&out, false)?;
        }
        Ok(out)
    }
}

/// Area fraction in [0.35, 1], aspect ratio log-uniform in [3/4, 4/3].
fn sample_crop<R: Rng>(rng: &mut R, height: usize, width: usize) -> CropBox {
    let area = (height * width) as f64 * rng.gen_range(0.35..=1.0);
    let ratio = rng.gen_range((0.75f64).ln()..=(4.0f64 / 3.0).ln()).exp();
    let w = ((area * ratio).sqrt().round() as usize).clamp(1, width);
    let h = ((area / ratio).sqrt().round() as usize).clamp(1, height);
    let top = rng.gen_range(0..=height - h);
    let left = rng.gen_range(0..=width - w);
    (top, left, h, w)
}

fn remap(image: &ModalityImage, f: impl Fn(usize, usize, usize) -> f64) -> Result<ModalityImage> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut px = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                px.push(f(y, x, ch));
            }
        }
    }
    ModalityImage::new(h, w, c, px, image.modality, image.patch_size)
}

/// Quarter turn counter-clockwise; requires a square image.
pub fn rotate90(image: &ModalityImage) -> Result<ModalityImage> {
    let n = image.width();
    if image.height() != n {
        return Err(crate::error::Error::invalid("quarter turns need a square image"));
    }
    remap(image, |y, x, c| image.get(x, n - 1 - y, c))
}

pub fn flip(image: &ModalityImage, horizontal: bool) -> Result<ModalityImage> {
    let (h, w) = (image.height(), image.width());
    remap(image, |y, x, c| {
        if horizontal {
            image.get(y, w - 1 - x, c)
        } else {
            image.get(h - 1 - y, x, c)
        }
    })
}

/// Bilinear resize of the crop window back to the full image size
/// (half-pixel centers, edge clamped).
pub fn crop_resize(image: &ModalityImage, (top, left, ch, cw): CropBox) -> Result<ModalityImage> {
    let (h, w) = (image.height(), image.width());
    let sy = ch as f64 / h as f64;
    let sx = cw as f64 / w as f64;
    let sample = |pos: f64, len: usize| {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    remap(image, |y, x, c| {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, ch);
        let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, cw);
        let at = |yy: usize, xx: usize| image.get(top + yy, left + xx, c);
        let a = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let b = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        a * (1.0 - fy) + b * fy
    })
}

pub fn apply_to_pair(pair: &ModalityPair, params: &AugmentParams) -> Result<ModalityPair> {
    ModalityPair::new(params.apply(&pair.rgb)?, params.apply(&pair.other)?, pair.pair_id.clone(), pair.label)
}

/// Samples one transform from `seed` and applies it to both modalities.
pub fn augment_pair(pair: &ModalityPair, seed: u64) -> Result<ModalityPair> {
    let (h, w) = pair.size();
    let params = AugmentParams::sample(&mut rng::stream(seed, &[]), h, w);
    apply_to_pair(pair, &params)
}
