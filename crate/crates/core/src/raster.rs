//! Per-modality rasters stored as row-major `H × W × C` f64 buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Rgb,
    Other,
}

impl Modality {
    pub fn label(self) -> u8 {
        match self {
            Modality::Rgb => 0,
            Modality::Other => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    pub modality: Modality,
    pub patch_size: usize,
}

impl ModalityImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        modality: Modality,
        patch_size: usize,
    ) -> Result<Self> {
        if patch_size == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions and patch size must be positive"));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, pixels.len()));
        }
        if height % patch_size != 0 || width % patch_size != 0 {
            return Err(Error::invalid(format!(
                "{height}x{width} image is not divisible by patch size {patch_size}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} image pixels", modality.name())));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            modality,
            patch_size,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64, modality: Modality, patch_size: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels], modality, patch_size)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Mutable pixel access. Callers must keep values finite.
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Patch grid as (rows, cols).
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// Equal-weight channel mean, row-major `H × W`.
    pub fn luminance(&self) -> Vec<f64> {
        let c = self.channels as f64;
        self.pixels
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect()
    }

    /// Copies the pixel block of patch `src` into patch `dst` (row-major patch indices).
    pub fn copy_patch(&mut self, src_image: &ModalityImage, src: usize, dst: usize) {
        let p = self.patch_size;
        let (_, cols) = self.grid();
        let (sy, sx) = ((src / cols) * p, (src % cols) * p);
        let (dy, dx) = ((dst / cols) * p, (dst % cols) * p);
        let row_len = p * self.channels;
        for r in 0..p {
            let s = ((sy + r) * self.width + sx) * self.channels;
            let d = ((dy + r) * self.width + dx) * self.channels;
            self.pixels[d..d + row_len].copy_from_slice(&src_image.pixels[s..s + row_len]);
        }
    }

    /// Flattened pixel content of one patch in `(row, col, channel)` order.
    pub fn patch_pixels(&self, patch: usize) -> Vec<f64> {
        let p = self.patch_size;
        let (_, cols) = self.grid();
        let (py, px) = ((patch / cols) * p, (patch % cols) * p);
        let mut out = Vec::with_capacity(p * p * self.channels);
        for r in 0..p {
            let s = ((py + r) * self.width + px) * self.channels;
            out.extend_from_slice(&self.pixels[s..s + p * self.channels]);
        }
        out
    }
}
