//! Patch extraction and fixed 2D sine-cosine positional encodings.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::raster::{Modality, ModalityImage};

/// Row-major patches, each flattened in `(row, col, channel)` order.
pub fn patchify(image: &ModalityImage, patch_size: usize) -> Result<Vec<Vec<f64>>> {
    if patch_size == 0 || image.height() % patch_size != 0 || image.width() % patch_size != 0 {
        return Err(Error::invalid(format!(
            "{}x{} image is not divisible by patch size {patch_size}",
            image.height(),
            image.width()
        )));
    }
    let (rows, cols) = (image.height() / patch_size, image.width() / patch_size);
    let c = image.channels();
    let w = image.width();
    let px = image.pixels();
    let mut out = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut patch = Vec::with_capacity(patch_size * patch_size * c);
            for y in pr * patch_size..(pr + 1) * patch_size {
                let start = (y * w + pc * patch_size) * c;
                patch.extend_from_slice(&px[start..start + patch_size * c]);
            }
            out.push(patch);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    patches: &[Vec<f64>],
    grid: (usize, usize),
    patch_size: usize,
    channels: usize,
    modality: Modality,
) -> Result<ModalityImage> {
    let (rows, cols) = grid;
    if patches.len() != rows * cols {
        return Err(Error::shape(rows * cols, patches.len()));
    }
    let row_len = patch_size * channels;
    let (h, w) = (rows * patch_size, cols * patch_size);
    let mut px = vec![0.0; h * w * channels];
    for (i, patch) in patches.iter().enumerate() {
        if patch.len() != patch_size * row_len {
            return Err(Error::shape(patch_size * row_len, patch.len()));
        }
        let (pr, pc) = (i / cols, i % cols);
        for r in 0..patch_size {
            let dst = ((pr * patch_size + r) * w + pc * patch_size) * channels;
            px[dst..dst + row_len].copy_from_slice(&patch[r * row_len..(r + 1) * row_len]);
        }
    }
    ModalityImage::new(h, w, channels, px, modality, patch_size)
}

/// Stacks the patches of several images into a `[B, N, P]` tensor.
pub fn patch_tensor(images: &[&ModalityImage], patch_size: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    for img in images {
        let patches = patchify(img, patch_size)?;
        let d = (patches.len(), patches.first().map_or(0, Vec::len));
        if *dims.get_or_insert(d) != d {
            return Err(Error::shape(dims, d));
        }
        data.extend(patches.into_iter().flatten());
    }
    let (n, p) = dims.unwrap_or((0, 0));
    Ok(Tensor::from_vec(data, (images.len(), n, p), &Device::Cpu)?)
}

/// `[rows*cols, dim]` table: the first half of each row encodes the patch row,
/// the second half the column, each as `dim/4` sines followed by `dim/4` cosines.
pub fn sincos_2d(rows: usize, cols: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(dim % 4 == 0, "positional width {dim} must be divisible by 4");
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    let encode = |coord: f64, out: &mut Vec<f64>| {
        out.extend(omega.iter().map(|w| (coord * w).sin()));
        out.extend(omega.iter().map(|w| (coord * w).cos()));
    };
    let mut table = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut row = Vec::with_capacity(dim);
            encode(r as f64, &mut row);
            encode(c as f64, &mut row);
            table.push(row);
        }
    }
    table
}

pub(crate) fn sincos_tensor(grid: usize, dim: usize) -> Result<Tensor> {
    let flat: Vec<f64> = sincos_2d(grid, grid, dim).into_iter().flatten().collect();
    Ok(Tensor::from_vec(flat, (grid * grid, dim), &Device::Cpu)?)
}
