use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};

use super::maps::MaskMap;
use crate::error::{Error, Result};
use crate::raster::ModalityImage;

const MASK_GRAY: Rgb<u8> = Rgb([128, 128, 128]);
const OUTLINE: Rgb<u8> = Rgb([255, 0, 0]);

/// Encodes `image` as PNG with masked patches filled gray and substituted
/// patches outlined in red. Pixel values are min-max scaled per image.
pub fn render_mask_png(image: &ModalityImage, mask: &MaskMap, substituted: &[usize]) -> Result<Vec<u8>> {
    let (rows, cols) = image.grid();
    if (mask.rows, mask.cols) != (rows, cols) {
        return Err(Error::shape((rows, cols), (mask.rows, mask.cols)));
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (lo, hi) = image
        .pixels()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_u8 = |v: f64| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;

    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if c >= 3 {
                Rgb([to_u8(image.get(y, x, 0)), to_u8(image.get(y, x, 1)), to_u8(image.get(y, x, 2))])
            } else {
                let g = to_u8(image.get(y, x, 0));
                Rgb([g, g, g])
            };
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    let p = image.patch_size;
    for pos in mask.masked_positions() {
        let (py, px) = ((pos / cols) * p, (pos % cols) * p);
        for y in py..py + p {
            for x in px..px + p {
                out.put_pixel(x as u32, y as u32, MASK_GRAY);
            }
        }
    }
    for &pos in substituted {
        let (py, px) = ((pos / cols) * p, (pos % cols) * p);
        for i in 0..p {
            for (y, x) in [(py, px + i), (py + p - 1, px + i), (py + i, px), (py + i, px + p - 1)] {
                out.put_pixel(x as u32, y as u32, OUTLINE);
            }
        }
    }
    let mut bytes = Vec::new();
    out.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(bytes)
}

/// Writes `<dir>/<stem>_mask_<modality>.png` and returns its path.
pub fn write_mask_png(
    dir: &Path,
    stem: &str,
    image: &ModalityImage,
    mask: &MaskMap,
    substituted: &[usize],
) -> Result<PathBuf> {
    let bytes = render_mask_png(image, mask, substituted)?;
    let path = dir.join(format!("{stem}_mask_{}.png", image.modality.name()));
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
