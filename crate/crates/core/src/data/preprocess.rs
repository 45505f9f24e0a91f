use crate::error::{Error, Result};
use crate::raster::ModalityImage;

/// Copies a single-channel raster into three identical channels.
pub fn replicate_dsm_channels(dsm: &ModalityImage) -> Result<ModalityImage> {
    if dsm.channels() != 1 {
        return Err(Error::invalid(format!("expected a single-channel DSM, got {} channels", dsm.channels())));
    }
    let px: Vec<f64> = dsm.pixels().iter().flat_map(|&v| [v, v, v]).collect();
    ModalityImage::new(dsm.height(), dsm.width(), 3, px, dsm.modality, dsm.patch_size)
}

fn check_stats(image: &ModalityImage, mean: &[f64], std: &[f64]) -> Result<()> {
    let c = image.channels();
    if mean.len() != c || std.len() != c {
        return Err(Error::shape(c, (mean.len(), std.len())));
    }
    if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("standard deviations must be positive, got {std:?}")));
    }
    Ok(())
}

/// `(x − mean) / std` per channel.
pub fn normalize(image: &ModalityImage, mean: &[f64], std: &[f64]) -> Result<ModalityImage> {
    check_stats(image, mean, std)?;
    let mut out = image.clone();
    let c = image.channels();
    for (i, v) in out.pixels_mut().iter_mut().enumerate() {
        *v = (*v - mean[i % c]) / std[i % c];
    }
    Ok(out)
}

pub fn denormalize(image: &ModalityImage, mean: &[f64], std: &[f64]) -> Result<ModalityImage> {
    check_stats(image, mean, std)?;
    let mut out = image.clone();
    let c = image.channels();
    for (i, v) in out.pixels_mut().iter_mut().enumerate() {
        *v = *v * std[i % c] + mean[i % c];
    }
    Ok(out)
}
