//! Aligned image pairs: synthetic generation, the on-disk tile layout, and
//! per-modality preprocessing.

mod hr_pairs;
mod preprocess;
mod synth;

pub use hr_pairs::{
    load_hr_pairs, read_labels, read_manifest, write_dataset, DatasetManifest, ManifestRecord, NormStats, DEFAULT_TILE_SIZE,
};
pub use preprocess::{denormalize, normalize, replicate_dsm_channels};
pub use synth::{generate_synthetic_dataset, generate_synthetic_pair, SYNTH_PATCH_SIZE};

use crate::error::{Error, Result};
use crate::raster::ModalityImage;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityPair {
    pub rgb: ModalityImage,
    pub other: ModalityImage,
    pub pair_id: String,
    pub label: Option<usize>,
}

impl ModalityPair {
    pub fn new(rgb: ModalityImage, other: ModalityImage, pair_id: impl Into<String>, label: Option<usize>) -> Result<Self> {
        let pair_id = pair_id.into();
        let dims = |i: &ModalityImage| (i.height(), i.width(), i.patch_size);
        if dims(&rgb) != dims(&other) {
            return Err(Error::Pair {
                pair_id,
                reason: format!("modalities are not aligned: {:?} vs {:?}", dims(&rgb), dims(&other)),
            });
        }
        Ok(Self {
            rgb,
            other,
            pair_id,
            label,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.rgb.height(), self.rgb.width())
    }
}
