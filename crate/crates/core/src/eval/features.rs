use std::path::Path;

use candle_core::Tensor;

use crate::data::ModalityPair;
use crate::error::{Error, Result};
use crate::model::{patch_tensor, Encoder, ModelConfig, Network, Role, TokenKind};
use crate::pipeline::load_checkpoint_expecting;
use crate::raster::Modality;

const EXTRACT_CHUNK: usize = 32;

/// Frozen-encoder features, one mean-pooled row per labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub sample_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub encoder_tag: String,
}

impl FeatureTable {
    pub fn new(sample_ids: Vec<String>, features: Vec<Vec<f64>>, labels: Vec<usize>, encoder_tag: impl Into<String>) -> Result<Self> {
        if features.len() != labels.len() || sample_ids.len() != labels.len() {
            return Err(Error::shape(labels.len(), features.len()));
        }
        let d = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("feature rows have different widths"));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature table".into()));
        }
        Ok(Self {
            sample_ids,
            features,
            labels,
            encoder_tag: encoder_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

pub(crate) fn require_labels(pairs: &[ModalityPair]) -> Result<Vec<usize>> {
    pairs
        .iter()
        .map(|p| {
            p.label.ok_or_else(|| Error::Pair {
                pair_id: p.pair_id.clone(),
                reason: "evaluation needs a class label".into(),
            })
        })
        .collect()
}

/// Mean over tokens of the encoder applied to every RGB patch; `[B, D]`.
pub(crate) fn pooled_rgb(encoder: &Encoder, pairs: &[ModalityPair], cfg: &ModelConfig) -> Result<Tensor> {
    let images: Vec<_> = pairs.iter().map(|p| &p.rgb).collect();
    for p in pairs {
        if p.size() != (cfg.image_size, cfg.image_size) {
            return Err(Error::Pair {
                pair_id: p.pair_id.clone(),
                reason: format!("expected {0}x{0} pixels, found {1:?}", cfg.image_size, p.size()),
            });
        }
    }
    let patches = patch_tensor(&images, cfg.patch_size)?;
    let all = vec![(0..cfg.num_patches()).collect::<Vec<_>>(); pairs.len()];
    let tokens = encoder.encode_batch(
        &encoder.embed_patches(&patches, Modality::Rgb)?,
        &all,
        TokenKind::Rgb,
        Role::Student,
        &mut None,
    )?;
    Ok(tokens.tokens.mean(1)?)
}

/// Runs the frozen encoder over each pair's RGB image without masking and
/// mean-pools its tokens. Deterministic; parameters are only read.
pub fn extract_features(encoder: &Encoder, cfg: &ModelConfig, pairs: &[ModalityPair], encoder_tag: &str) -> Result<FeatureTable> {
    let labels = require_labels(pairs)?;
    let mut features = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EXTRACT_CHUNK) {
        features.extend(pooled_rgb(encoder, chunk, cfg)?.detach().to_vec2::<f64>()?);
    }
    FeatureTable::new(pairs.iter().map(|p| p.pair_id.clone()).collect(), features, labels, encoder_tag)
}

/// Loads the student encoder from a checkpoint that must match `cfg`.
pub fn load_encoder(path: &Path, cfg: &ModelConfig) -> Result<Encoder> {
    let record = load_checkpoint_expecting(path, cfg)?;
    let (net, _) = record.network()?;
    Ok(net.encoder)
}

/// A randomly initialized encoder, the baseline for probing comparisons.
pub fn random_encoder(cfg: &ModelConfig, seed: u64) -> Result<Encoder> {
    let (net, _) = Network::init(cfg, crate::rng::stream(seed, &[crate::rng::tag::INIT]))?;
    Ok(net.encoder)
}
