use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::decoder::Decoder;
use super::encoder::Encoder;
use super::fusion::Fusion;
use super::heads::{ModalityClassifierHead, Predictor};
use super::params::{Builder, ParamSpec, ParamStore, TensorMap};
use crate::error::Result;

pub const ENCODER_PREFIX: &str = "encoder.";

/// Student encoder plus every pretraining head. The teacher is an [`Encoder`]
/// built from EMA tensors under the same `encoder.` names.
#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub fusion: Fusion,
    pub decoder: Decoder,
    pub predictor: Predictor,
    pub modality_head: ModalityClassifierHead,
}

impl Network {
    pub fn build(b: &Builder, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new(&b.pp("encoder"), cfg)?,
            fusion: Fusion::new(&b.pp("fusion"), cfg)?,
            decoder: Decoder::new(&b.pp("decoder"), cfg)?,
            predictor: Predictor::new(&b.pp("predictor"), cfg.decoder_dim, cfg.encoder_dim)?,
            modality_head: ModalityClassifierHead::new(&b.pp("modality_head"), cfg.aux_dim())?,
        })
    }

    /// Fresh parameters drawn from `rng`.
    pub fn init(cfg: &ModelConfig, rng: ChaCha8Rng) -> Result<(Self, ParamStore)> {
        let b = Builder::init(rng);
        let net = Self::build(&b, cfg)?;
        let store = b.into_store().expect("init builder yields a store");
        Ok((net, store))
    }

    pub fn from_store(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        Self::build(&Builder::from_store(store), cfg)
    }

    /// Name, shape and initializer of every parameter, in store order.
    pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
        let b = Builder::record();
        Self::build(&b, cfg)?;
        Ok(b.into_specs().expect("record builder yields specs"))
    }
}

/// A detached encoder over plain tensors named `encoder.*`.
pub fn encoder_from_map(cfg: &ModelConfig, map: &TensorMap) -> Result<Encoder> {
    Encoder::new(&Builder::from_map(map).pp("encoder"), cfg)
}
