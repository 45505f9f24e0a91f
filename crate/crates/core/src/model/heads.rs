use candle_core::Tensor;

use super::layers::Linear;
use super::params::Builder;
use super::tokens::TokenSequence;
use crate::error::{Error, Result};

/// Bridges decoder width back to encoder width so predictions compare with teacher tokens.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub linear: Linear,
}

impl Predictor {
    pub fn new(b: &Builder, decoder_dim: usize, encoder_dim: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(b, decoder_dim, encoder_dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dims()[x.rank() - 1];
        if d != self.linear.in_dim() {
            return Err(Error::shape(self.linear.in_dim(), d));
        }
        self.linear.forward(x)
    }

    pub fn predict_targets(&self, decoded: &TokenSequence) -> Result<TokenSequence> {
        TokenSequence::new(self.forward(&decoded.tokens)?, decoded.positions.clone(), decoded.kind)
    }
}

/// Scalar logit per token for the modality pseudo-label (RGB → 0, other → 1).
#[derive(Debug, Clone)]
pub struct ModalityClassifierHead {
    pub linear: Linear,
}

impl ModalityClassifierHead {
    pub fn new(b: &Builder, dim: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(b, dim, 1)?,
        })
    }

    /// `[n, D]` → `[n]` logits.
    pub fn logits(&self, tokens: &Tensor) -> Result<Tensor> {
        let (_, d) = tokens.dims2()?;
        if d != self.linear.in_dim() {
            return Err(Error::shape(self.linear.in_dim(), d));
        }
        Ok(self.linear.forward(tokens)?.squeeze(1)?)
    }

    pub fn classify_modality(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        Ok(self.logits(&tokens.tokens)?.to_vec1::<f64>()?)
    }
}
