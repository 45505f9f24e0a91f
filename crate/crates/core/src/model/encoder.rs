use candle_core::{Device, Tensor};

use super::config::ModelConfig;
use super::embed::sincos_tensor;
use super::layers::{Linear, Stack, Stochastic};
use super::params::{Builder, Init};
use super::tokens::{gather_padded, TokenBatch, TokenKind, TokenSequence};
use crate::error::{Error, Result};
use crate::masking::MaskMap;
use crate::raster::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Sees only unmasked tokens; gradients flow.
    Student,
    /// Sees every token; outputs are detached.
    Teacher,
}

/// Modality-shared ViT encoder: one patch projection and transformer stack for
/// both modalities, told apart by a learned per-modality embedding.
#[derive(Debug, Clone)]
pub struct Encoder {
    patch_embed: Linear,
    modality_embed: Tensor,
    pos: Tensor,
    stack: Stack,
    num_patches: usize,
}

impl Encoder {
    pub fn new(b: &Builder, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.encoder_dim;
        Ok(Self {
            patch_embed: Linear::new(&b.pp("patch_embed"), cfg.patch_dim(), d)?,
            modality_embed: b.get(&[2, d], "modality_embed", Init::TruncNormal(0.02))?,
            pos: sincos_tensor(cfg.grid(), d)?,
            stack: Stack::new(&b.pp("blocks"), d, cfg.encoder_mlp_dim, cfg.encoder_heads, cfg.encoder_layers)?,
            num_patches: cfg.num_patches(),
        })
    }

    pub fn dim(&self) -> usize {
        self.patch_embed.out_dim()
    }

    fn modality_vector(&self, modality: Modality) -> Result<Tensor> {
        Ok(self.modality_embed.get(modality.label() as usize)?)
    }

    /// Embeds `[B, N, P]` (or `[N, P]`) raw patches covering the full grid.
    pub fn embed_patches(&self, patches: &Tensor, modality: Modality) -> Result<Tensor> {
        let p = patches.dims()[patches.rank() - 1];
        if p != self.patch_embed.in_dim() {
            return Err(Error::shape(self.patch_embed.in_dim(), p));
        }
        let n = patches.dims()[patches.rank() - 2];
        if n != self.num_patches {
            return Err(Error::shape(self.num_patches, n));
        }
        let x = self.patch_embed.forward(patches)?.broadcast_add(&self.pos)?;
        Ok(x.broadcast_add(&self.modality_vector(modality)?)?)
    }

    /// Linear projection + positional encoding + modality embedding for one image.
    pub fn embed_tokens(&self, patches: &[Vec<f64>], modality: Modality) -> Result<TokenSequence> {
        let p = patches.first().map_or(0, Vec::len);
        if patches.iter().any(|row| row.len() != p) {
            return Err(Error::invalid("ragged patch matrix"));
        }
        let flat: Vec<f64> = patches.iter().flatten().copied().collect();
        let t = Tensor::from_vec(flat, (patches.len(), p), &Device::Cpu)?;
        TokenSequence::new(
            self.embed_patches(&t, modality)?,
            (0..patches.len()).collect(),
            modality.into(),
        )
    }

    /// Runs the stack over the retained positions of each sample.
    /// `embedded` is `[B, N, D]` over the full grid.
    pub fn encode_batch(
        &self,
        embedded: &Tensor,
        retained: &[Vec<usize>],
        kind: TokenKind,
        role: Role,
        ctx: &mut Option<&mut Stochastic>,
    ) -> Result<TokenBatch> {
        if retained.iter().any(Vec::is_empty) {
            return Err(Error::invalid("student encoder received a sample with every patch masked"));
        }
        let x = gather_padded(embedded, retained)?;
        let mut batch = TokenBatch {
            tokens: x,
            positions: retained.to_vec(),
            kind,
        };
        let bias = batch.key_bias()?;
        let out = match role {
            Role::Student => self.stack.forward(&batch.tokens, Some(&bias), ctx)?,
            Role::Teacher => self.stack.forward(&batch.tokens, Some(&bias), &mut None)?.detach(),
        };
        batch.tokens = out;
        Ok(batch)
    }

    /// Single-sequence encoding: the student drops masked positions, the
    /// teacher keeps everything.
    pub fn encode(&self, tokens: &TokenSequence, mask: &MaskMap, role: Role) -> Result<TokenSequence> {
        let keep: Vec<usize> = (0..tokens.len())
            .filter(|&i| {
                role == Role::Teacher || !mask.masked.get(tokens.positions[i]).copied().unwrap_or(false)
            })
            .collect();
        if keep.is_empty() {
            return Err(Error::invalid("student encoder received a sequence with every patch masked"));
        }
        let batch = TokenBatch::from_sequence(tokens)?;
        let x = gather_padded(&batch.tokens, &[keep.clone()])?;
        let b = TokenBatch {
            tokens: x,
            positions: vec![keep.iter().map(|&i| tokens.positions[i]).collect()],
            kind: tokens.kind,
        };
        let bias = b.key_bias()?;
        let out = self.stack.forward(&b.tokens, Some(&bias), &mut None)?;
        let out = if role == Role::Teacher { out.detach() } else { out };
        TokenSequence::new(out.get(0)?, b.positions[0].clone(), tokens.kind)
    }

    /// Per-block activations for every position of one embedded image.
    pub fn activations(&self, tokens: &TokenSequence) -> Result<Vec<Tensor>> {
        let x = tokens.tokens.unsqueeze(0)?;
        Ok(self
            .stack
            .forward_trace(&x, None)?
            .into_iter()
            .map(|t| t.get(0))
            .collect::<candle_core::Result<Vec<_>>>()?)
    }
}
