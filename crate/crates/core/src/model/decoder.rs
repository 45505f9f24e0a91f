use candle_core::{Device, Tensor};

use super::config::ModelConfig;
use super::embed::sincos_tensor;
use super::layers::{Linear, Stack, Stochastic, KEY_PAD_BIAS};
use super::params::{Builder, Init};
use super::tokens::{TokenBatch, TokenSequence};
use crate::error::{Error, Result};
use crate::raster::Modality;

/// Lightweight transformer that answers one learned mask query per target
/// position, attending to the fused context.
#[derive(Debug, Clone)]
pub struct Decoder {
    embed: Linear,
    mask_token: Tensor,
    target_embed: Tensor,
    pos: Tensor,
    stack: Stack,
}

impl Decoder {
    pub fn new(b: &Builder, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.decoder_dim;
        Ok(Self {
            embed: Linear::new(&b.pp("embed"), cfg.fusion_dim, d)?,
            mask_token: b.get(&[d], "mask_token", Init::TruncNormal(0.02))?,
            target_embed: b.get(&[2, d], "target_embed", Init::TruncNormal(0.02))?,
            pos: sincos_tensor(cfg.grid(), d)?,
            stack: Stack::new(&b.pp("blocks"), d, cfg.decoder_mlp_dim, cfg.decoder_heads, cfg.decoder_layers)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.embed.out_dim()
    }

    fn pos_rows(&self, rows: &[Vec<usize>], width: usize) -> Result<Tensor> {
        let idx: Vec<u32> = rows
            .iter()
            .flat_map(|r| (0..width).map(move |i| r.get(i).copied().unwrap_or(0) as u32))
            .collect();
        let n = idx.len();
        let d = self.dim();
        Ok(self
            .pos
            .index_select(&Tensor::from_vec(idx, n, &Device::Cpu)?, 0)?
            .reshape((rows.len(), width, d))?)
    }

    /// Decodes `targets[b]` for each sample of `fused`, returning `[B, T, decoder_dim]`.
    pub fn decode_batch(
        &self,
        fused: &TokenBatch,
        targets: &[Vec<usize>],
        modality: Modality,
        ctx: &mut Option<&mut Stochastic>,
    ) -> Result<TokenBatch> {
        let bsz = fused.batch_size();
        if targets.len() != bsz {
            return Err(Error::shape(bsz, targets.len()));
        }
        let d = self.dim();
        let t_width = targets.iter().map(Vec::len).max().unwrap_or(0);
        if t_width == 0 {
            return Ok(TokenBatch {
                tokens: Tensor::zeros((bsz, 0, d), candle_core::DType::F64, &Device::Cpu)?,
                positions: vec![Vec::new(); bsz],
                kind: modality.into(),
            });
        }
        let c_width = fused.slots();
        let context = self
            .embed
            .forward(&fused.tokens)?
            .add(&self.pos_rows(&fused.positions, c_width)?)?;
        let query = self
            .mask_token
            .broadcast_add(&self.target_embed.get(modality.label() as usize)?)?
            .reshape((1, 1, d))?
            .broadcast_add(&self.pos_rows(targets, t_width)?)?;
        let x = Tensor::cat(&[&context, &query], 1)?;

        // context slots are valid up to each union length, query slots up to each target count
        let mut bias = Vec::with_capacity(bsz * (c_width + t_width));
        for b in 0..bsz {
            let c = fused.positions[b].len();
            let t = targets[b].len();
            bias.extend((0..c_width).map(|i| if i < c { 0.0 } else { KEY_PAD_BIAS }));
            bias.extend((0..t_width).map(|i| if i < t { 0.0 } else { KEY_PAD_BIAS }));
        }
        let bias = Tensor::from_vec(bias, (bsz, 1, 1, c_width + t_width), &Device::Cpu)?;
        let out = self.stack.forward(&x, Some(&bias), ctx)?;
        Ok(TokenBatch {
            tokens: out.narrow(1, c_width, t_width)?,
            positions: targets.to_vec(),
            kind: modality.into(),
        })
    }

    pub fn decode(&self, fused: &TokenSequence, target_positions: &[usize], modality: Modality) -> Result<TokenSequence> {
        if target_positions.is_empty() {
            return TokenSequence::new(
                Tensor::zeros((0, self.dim()), candle_core::DType::F64, &Device::Cpu)?,
                Vec::new(),
                modality.into(),
            );
        }
        let batch = TokenBatch::from_sequence(fused)?;
        let out = self.decode_batch(&batch, &[target_positions.to_vec()], modality, &mut None)?;
        out.sequence(0)
    }
}
