use candle_core::{Device, Tensor};

use super::config::ModelConfig;
use super::layers::{Linear, Stack, Stochastic};
use super::params::Builder;
use super::tokens::{gather_rows, TokenBatch, TokenKind, TokenSequence};
use crate::error::{Error, Result};
use crate::masking::{fuse_masks, MaskMap};

/// Merges per-modality student tokens at every position visible in at least
/// one modality, then runs the fusion transformer.
#[derive(Debug, Clone)]
pub struct Fusion {
    proj_rgb: Linear,
    proj_other: Linear,
    stack: Stack,
}

impl Fusion {
    pub fn new(b: &Builder, cfg: &ModelConfig) -> Result<Self> {
        let (e, f) = (cfg.encoder_dim, cfg.fusion_dim);
        Ok(Self {
            proj_rgb: Linear::new(&b.pp("proj_rgb"), e, f)?,
            proj_other: Linear::new(&b.pp("proj_other"), e, f)?,
            stack: Stack::new(&b.pp("blocks"), f, cfg.fusion_mlp_dim, cfg.fusion_heads, cfg.fusion_layers)?,
        })
    }

    pub fn project(&self, batch: &TokenBatch) -> Result<Tensor> {
        match batch.kind {
            TokenKind::Rgb => self.proj_rgb.forward(&batch.tokens),
            TokenKind::Other => self.proj_other.forward(&batch.tokens),
            TokenKind::Fused => Err(Error::invalid("fusion input must be a single-modality batch")),
        }
    }

    /// Pre-transformer fused tokens: the mean of the projected tokens present
    /// at each union position. Returns `(tokens [B, U, F], union positions)`.
    pub fn fused_input(&self, rgb: &TokenBatch, other: &TokenBatch) -> Result<(Tensor, Vec<Vec<usize>>)> {
        if rgb.batch_size() != other.batch_size() {
            return Err(Error::shape(rgb.batch_size(), other.batch_size()));
        }
        let pr = self.project(rgb)?;
        let po = self.project(other)?;
        let f = pr.dims()[2];
        let bsz = rgb.batch_size();

        let unions: Vec<Vec<usize>> = (0..bsz)
            .map(|b| {
                let mut u: Vec<usize> = rgb.positions[b].iter().chain(&other.positions[b]).copied().collect();
                u.sort_unstable();
                u.dedup();
                u
            })
            .collect();
        if unions.iter().any(Vec::is_empty) {
            return Err(Error::invalid("fusion received a sample with no visible position in either modality"));
        }
        let width = unions.iter().map(Vec::len).max().unwrap_or(0);

        // Each modality gets one extra zero row that absent slots point at.
        let zero = Tensor::zeros((1, f), candle_core::DType::F64, &Device::Cpu)?;
        let flat_r = Tensor::cat(&[&pr.reshape((bsz * rgb.slots(), f))?, &zero], 0)?;
        let flat_o = Tensor::cat(&[&po.reshape((bsz * other.slots(), f))?, &zero], 0)?;
        let (zr, zo) = ((bsz * rgb.slots()) as u32, (bsz * other.slots()) as u32);
        let mut idx_r = Vec::with_capacity(bsz * width);
        let mut idx_o = Vec::with_capacity(bsz * width);
        let mut scale = Vec::with_capacity(bsz * width);
        for (b, union) in unions.iter().enumerate() {
            for slot in 0..width {
                let (ir, io) = match union.get(slot) {
                    Some(&p) => (
                        rgb.slot_of(b, p).map(|s| (b * rgb.slots() + s) as u32),
                        other.slot_of(b, p).map(|s| (b * other.slots() + s) as u32),
                    ),
                    None => (None, None),
                };
                let count = ir.is_some() as usize + io.is_some() as usize;
                idx_r.push(ir.unwrap_or(zr));
                idx_o.push(io.unwrap_or(zo));
                scale.push(if count == 0 { 0.0 } else { 1.0 / count as f64 });
            }
        }
        let n = bsz * width;
        let gr = flat_r.index_select(&Tensor::from_vec(idx_r, n, &Device::Cpu)?, 0)?;
        let go = flat_o.index_select(&Tensor::from_vec(idx_o, n, &Device::Cpu)?, 0)?;
        let scale = Tensor::from_vec(scale, (n, 1), &Device::Cpu)?;
        let fused = (gr + go)?.broadcast_mul(&scale)?.reshape((bsz, width, f))?;
        Ok((fused, unions))
    }

    pub fn fuse_batch(&self, rgb: &TokenBatch, other: &TokenBatch, ctx: &mut Option<&mut Stochastic>) -> Result<TokenBatch> {
        let (x, positions) = self.fused_input(rgb, other)?;
        let mut batch = TokenBatch {
            tokens: x,
            positions,
            kind: TokenKind::Fused,
        };
        let bias = batch.key_bias()?;
        batch.tokens = self.stack.forward(&batch.tokens, Some(&bias), ctx)?;
        Ok(batch)
    }

    /// Fuses one image's student outputs; output positions are the complement
    /// of `fuse_masks(m_rgb, m_other)`.
    pub fn fuse(&self, f_rgb: &TokenSequence, f_other: &TokenSequence, m_rgb: &MaskMap, m_other: &MaskMap) -> Result<TokenSequence> {
        let fused_mask = fuse_masks(m_rgb, m_other)?;
        for (seq, mask) in [(f_rgb, m_rgb), (f_other, m_other)] {
            if let Some(p) = seq.positions.iter().find(|&&p| mask.masked.get(p).copied().unwrap_or(true)) {
                return Err(Error::invalid(format!("token at position {p} is masked or outside the grid")));
            }
        }
        let out = self.fuse_batch(&TokenBatch::from_sequence(f_rgb)?, &TokenBatch::from_sequence(f_other)?, &mut None)?;
        let seq = out.sequence(0)?;
        debug_assert_eq!(seq.positions, fused_mask.visible_positions());
        Ok(seq)
    }

    /// Per-modality projections at the given `(sample, slot)` rows.
    pub fn project_rows(&self, batch: &TokenBatch, rows: &[(usize, usize)]) -> Result<Tensor> {
        let t = gather_rows(&batch.tokens, rows)?;
        match batch.kind {
            TokenKind::Rgb => self.proj_rgb.forward(&t),
            TokenKind::Other => self.proj_other.forward(&t),
            TokenKind::Fused => Err(Error::invalid("fusion input must be a single-modality batch")),
        }
    }
}
