//! Transformer building blocks over `[batch, len, dim]` f64 tensors.

use candle_core::{Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Builder, Init};
use crate::error::Result;

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;
/// Additive attention bias for padded keys; large enough that `exp` underflows to 0.
pub(crate) const KEY_PAD_BIAS: f64 = -1e30;

/// Random state for dropout and stochastic depth during training.
pub struct Stochastic {
    rng: ChaCha8Rng,
    pub dropout: f64,
    pub drop_path: f64,
}

impl Stochastic {
    pub fn new(rng: ChaCha8Rng, dropout: f64, drop_path: f64) -> Self {
        Self { rng, dropout, drop_path }
    }

    fn bernoulli_keep(&mut self, shape: &[usize], p_drop: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let scale = 1.0 / (1.0 - p_drop);
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p_drop { 0.0 } else { scale })
            .collect();
        Ok(Tensor::from_vec(mask, shape, &Device::Cpu)?)
    }

    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.dropout == 0.0 {
            return Ok(x.clone());
        }
        let keep = self.bernoulli_keep(x.dims(), self.dropout)?;
        Ok(x.mul(&keep)?)
    }

    /// Drops the whole residual branch per sample (dim 0).
    pub fn drop_path(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.drop_path == 0.0 {
            return Ok(x.clone());
        }
        let mut shape = vec![1; x.rank()];
        shape[0] = x.dims()[0];
        let keep = self.bernoulli_keep(&shape, self.drop_path)?;
        Ok(x.broadcast_mul(&keep)?)
    }
}

fn dropout(ctx: &mut Option<&mut Stochastic>, x: Tensor) -> Result<Tensor> {
    match ctx {
        Some(s) => s.dropout(&x),
        None => Ok(x),
    }
}

fn drop_path(ctx: &mut Option<&mut Stochastic>, x: Tensor) -> Result<Tensor> {
    match ctx {
        Some(s) => s.drop_path(&x),
        None => Ok(x),
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(b: &Builder, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: b.get(&[out_dim, in_dim], "weight", Init::TruncNormal(INIT_STD))?,
            bias: b.get(&[out_dim], "bias", Init::Zeros)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = match x.rank() {
            2 => x.matmul(&self.weight.t()?)?,
            _ => x.broadcast_matmul(&self.weight.t()?)?,
        };
        Ok(y.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(b: &Builder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.get(&[dim], "weight", Init::Ones)?,
            beta: b.get(&[dim], "bias", Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Softmax over the last dimension with a detached max shift.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(b: &Builder, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            qkv: Linear::new(&b.pp("qkv"), dim, 3 * dim)?,
            proj: Linear::new(&b.pp("proj"), dim, dim)?,
            heads,
        })
    }

    /// `x`: `[B, L, D]`; `bias`: optional `[B, 1, 1, L]` additive key bias.
    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>, ctx: &mut Option<&mut Stochastic>) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, l, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = dropout(ctx, softmax_last(&scores)?)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, l, d))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(b: &Builder, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&b.pp("fc1"), dim, hidden)?,
            fc2: Linear::new(&b.pp("fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Option<&mut Stochastic>) -> Result<Tensor> {
        let h = dropout(ctx, self.fc1.forward(x)?.gelu_erf()?)?;
        dropout(ctx, self.fc2.forward(&h)?)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(b: &Builder, dim: usize, mlp_dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&b.pp("norm1"), dim)?,
            attn: Attention::new(&b.pp("attn"), dim, heads)?,
            norm2: LayerNorm::new(&b.pp("norm2"), dim)?,
            mlp: Mlp::new(&b.pp("mlp"), dim, mlp_dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>, ctx: &mut Option<&mut Stochastic>) -> Result<Tensor> {
        let a = self.attn.forward(&self.norm1.forward(x)?, bias, ctx)?;
        let x = (x + drop_path(ctx, a)?)?;
        let m = self.mlp.forward(&self.norm2.forward(&x)?, ctx)?;
        Ok((&x + drop_path(ctx, m)?)?)
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Stack {
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl Stack {
    pub fn new(b: &Builder, dim: usize, mlp_dim: usize, heads: usize, layers: usize) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| Block::new(&b.pp(format!("blocks.{i}")), dim, mlp_dim, heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            norm: LayerNorm::new(&b.pp("norm"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>, ctx: &mut Option<&mut Stochastic>) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, bias, ctx)?;
        }
        self.norm.forward(&h)
    }

    /// Output of each block before the final norm, for activation dumps.
    pub fn forward_trace(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Vec<Tensor>> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut none = None;
        for block in &self.blocks {
            h = block.forward(&h, bias, &mut none)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}
