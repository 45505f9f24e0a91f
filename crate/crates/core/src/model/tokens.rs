use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::raster::Modality;

use super::layers::KEY_PAD_BIAS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Rgb,
    Other,
    Fused,
}

impl From<Modality> for TokenKind {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Rgb => TokenKind::Rgb,
            Modality::Other => TokenKind::Other,
        }
    }
}

/// Position-indexed tokens of one image: `tokens` is `[N, D]`, row `i` sits at
/// patch-grid index `positions[i]`.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub positions: Vec<usize>,
    pub kind: TokenKind,
}

impl TokenSequence {
    pub fn new(tokens: Tensor, positions: Vec<usize>, kind: TokenKind) -> Result<Self> {
        let (n, _) = tokens.dims2()?;
        if n != positions.len() {
            return Err(Error::shape(positions.len(), n));
        }
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("token positions must be distinct"));
        }
        Ok(Self { tokens, positions, kind })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.dims()[1]
    }

    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.tokens.to_vec2::<f64>()?)
    }
}

/// A padded batch of token sequences: `tokens` is `[B, L, D]` and sample `b`
/// occupies its first `positions[b].len()` slots.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tokens: Tensor,
    pub positions: Vec<Vec<usize>>,
    pub kind: TokenKind,
}

impl TokenBatch {
    pub fn batch_size(&self) -> usize {
        self.positions.len()
    }

    pub fn slots(&self) -> usize {
        self.tokens.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.tokens.dims()[2]
    }

    pub fn from_sequence(seq: &TokenSequence) -> Result<Self> {
        Ok(Self {
            tokens: seq.tokens.unsqueeze(0)?,
            positions: vec![seq.positions.clone()],
            kind: seq.kind,
        })
    }

    pub fn sequence(&self, b: usize) -> Result<TokenSequence> {
        let n = self.positions[b].len();
        TokenSequence::new(
            self.tokens.get(b)?.narrow(0, 0, n)?,
            self.positions[b].clone(),
            self.kind,
        )
    }

    /// `[B, 1, 1, L]` additive bias that hides padded slots from attention.
    pub fn key_bias(&self) -> Result<Tensor> {
        key_bias(&self.positions.iter().map(Vec::len).collect::<Vec<_>>(), self.slots())
    }

    /// Slot of `pos` in sample `b`, if present.
    pub fn slot_of(&self, b: usize, pos: usize) -> Option<usize> {
        self.positions[b].iter().position(|&p| p == pos)
    }

    /// Rows `(sample, slot)` gathered into an `[n, D]` tensor.
    pub fn gather(&self, rows: &[(usize, usize)]) -> Result<Tensor> {
        gather_rows(&self.tokens, rows)
    }
}

pub(crate) fn key_bias(lengths: &[usize], slots: usize) -> Result<Tensor> {
    let mut bias = Vec::with_capacity(lengths.len() * slots);
    for &n in lengths {
        bias.extend((0..slots).map(|i| if i < n { 0.0 } else { KEY_PAD_BIAS }));
    }
    Ok(Tensor::from_vec(bias, (lengths.len(), 1, 1, slots), &Device::Cpu)?)
}

/// Gathers `(sample, slot)` rows of a `[B, L, D]` tensor into `[n, D]`.
pub fn gather_rows(tokens: &Tensor, rows: &[(usize, usize)]) -> Result<Tensor> {
    let (b, l, d) = tokens.dims3()?;
    if rows.is_empty() {
        return Ok(Tensor::zeros((0, d), tokens.dtype(), &Device::Cpu)?);
    }
    let idx: Vec<u32> = rows
        .iter()
        .map(|&(s, i)| {
            assert!(s < b && i < l, "row ({s}, {i}) outside a {b}x{l} batch");
            (s * l + i) as u32
        })
        .collect();
    let idx = Tensor::from_vec(idx, rows.len(), &Device::Cpu)?;
    Ok(tokens.reshape((b * l, d))?.index_select(&idx, 0)?)
}

/// Gathers per-sample rows of `[B, L, D]` into a new padded `[B, L', D]` batch.
/// Padded slots repeat slot 0 of their sample.
pub(crate) fn gather_padded(tokens: &Tensor, slots: &[Vec<usize>]) -> Result<Tensor> {
    let (b, l, d) = tokens.dims3()?;
    let width = slots.iter().map(Vec::len).max().unwrap_or(0);
    let mut idx = Vec::with_capacity(b * width);
    for (s, rows) in slots.iter().enumerate() {
        for i in 0..width {
            idx.push((s * l + rows.get(i).copied().unwrap_or(0)) as u32);
        }
    }
    let idx = Tensor::from_vec(idx, b * width, &Device::Cpu)?;
    Ok(tokens.reshape((b * l, d))?.index_select(&idx, 0)?.reshape((b, width, d))?)
}
