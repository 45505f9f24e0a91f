//! The four self-supervised objectives and their weighted sum.
//!
//! Every term is a differentiable function of candle tensors so gradients
//! reach the student through autodiff; scalar reports are read back as f64.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_align: f64,
    pub lambda_hsic: f64,
    pub lambda_cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_align: 0.5,
            lambda_hsic: 0.2,
            lambda_cls: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_rec, self.lambda_align, self.lambda_hsic, self.lambda_cls];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub align: f64,
    pub hsic: f64,
    pub cls: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(rec: f64, align: f64, hsic: f64, cls: f64, weights: &LossWeights) -> Result<Self> {
        let total = total_loss([rec, align, hsic, cls], weights)?;
        Ok(Self {
            rec,
            align,
            hsic,
            cls,
            total,
        })
    }
}

pub const TERM_NAMES: [&str; 4] = ["rec", "align", "hsic", "cls"];

/// `λ₁·rec + λ₂·align + λ₃·hsic + λ₄·cls`; rejects non-finite components by name.
pub fn total_loss(components: [f64; 4], weights: &LossWeights) -> Result<f64> {
    for (v, name) in components.iter().zip(TERM_NAMES) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss ({v})")));
        }
    }
    let [rec, align, hsic, cls] = components;
    Ok(weights.lambda_rec * rec + weights.lambda_align * align + weights.lambda_hsic * hsic + weights.lambda_cls * cls)
}

/// Differentiable counterpart of [`total_loss`].
pub fn total_loss_tensor(components: [&Tensor; 4], weights: &LossWeights) -> Result<Tensor> {
    let [rec, align, hsic, cls] = components;
    let sum = ((rec * weights.lambda_rec)? + (align * weights.lambda_align)?)?;
    let sum = (sum + (hsic * weights.lambda_hsic)?)?;
    Ok((sum + (cls * weights.lambda_cls)?)?)
}

fn scalar_zero() -> Result<Tensor> {
    Ok(Tensor::new(0f64, &candle_core::Device::Cpu)?)
}

/// Mean squared L2 distance between matching rows; 0 for no rows.
pub fn reconstruction_loss_tensor(pred: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if pred.dims() != targets.dims() {
        return Err(Error::shape(targets.dims(), pred.dims()));
    }
    let (n, _) = pred.dims2()?;
    if n == 0 {
        return scalar_zero();
    }
    let diff = (pred - targets.detach())?;
    Ok((diff.sqr()?.sum_all()? / n as f64)?)
}

pub fn reconstruction_loss(pred: &TokenSequence, targets: &TokenSequence) -> Result<Tensor> {
    if pred.positions != targets.positions {
        return Err(Error::shape(&targets.positions, &pred.positions));
    }
    reconstruction_loss_tensor(&pred.tokens, &targets.tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// The positive pair also appears in the denominator (InfoNCE); loss ≥ 0.
    Standard,
    /// Only negatives in the denominator; may go negative.
    StrictPaper,
}

pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let norms = norm.flatten_all()?.to_vec1::<f64>()?;
    if norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
        return Err(Error::invalid("cannot normalize a zero-norm embedding"));
    }
    Ok(x.broadcast_div(&norm)?)
}

fn logsumexp_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let s = x.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok((s + max)?.squeeze(D::Minus1)?)
}

/// Contrastive alignment over `queries [N, d]`, `positives [N, d]` and
/// `negatives [N, K, d]`, with rows L2-normalized before the dot products.
pub fn alignment_loss(queries: &Tensor, positives: &Tensor, negatives: &Tensor, tau: f64, mode: AlignMode) -> Result<Tensor> {
    let per_query = alignment_per_query(queries, positives, negatives, tau, mode)?;
    if per_query.dims1()? == 0 {
        return scalar_zero();
    }
    Ok(per_query.mean_all()?)
}

/// Per-query terms of [`alignment_loss`], shape `[N]`.
pub fn alignment_per_query(queries: &Tensor, positives: &Tensor, negatives: &Tensor, tau: f64, mode: AlignMode) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (n, d) = queries.dims2()?;
    if positives.dims() != [n, d] {
        return Err(Error::shape([n, d], positives.dims()));
    }
    let (nn, k, nd) = negatives.dims3()?;
    if nn != n || nd != d || k == 0 {
        return Err(Error::shape(format!("[{n}, K>=1, {d}]"), negatives.dims()));
    }
    if n == 0 {
        return Ok(Tensor::zeros(0, candle_core::DType::F64, &candle_core::Device::Cpu)?);
    }
    let q = l2_normalize_rows(queries)?;
    let p = l2_normalize_rows(positives)?;
    let neg = l2_normalize_rows(&negatives.reshape((n * k, d))?)?.reshape((n, k, d))?;
    let pos_sim = ((&q * &p)?.sum(D::Minus1)? / tau)?;
    let neg_sim = (neg.matmul(&q.unsqueeze(2)?)?.squeeze(2)? / tau)?;
    let denom_terms = match mode {
        AlignMode::Standard => Tensor::cat(&[&pos_sim.unsqueeze(1)?, &neg_sim], 1)?,
        AlignMode::StrictPaper => neg_sim,
    };
    Ok((logsumexp_last(&denom_terms)? - pos_sim)?)
}

/// Subtracts each column's mean.
pub fn center_features(x: &Tensor) -> Result<Tensor> {
    let (n, _) = x.dims2()?;
    if n < 2 {
        return Err(Error::invalid(format!("centering needs at least 2 rows, got {n}")));
    }
    Ok(x.broadcast_sub(&x.mean_keepdim(0)?)?)
}

/// Linear HSIC: `‖X_cᵀ Y_c‖_F² / (n−1)²`.
pub fn hsic_loss(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let (n, _) = x.dims2()?;
    let (ny, _) = y.dims2()?;
    if n != ny {
        return Err(Error::shape(n, ny));
    }
    let xc = center_features(x)?;
    let yc = center_features(y)?;
    let cross = xc.t()?.matmul(&yc)?;
    Ok((cross.sqr()?.sum_all()? / ((n - 1) * (n - 1)) as f64)?)
}

/// Binary cross-entropy from logits, evaluated as
/// `c + log(e^{z−c} + e^{−c}) − m·z` with the shift `c = max(z, 0)` held constant.
pub fn modality_bce_loss(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    Ok(modality_bce_per_token(logits, labels)?.mean_all()?)
}

/// Per-token terms of [`modality_bce_loss`], shape `[n]`.
pub fn modality_bce_per_token(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let n = logits.dims1()?;
    if labels.dims1()? != n {
        return Err(Error::shape(n, labels.dims1()?));
    }
    if n == 0 {
        return Err(Error::invalid("modality classification loss needs at least one token"));
    }
    let c = logits.relu()?.detach();
    let neg_c = c.neg()?.exp()?;
    let softplus = ((logits - &c)?.exp()? + neg_c)?.log()?.add(&c)?;
    Ok((softplus - (labels * logits)?)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_scalar::<f64>()?)
}
