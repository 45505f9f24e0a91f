//! One micro-step of pretraining: masking and substitution on the host, then a
//! single autodiff graph through student, fusion, decoder and heads.

use candle_core::{Device, Tensor};
use rand::Rng;
use serde::Serialize;

use super::augment::augment_pair;
use super::config::{MaskingStrategy, NegativeSource, TrainConfig};
use crate::data::ModalityPair;
use crate::error::{Error, Result};
use crate::losses::{self, AlignMode, LossReport, LossWeights};
use crate::masking::{
    apply_cross_modal_substitution, assign_mask_probabilities, fuse_info_scores, patch_info_score_weighted,
    sample_masks, substitution_probability, uniform_probabilities, InfoScoreMap, MaskMap, MaskProbabilityMap,
};
use crate::model::layers::Stochastic;
use crate::model::{patch_tensor, AuxFeatureSource, Encoder, Network, Role, TokenBatch, TokenKind};
use crate::raster::{Modality, ModalityImage};
use crate::rng::{self, derive_seed, tag};

/// Everything the forward pass needs for one pair, already randomized.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub pair_id: String,
    /// Augmented RGB, the student's and the teacher's input.
    pub rgb: ModalityImage,
    /// Augmented other modality before substitution; the teacher's input.
    pub other: ModalityImage,
    /// Other modality after substitution; the student's input.
    pub other_student: ModalityImage,
    pub mask_rgb: MaskMap,
    pub mask_other: MaskMap,
    pub substituted: Vec<usize>,
    pub negative_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub samples: Vec<PreparedSample>,
    pub rho: f64,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mask_rates(&self) -> (f64, f64) {
        let n = self.samples.len().max(1) as f64;
        let r = self.samples.iter().map(|s| s.mask_rgb.masked_fraction()).sum::<f64>() / n;
        let o = self.samples.iter().map(|s| s.mask_other.masked_fraction()).sum::<f64>() / n;
        (r, o)
    }

    /// Splits into consecutive chunks of `size` samples sharing this batch's ρ.
    pub fn chunks(&self, size: usize) -> Vec<PreparedBatch> {
        self.samples
            .chunks(size.max(1))
            .map(|c| PreparedBatch {
                samples: c.to_vec(),
                rho: self.rho,
            })
            .collect()
    }
}

/// Keeps at least one visible patch: the highest-scoring masked position is
/// revealed when a draw masks the whole grid.
fn ensure_visible(mask: &mut MaskMap, scores: &InfoScoreMap) {
    if mask.masked.iter().all(|&m| m) {
        let best = (0..scores.scores.len())
            .max_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        mask.masked[best] = false;
    }
}

/// Steps (1)–(3) of a training step for the micro-batch starting at `step`:
/// augmentation, information scores, mask probabilities, masks, substitution.
/// Every random draw comes from a stream keyed by `(seed, step, sample)`.
pub fn prepare_batch(pairs: &[ModalityPair], step: u64, epoch: usize, cfg: &TrainConfig, image_size: usize) -> Result<PreparedBatch> {
    if pairs.is_empty() {
        return Err(Error::invalid("training batch is empty"));
    }
    let seed = cfg.seed;
    let mut augmented = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        if pair.size() != (image_size, image_size) {
            return Err(Error::Pair {
                pair_id: pair.pair_id.clone(),
                reason: format!("expected {image_size}x{image_size} pixels, found {:?}", pair.size()),
            });
        }
        augmented.push(if cfg.augment {
            augment_pair(pair, derive_seed(seed, &[tag::AUGMENT, step, i as u64]))?
        } else {
            pair.clone()
        });
    }

    let fused: Vec<InfoScoreMap> = augmented
        .iter()
        .map(|p| {
            fuse_info_scores(
                &patch_info_score_weighted(&p.rgb, cfg.score_weights),
                &patch_info_score_weighted(&p.other, cfg.score_weights),
            )
        })
        .collect::<Result<_>>()?;
    let probs: Vec<MaskProbabilityMap> = match cfg.masking {
        MaskingStrategy::InformationAware => assign_mask_probabilities(&fused)?,
        MaskingStrategy::Uniform => fused
            .iter()
            .map(|s| uniform_probabilities(s.rows, s.cols, cfg.uniform_mask_prob))
            .collect(),
    };

    let rho = substitution_probability(epoch, &cfg.substitution);
    let mut samples = Vec::with_capacity(pairs.len());
    for (i, pair) in augmented.into_iter().enumerate() {
        let key = |t: u64| derive_seed(seed, &[t, step, i as u64]);
        let mut mask_rgb = sample_masks(&probs[i], key(tag::MASK_RGB));
        let mut mask_other = sample_masks(&probs[i], key(tag::MASK_OTHER));
        ensure_visible(&mut mask_rgb, &fused[i]);
        ensure_visible(&mut mask_other, &fused[i]);
        let sub = apply_cross_modal_substitution(&pair.other, &mask_other, rho, key(tag::SUBSTITUTE))?;
        samples.push(PreparedSample {
            pair_id: pair.pair_id,
            rgb: pair.rgb,
            other: pair.other,
            other_student: sub.image,
            mask_rgb,
            mask_other,
            substituted: sub.substituted,
            negative_seed: key(tag::NEGATIVES),
        });
    }
    Ok(PreparedBatch { samples, rho })
}

/// The four loss terms and their weighted sum, still attached to the graph.
pub struct StepLosses {
    pub rec: Tensor,
    pub align: Tensor,
    pub hsic: Tensor,
    pub cls: Tensor,
    pub total: Tensor,
}

impl StepLosses {
    pub fn report(&self, weights: &LossWeights) -> Result<LossReport> {
        let v = |t: &Tensor| losses::scalar(t);
        LossReport::new(v(&self.rec)?, v(&self.align)?, v(&self.hsic)?, v(&self.cls)?, weights)
    }
}

fn weights_tensor(w: Vec<f64>) -> Result<Tensor> {
    let n = w.len();
    Ok(Tensor::from_vec(w, n, &Device::Cpu)?)
}

fn zero() -> Result<Tensor> {
    Ok(Tensor::new(0f64, &Device::Cpu)?)
}

/// Steps (4)–(6): encode, fuse, decode, predict and evaluate every loss.
///
/// Each term is a per-sample mean averaged over the batch, so a batch of 2B
/// gives the same value as the mean of its two halves.
pub fn forward_losses(
    net: &Network,
    teacher: &Encoder,
    batch: &PreparedBatch,
    cfg: &TrainConfig,
    ctx: &mut Option<&mut Stochastic>,
) -> Result<StepLosses> {
    let bsz = batch.len();
    if bsz == 0 {
        return Err(Error::invalid("training batch is empty"));
    }
    let ps = net.cfg.patch_size;
    let n_patches = net.cfg.num_patches();
    let imgs = |f: fn(&PreparedSample) -> &ModalityImage| batch.samples.iter().map(f).collect::<Vec<_>>();
    let p_rgb = patch_tensor(&imgs(|s| &s.rgb), ps)?;
    let p_other_s = patch_tensor(&imgs(|s| &s.other_student), ps)?;
    let p_other_t = patch_tensor(&imgs(|s| &s.other), ps)?;

    let vis_rgb: Vec<Vec<usize>> = batch.samples.iter().map(|s| s.mask_rgb.visible_positions()).collect();
    let vis_other: Vec<Vec<usize>> = batch.samples.iter().map(|s| s.mask_other.visible_positions()).collect();
    let masked_rgb: Vec<Vec<usize>> = batch.samples.iter().map(|s| s.mask_rgb.masked_positions()).collect();
    let masked_other: Vec<Vec<usize>> = batch.samples.iter().map(|s| s.mask_other.masked_positions()).collect();
    let all: Vec<Vec<usize>> = vec![(0..n_patches).collect(); bsz];

    let enc = &net.encoder;
    let s_rgb = enc.encode_batch(&enc.embed_patches(&p_rgb, Modality::Rgb)?, &vis_rgb, TokenKind::Rgb, Role::Student, ctx)?;
    let s_other = enc.encode_batch(
        &enc.embed_patches(&p_other_s, Modality::Other)?,
        &vis_other,
        TokenKind::Other,
        Role::Student,
        ctx,
    )?;
    let t_rgb = teacher.encode_batch(&teacher.embed_patches(&p_rgb, Modality::Rgb)?, &all, TokenKind::Rgb, Role::Teacher, &mut None)?;
    let t_other = teacher.encode_batch(
        &teacher.embed_patches(&p_other_t, Modality::Other)?,
        &all,
        TokenKind::Other,
        Role::Teacher,
        &mut None,
    )?;

    let fused = net.fusion.fuse_batch(&s_rgb, &s_other, ctx)?;
    let rec = reconstruction_term(net, &fused, &t_rgb, &t_other, &masked_rgb, &masked_other, ctx)?;

    let (aux_rgb, aux_other) = match net.cfg.aux_features {
        AuxFeatureSource::Encoder => (s_rgb.tokens.clone(), s_other.tokens.clone()),
        AuxFeatureSource::Fusion => (net.fusion.project(&s_rgb)?, net.fusion.project(&s_other)?),
    };
    let aux_rgb = TokenBatch {
        tokens: aux_rgb,
        positions: s_rgb.positions.clone(),
        kind: TokenKind::Rgb,
    };
    let aux_other = TokenBatch {
        tokens: aux_other,
        positions: s_other.positions.clone(),
        kind: TokenKind::Other,
    };
    let align = alignment_term(batch, &aux_rgb, &aux_other, cfg)?;
    let hsic = hsic_term(&aux_rgb, &aux_other)?;
    let cls = classification_term(net, &aux_rgb, &aux_other)?;
    let total = losses::total_loss_tensor([&rec, &align, &hsic, &cls], &cfg.loss_weights)?;
    Ok(StepLosses {
        rec,
        align,
        hsic,
        cls,
        total,
    })
}

fn reconstruction_term(
    net: &Network,
    fused: &TokenBatch,
    t_rgb: &TokenBatch,
    t_other: &TokenBatch,
    masked_rgb: &[Vec<usize>],
    masked_other: &[Vec<usize>],
    ctx: &mut Option<&mut Stochastic>,
) -> Result<Tensor> {
    let bsz = fused.batch_size();
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (modality, masked, teacher) in [(Modality::Rgb, masked_rgb, t_rgb), (Modality::Other, masked_other, t_other)] {
        if masked.iter().all(Vec::is_empty) {
            continue;
        }
        let decoded = net.decoder.decode_batch(fused, masked, modality, ctx)?;
        let pred = net.predictor.forward(&decoded.tokens)?;
        let mut pred_rows = Vec::new();
        let mut target_rows = Vec::new();
        for (b, positions) in masked.iter().enumerate() {
            let count = masked_rgb[b].len() + masked_other[b].len();
            for (slot, &p) in positions.iter().enumerate() {
                pred_rows.push((b, slot));
                // the teacher sees every position in grid order
                target_rows.push((b, p));
                weights.push(1.0 / (bsz * count) as f64);
            }
        }
        preds.push(crate::model::gather_rows(&pred, &pred_rows)?);
        targets.push(teacher.gather(&target_rows)?);
    }
    if weights.is_empty() {
        log::warn!("no masked patch in either modality; reconstruction term skipped");
        return zero();
    }
    let pred = Tensor::cat(&preds, 0)?;
    let target = Tensor::cat(&targets, 0)?.detach();
    let per_row = (pred - target)?.sqr()?.sum(1)?;
    Ok((per_row * weights_tensor(weights)?)?.sum_all()?)
}

/// Symmetric cross-modal contrast at positions visible in both modalities.
/// Negatives for a query are visible tokens of either modality at other
/// positions of the same sample and, with batch negatives, every token of the
/// other samples.
fn alignment_term(batch: &PreparedBatch, rgb: &TokenBatch, other: &TokenBatch, cfg: &TrainConfig) -> Result<Tensor> {
    let bsz = batch.len();
    let (lr, lo, d) = (rgb.slots(), other.slots(), rgb.dim());
    // rows of the flattened table: rgb slots first, then other slots
    let table = Tensor::cat(
        &[&rgb.tokens.reshape((bsz * lr, d))?, &other.tokens.reshape((bsz * lo, d))?],
        0,
    )?;
    let rgb_row = |b: usize, s: usize| (b * lr + s) as u32;
    let other_row = |b: usize, s: usize| (bsz * lr + b * lo + s) as u32;
    let k = cfg.num_negatives;
    let tokens_of = |b: usize, skip: Option<usize>| -> Vec<u32> {
        let keep = |q: usize| skip != Some(q);
        rgb.positions[b]
            .iter()
            .enumerate()
            .filter(|&(_, &q)| keep(q))
            .map(|(s, _)| rgb_row(b, s))
            .chain(other.positions[b].iter().enumerate().filter(|&(_, &q)| keep(q)).map(|(s, _)| other_row(b, s)))
            .collect()
    };
    let foreign: Vec<Vec<u32>> = (0..bsz)
        .map(|b| match cfg.negative_source {
            NegativeSource::Sample => Vec::new(),
            NegativeSource::Batch => (0..bsz).filter(|&o| o != b).flat_map(|o| tokens_of(o, None)).collect(),
        })
        .collect();

    let (mut q_idx, mut p_idx, mut n_idx, mut weights) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (b, sample) in batch.samples.iter().enumerate() {
        let mut rng = rng::stream(sample.negative_seed, &[]);
        let shared: Vec<(usize, usize, usize)> = rgb.positions[b]
            .iter()
            .enumerate()
            .filter_map(|(sr, &p)| other.slot_of(b, p).map(|so| (p, sr, so)))
            .collect();
        let mut queries = Vec::new();
        for &(p, sr, so) in &shared {
            let mut candidates = tokens_of(b, Some(p));
            candidates.extend_from_slice(&foreign[b]);
            if candidates.is_empty() {
                continue;
            }
            for (q, pos) in [(rgb_row(b, sr), other_row(b, so)), (other_row(b, so), rgb_row(b, sr))] {
                let negs: Vec<u32> = (0..k).map(|_| candidates[rng.gen_range(0..candidates.len())]).collect();
                queries.push((q, pos, negs));
            }
        }
        let w = 1.0 / (bsz * queries.len().max(1)) as f64;
        for (q, pos, negs) in queries {
            q_idx.push(q);
            p_idx.push(pos);
            n_idx.extend(negs);
            weights.push(w);
        }
    }
    let n = q_idx.len();
    if n == 0 {
        return zero();
    }
    let sel = |idx: Vec<u32>| -> Result<Tensor> {
        let len = idx.len();
        Ok(table.index_select(&Tensor::from_vec(idx, len, &Device::Cpu)?, 0)?)
    };
    let queries = sel(q_idx)?;
    let positives = sel(p_idx)?;
    let negatives = sel(n_idx)?.reshape((n, k, d))?;
    let mode = if cfg.strict_paper_align {
        AlignMode::StrictPaper
    } else {
        AlignMode::Standard
    };
    let per_query = losses::alignment_per_query(&queries, &positives, &negatives, cfg.tau, mode)?;
    Ok((per_query * weights_tensor(weights)?)?.sum_all()?)
}

/// Redundancy penalty per sample over positions visible in both modalities,
/// averaged over the batch; samples with fewer than two shared positions add 0.
fn hsic_term(rgb: &TokenBatch, other: &TokenBatch) -> Result<Tensor> {
    let bsz = rgb.batch_size();
    let mut total = zero()?;
    for b in 0..bsz {
        let (mut rows_r, mut rows_o) = (Vec::new(), Vec::new());
        for (sr, &p) in rgb.positions[b].iter().enumerate() {
            if let Some(so) = other.slot_of(b, p) {
                rows_r.push((b, sr));
                rows_o.push((b, so));
            }
        }
        if rows_r.len() < 2 {
            continue;
        }
        let h = losses::hsic_loss(&rgb.gather(&rows_r)?, &other.gather(&rows_o)?)?;
        total = (total + (h / bsz as f64)?)?;
    }
    Ok(total)
}

/// Modality pseudo-labels on every visible token: RGB → 0, other → 1.
fn classification_term(net: &Network, rgb: &TokenBatch, other: &TokenBatch) -> Result<Tensor> {
    let bsz = rgb.batch_size();
    let (mut rows_r, mut rows_o, mut weights, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for b in 0..bsz {
        let count = rgb.positions[b].len() + other.positions[b].len();
        let w = 1.0 / (bsz * count) as f64;
        rows_r.extend((0..rgb.positions[b].len()).map(|s| (b, s)));
        rows_o.extend((0..other.positions[b].len()).map(|s| (b, s)));
        weights.extend(std::iter::repeat(w).take(rgb.positions[b].len()));
        labels.extend(std::iter::repeat(Modality::Rgb.label() as f64).take(rgb.positions[b].len()));
    }
    for b in 0..bsz {
        let count = rgb.positions[b].len() + other.positions[b].len();
        let w = 1.0 / (bsz * count) as f64;
        weights.extend(std::iter::repeat(w).take(other.positions[b].len()));
        labels.extend(std::iter::repeat(Modality::Other.label() as f64).take(other.positions[b].len()));
    }
    let tokens = Tensor::cat(&[&rgb.gather(&rows_r)?, &other.gather(&rows_o)?], 0)?;
    let logits = net.modality_head.logits(&tokens)?;
    let per = losses::modality_bce_per_token(&logits, &weights_tensor(labels)?)?;
    Ok((per * weights_tensor(weights)?)?.sum_all()?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub rho: f64,
    pub mask_rate_rgb: f64,
    pub mask_rate_other: f64,
    pub rec: f64,
    pub align: f64,
    pub hsic: f64,
    pub cls: f64,
    pub total: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,epoch,lr,rho,mask_rate_rgb,mask_rate_other,rec,align,hsic,cls,total";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.lr,
            self.rho,
            self.mask_rate_rgb,
            self.mask_rate_other,
            self.rec,
            self.align,
            self.hsic,
            self.cls,
            self.total
        )
    }
}
