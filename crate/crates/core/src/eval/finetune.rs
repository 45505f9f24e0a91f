use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{pooled_rgb, require_labels};
use super::probe::{accuracy_and_confusion, stratified_split, ProbeResult};
use crate::data::ModalityPair;
use crate::error::{Error, Result};
use crate::model::layers::Linear;
use crate::model::{Builder, Encoder, ModelConfig, ParamStore, ENCODER_PREFIX};
use crate::pipeline::{lr_at, AdamW, AdamWParams, TrainConfig};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            warmup_epochs: 1,
            batch_size: 32,
            weight_decay: 0.05,
            seed: 0,
        }
    }
}

/// Whole-network training: the encoder is unfrozen and a linear head on the
/// mean-pooled RGB tokens is trained with the warmup + cosine schedule, on the
/// same stratified split the linear probe uses.
pub fn finetune_small(
    student: &ParamStore,
    model: &ModelConfig,
    pairs: &[ModalityPair],
    cfg: &FinetuneConfig,
    split_seed: u64,
) -> Result<ProbeResult> {
    let labels = require_labels(pairs)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.pair_id.clone()).collect();
    let (train, test) = stratified_split(&ids, &labels, split_seed)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if cfg.batch_size == 0 {
        return Err(Error::Config("finetune batch_size must be at least 1".into()));
    }

    let b = Builder::init(rng::stream(cfg.seed, &[tag::INIT]));
    let encoder = Encoder::new(&b.pp("encoder"), model)?;
    let head = Linear::new(&b.pp("head"), model.encoder_dim, classes)?;
    let store = b.into_store().expect("init builder yields a store");
    for name in store.names().iter().filter(|n| n.starts_with(ENCODER_PREFIX)) {
        store.set_values(name, &student.values(name)?)?;
    }

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = TrainConfig {
        base_lr: cfg.lr,
        warmup_lr: 0.0,
        warmup_epochs: cfg.warmup_epochs.min(cfg.epochs.saturating_sub(1)),
        total_epochs: cfg.epochs,
        ..TrainConfig::toy()
    };
    let mut optim = AdamW::new(
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        },
        &store,
    );
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ModalityPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let logits = head.forward(&pooled_rgb(&encoder, &batch, model)?)?;
            let targets: Vec<u32> = chunk.iter().map(|&i| labels[i] as u32).collect();
            let loss = cross_entropy(&logits, &targets)?;
            let grads = loss.backward()?;
            let mut flat = Vec::with_capacity(store.len());
            for (_, var) in store.iter() {
                flat.push(match grads.get(var.as_tensor()) {
                    Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
                    None => vec![0.0; var.as_tensor().elem_count()],
                });
            }
            optim.step(&store, &flat, lr_at(step, steps_per_epoch, &schedule))?;
            step += 1;
        }
    }

    let mut predicted = Vec::with_capacity(test.len());
    for chunk in test.chunks(32) {
        let batch: Vec<ModalityPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
        let logits = head.forward(&pooled_rgb(&encoder, &batch, model)?)?.detach();
        predicted.extend(logits.argmax(D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|c| c as usize));
    }
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let (accuracy, confusion) = accuracy_and_confusion(&truth, &predicted, classes);
    Ok(ProbeResult {
        accuracy,
        confusion,
        train_size: train.len(),
        test_size: test.len(),
        iterations: step,
    })
}

/// Mean softmax cross-entropy of `[n, C]` logits.
fn cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let n = targets.len();
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum(D::Minus1)?.log()?;
    let idx = Tensor::from_vec(targets.to_vec(), (n, 1), &candle_core::Device::Cpu)?;
    let picked = shifted.gather(&idx, 1)?.squeeze(1)?;
    Ok((lse - picked)?.mean_all()?)
}
