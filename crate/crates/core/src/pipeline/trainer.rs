//! Student, teacher and optimizer state plus the micro-step loop with
//! gradient accumulation and EMA updates.

use super::checkpoint::{CheckpointRecord, OptimizerState};
use super::config::ExperimentConfig;
use super::optim::{AdamW, AdamWParams};
use super::schedule::lr_at;
use super::step::{forward_losses, prepare_batch, MetricsRow, PreparedBatch};
use crate::data::ModalityPair;
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::model::archive::NamedTensor;
use crate::model::layers::Stochastic;
use crate::model::{cosine_momentum, encoder_from_map, EmaState, Encoder, Network, ParamStore, ENCODER_PREFIX};
use crate::rng::{self, tag};

pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub net: Network,
    pub store: ParamStore,
    pub teacher: Encoder,
    pub ema: EmaState,
    pub optim: AdamW,
    /// Micro-batches consumed so far.
    pub step: u64,
    /// Optimizer updates applied so far.
    pub opt_step: u64,
    /// Optimizer updates per epoch, used by the learning-rate schedule.
    pub steps_per_epoch: usize,
    pending: Option<Vec<Vec<f64>>>,
    pending_count: usize,
}

impl Trainer {
    /// Fresh student from the `(seed, INIT)` stream; the teacher starts as a copy.
    pub fn new(cfg: &ExperimentConfig, steps_per_epoch: usize) -> Result<Self> {
        cfg.validate()?;
        let (net, store) = Network::init(&cfg.model, rng::stream(cfg.train.seed, &[tag::INIT]))?;
        let ema = EmaState::from_store(&store, ENCODER_PREFIX, cfg.train.ema_momentum)?;
        Self::assemble(cfg, net, store, ema, steps_per_epoch)
    }

    fn assemble(cfg: &ExperimentConfig, net: Network, store: ParamStore, ema: EmaState, steps_per_epoch: usize) -> Result<Self> {
        let teacher = encoder_from_map(&cfg.model, &ema.to_map()?)?;
        let t = &cfg.train;
        let optim = AdamW::new(
            AdamWParams {
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                eps: 1e-8,
                weight_decay: t.weight_decay,
            },
            &store,
        );
        Ok(Self {
            cfg: cfg.clone(),
            net,
            store,
            teacher,
            ema,
            optim,
            step: 0,
            opt_step: 0,
            steps_per_epoch: steps_per_epoch.max(1),
            pending: None,
            pending_count: 0,
        })
    }

    pub fn from_checkpoint(record: &CheckpointRecord, steps_per_epoch: usize) -> Result<Self> {
        let cfg = &record.config;
        let store = record.student_store()?;
        let net = Network::from_store(&cfg.model, &store)?;
        let mut ema = EmaState::from_store(&store, ENCODER_PREFIX, record.ema_momentum)?;
        ema.teacher_params = flatten_section(&record.teacher, &ema.names)?;
        let mut trainer = Self::assemble(cfg, net, store, ema, steps_per_epoch)?;
        trainer.optim.t = record.optimizer.t;
        trainer.optim.m = record.optimizer.m.iter().map(|t| t.data.clone()).collect();
        trainer.optim.v = record.optimizer.v.iter().map(|t| t.data.clone()).collect();
        trainer.step = record.step;
        trainer.opt_step = record.opt_step;
        Ok(trainer)
    }

    pub fn total_opt_steps(&self) -> usize {
        self.cfg.train.total_epochs * self.steps_per_epoch
    }

    pub fn current_lr(&self) -> f64 {
        lr_at(self.opt_step as usize, self.steps_per_epoch, &self.cfg.train)
    }

    /// True when no gradients are waiting for an optimizer update.
    pub fn at_update_boundary(&self) -> bool {
        self.pending_count == 0
    }

    /// Randomizes `pairs` for the current step and trains on them.
    pub fn train_step(&mut self, pairs: &[ModalityPair], epoch: usize) -> Result<MetricsRow> {
        let batch = prepare_batch(pairs, self.step, epoch, &self.cfg.train, self.cfg.model.image_size)?;
        self.train_prepared(&batch, epoch)
    }

    /// Forward, backward and (every `grad_accum_steps` calls) an optimizer
    /// update followed by the teacher's EMA update.
    pub fn train_prepared(&mut self, batch: &PreparedBatch, epoch: usize) -> Result<MetricsRow> {
        let m = &self.cfg.model;
        let mut stochastic = Stochastic::new(
            rng::stream(self.cfg.train.seed, &[tag::DROPOUT, self.step]),
            m.dropout,
            m.drop_path,
        );
        let losses = forward_losses(&self.net, &self.teacher, batch, &self.cfg.train, &mut Some(&mut stochastic))?;
        let report = losses.report(&self.cfg.train.loss_weights)?;
        check_finite(&report)?;

        let grads = losses.total.backward()?;
        let mut flat = Vec::with_capacity(self.store.len());
        for (_, var) in self.store.iter() {
            flat.push(match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
                None => vec![0.0; var.as_tensor().elem_count()],
            });
        }
        match &mut self.pending {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(flat) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            None => self.pending = Some(flat),
        }
        self.pending_count += 1;

        let lr = self.current_lr();
        let (mask_rate_rgb, mask_rate_other) = batch.mask_rates();
        let row = MetricsRow {
            step: self.step,
            epoch,
            lr,
            rho: batch.rho,
            mask_rate_rgb,
            mask_rate_other,
            rec: report.rec,
            align: report.align,
            hsic: report.hsic,
            cls: report.cls,
            total: report.total,
        };
        if self.pending_count == self.cfg.train.grad_accum_steps {
            self.apply_update(lr)?;
        }
        self.step += 1;
        Ok(row)
    }

    fn apply_update(&mut self, lr: f64) -> Result<()> {
        let mut grads = self.pending.take().expect("pending gradients exist at an update");
        let k = self.pending_count as f64;
        for g in grads.iter_mut().flatten() {
            *g /= k;
        }
        self.pending_count = 0;
        self.optim.step(&self.store, &grads, lr)?;
        let t = &self.cfg.train;
        self.ema.momentum = cosine_momentum(t.ema_momentum, t.ema_momentum_final, self.opt_step as usize, self.total_opt_steps());
        let student = self.ema.student_flat(&self.store)?;
        self.ema.update_in_place(&student)?;
        self.teacher = encoder_from_map(&self.cfg.model, &self.ema.to_map()?)?;
        self.opt_step += 1;
        Ok(())
    }

    /// Snapshot for checkpointing; only valid at an update boundary.
    pub fn record(&self, epoch: usize) -> Result<CheckpointRecord> {
        if !self.at_update_boundary() {
            return Err(Error::invalid("checkpoints are taken between optimizer updates"));
        }
        let mut student = Vec::with_capacity(self.store.len());
        for (name, var) in self.store.iter() {
            student.push(NamedTensor::new(name, var.as_tensor().dims().to_vec(), self.store.values(name)?));
        }
        let mut teacher = Vec::with_capacity(self.ema.names.len());
        let mut offset = 0;
        for (name, shape) in self.ema.names.iter().zip(&self.ema.shapes) {
            let n: usize = shape.iter().product();
            teacher.push(NamedTensor::new(name, shape.clone(), self.ema.teacher_params[offset..offset + n].to_vec()));
            offset += n;
        }
        let moments = |m: &[Vec<f64>]| {
            student
                .iter()
                .zip(m)
                .map(|(s, v)| NamedTensor::new(&s.name, s.shape.clone(), v.clone()))
                .collect::<Vec<_>>()
        };
        Ok(CheckpointRecord {
            step: self.step,
            opt_step: self.opt_step,
            epoch,
            optimizer: OptimizerState {
                t: self.optim.t,
                m: moments(&self.optim.m),
                v: moments(&self.optim.v),
            },
            student,
            teacher,
            ema_momentum: self.ema.momentum,
            seed: self.cfg.train.seed,
            config: self.cfg.clone(),
        })
    }
}

fn flatten_section(tensors: &[NamedTensor], names: &[String]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (t, name) in tensors.iter().zip(names) {
        if &t.name != name {
            return Err(Error::invalid(format!("teacher tensor {} where {name} was expected", t.name)));
        }
        out.extend_from_slice(&t.data);
    }
    Ok(out)
}

fn check_finite(report: &LossReport) -> Result<()> {
    // components were checked by name when the report was built
    if report.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("total loss ({})", report.total)))
    }
}
