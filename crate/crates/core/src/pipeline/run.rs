//! Epoch loop: shuffling, micro-batching, metrics log and checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::checkpoint::{load_checkpoint_expecting, save_checkpoint, CheckpointRecord};
use super::config::ExperimentConfig;
use super::step::MetricsRow;
use super::trainer::Trainer;
use crate::data::ModalityPair;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume_from: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many optimizer updates have run.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub record: CheckpointRecord,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    /// Rows produced by this invocation.
    pub rows: Vec<MetricsRow>,
}

/// `(micro-batches per epoch, optimizer updates per epoch)`. Trailing samples
/// that do not fill a whole accumulation window are dropped each epoch.
pub fn epoch_layout(dataset_len: usize, cfg: &ExperimentConfig) -> Result<(usize, usize)> {
    let t = &cfg.train;
    let updates = dataset_len / t.batch_size / t.grad_accum_steps;
    if updates == 0 {
        return Err(Error::Config(format!(
            "{dataset_len} pairs cannot fill one update of {} micro-batches of {}",
            t.grad_accum_steps, t.batch_size
        )));
    }
    Ok((updates * t.grad_accum_steps, updates))
}

pub fn checkpoint_path(out_dir: &Path, opt_step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{opt_step:06}.mmpt"))
}

pub fn metrics_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.csv")
}

/// Epoch order from the `(seed, SHUFFLE, epoch)` stream.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order
}

/// Rewrites the log keeping only rows logged before `step`, so a resumed run
/// appends exactly what an uninterrupted one would have written.
fn reset_metrics(path: &Path, step: u64) -> Result<()> {
    let mut out = String::from(MetricsRow::HEADER);
    out.push('\n');
    if step > 0 {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines().skip(1) {
            let row_step: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
            if row_step < step {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn save(trainer: &Trainer, epoch: usize, out_dir: &Path) -> Result<(CheckpointRecord, PathBuf)> {
    let record = trainer.record(epoch)?;
    let path = checkpoint_path(out_dir, trainer.opt_step);
    save_checkpoint(&record, &path)?;
    log::info!("checkpoint {}", path.display());
    Ok((record, path))
}

pub fn run_pretraining(cfg: &ExperimentConfig, dataset: &[ModalityPair], opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let (micro_per_epoch, steps_per_epoch) = epoch_layout(dataset.len(), cfg)?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let metrics_csv = metrics_path(&opts.out_dir);

    let mut trainer = match &opts.resume_from {
        Some(path) => {
            let record = load_checkpoint_expecting(path, &cfg.model)?;
            if record.config != *cfg {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            Trainer::from_checkpoint(&record, steps_per_epoch)?
        }
        None => Trainer::new(cfg, steps_per_epoch)?,
    };
    reset_metrics(&metrics_csv, trainer.step)?;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&metrics_csv)
        .map_err(|e| Error::io(&metrics_csv, e))?;

    let t = &cfg.train;
    let total_micro = (t.total_epochs * micro_per_epoch) as u64;
    let mut last = if trainer.step == 0 { Some(save(&trainer, 0, &opts.out_dir)?) } else { None };
    let mut rows = Vec::new();

    while trainer.step < total_micro {
        if opts.stop_after.is_some_and(|s| trainer.opt_step >= s) {
            break;
        }
        let epoch = (trainer.step / micro_per_epoch as u64) as usize;
        let within = (trainer.step % micro_per_epoch as u64) as usize;
        let order = epoch_order(dataset.len(), t.seed, epoch);
        let batch: Vec<ModalityPair> = order[within * t.batch_size..(within + 1) * t.batch_size]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect();
        let row = trainer.train_step(&batch, epoch)?;
        writeln!(log, "{}", row.csv_line()).map_err(|e| Error::io(&metrics_csv, e))?;
        rows.push(row);

        if trainer.at_update_boundary() {
            let next_epoch = (trainer.step / micro_per_epoch as u64) as usize;
            let due = t.checkpoint_every > 0 && trainer.opt_step % t.checkpoint_every as u64 == 0;
            let stopping = opts.stop_after.is_some_and(|s| trainer.opt_step >= s);
            if due || stopping || trainer.step == total_micro {
                last = Some(save(&trainer, next_epoch, &opts.out_dir)?);
            }
        }
    }
    let (record, checkpoint) = match last {
        Some(saved) => saved,
        None => save(&trainer, (trainer.step / micro_per_epoch as u64) as usize, &opts.out_dir)?,
    };
    Ok(RunSummary {
        record,
        checkpoint,
        metrics_csv,
        rows,
    })
}
